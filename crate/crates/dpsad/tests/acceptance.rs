//! Acceptance criteria A1-A9. Each test prints one PASS/FAIL line.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

use dpsad_core::autodiff::Tape;
use dpsad_core::dataset::LabeledDataset;
use dpsad_core::diffusion::{
    forward_closed_form, guided_mean, posterior_mean_coefs, sample_reverse, standard_normal, Conditioning, Denoiser,
    GuidanceConfig, NoiseSchedule,
};
use dpsad_core::eval::{
    ablation_suite, convergence_check, median_bandwidth, mmd_unbiased, simulate_quadratic_bowl, AblationTask,
    ClassifierConfig, LossVariant, NoiseModel, QuadraticBowl,
};
use dpsad_core::nn::{mlp_on_tape, per_example_gradients, xavier_init, Activation, MlpArch, ParamSet};
use dpsad_core::privacy::{clip, l2_sensitivity, rdp_to_dp, total_epsilon, PrivacyParams, RdpPoint};
use dpsad_core::rng::stream;
use dpsad_core::tensor::Tensor;
use dpsad_core::toy::eight_gaussians;
use dpsad_core::training::{
    sanitized_gradient, step_grads_at, train_teacher, LossWeights, ModelTriple, NoiseSpec, StepDraw, StudentTrainer,
    TeacherPlan, TrainPlan,
};

static REPORTED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

fn verdict(id: &str, pass: bool, detail: String) {
    REPORTED.store(true, std::sync::atomic::Ordering::SeqCst);
    println!("{id} {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{id} failed: {detail}");
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, fn()); 9] = [
        ("A1", a1_accountant_matches_high_precision_oracle),
        ("A2", a2_clip_and_sensitivity_invariants),
        ("A3", a3_autodiff_matches_finite_differences_and_split_identity),
        ("A4", a4_random_step_gradient_is_unbiased),
        ("A5", a5_teacher_matches_toy_distribution),
        ("A6", a6_private_student_tracks_teacher),
        ("A7", a7_ablation_ordering),
        ("A8", a8_convergence_floor),
        ("A9", a9_pipeline_is_deterministic),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.eq_ignore_ascii_case(f)) {
            continue;
        }
        REPORTED.store(false, std::sync::atomic::Ordering::SeqCst);
        if std::panic::catch_unwind(run).is_err() {
            if !REPORTED.load(std::sync::atomic::Ordering::SeqCst) {
                println!("{id} FAIL aborted before measuring");
            }
            failed += 1;
        }
    }
    if failed == 0 { std::process::ExitCode::SUCCESS } else { std::process::ExitCode::FAILURE }
}

// ---------------------------------------------------------------- A1 oracle

/// Fixed-point reals with `PREC` fractional bits.
const PREC: usize = 320;

#[derive(Clone)]
struct Fx(BigInt);

impl Fx {
    fn from_f64(x: f64) -> Fx {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fx(BigInt::zero());
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1 } else { 1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        let m = BigInt::from(mant) * sign;
        let shift = PREC as i64 + e;
        Fx(if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize })
    }

    fn int(n: u64) -> Fx {
        Fx(BigInt::from(n) << PREC)
    }

    fn one() -> Fx {
        Fx(BigInt::one() << PREC)
    }

    fn add(&self, o: &Fx) -> Fx {
        Fx(&self.0 + &o.0)
    }

    fn sub(&self, o: &Fx) -> Fx {
        Fx(&self.0 - &o.0)
    }

    fn mul(&self, o: &Fx) -> Fx {
        Fx((&self.0 * &o.0) >> PREC)
    }

    fn div(&self, o: &Fx) -> Fx {
        Fx((&self.0 << PREC) / &o.0)
    }

    fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap() * 2f64.powi(-(PREC as i32))
    }

    /// `2 atanh(z)` by its odd power series; needs `|z| < 1/2` for speed.
    fn two_atanh(z: &Fx) -> Fx {
        let z2 = z.mul(z);
        let mut power = z.clone();
        let mut sum = Fx(BigInt::zero());
        let mut k = 1u64;
        while !power.0.is_zero() {
            sum = sum.add(&Fx(&power.0 / BigInt::from(k)));
            power = power.mul(&z2);
            k += 2;
        }
        Fx(sum.0 * 2)
    }

    fn ln(&self) -> Fx {
        assert!(self.0.is_positive());
        let k = self.0.bits() as i64 - PREC as i64 - 1;
        let y = if k >= 0 { Fx(&self.0 >> k as usize) } else { Fx(&self.0 << (-k) as usize) };
        let one = Fx::one();
        let ln_y = Fx::two_atanh(&y.sub(&one).div(&y.add(&one)));
        let ln2 = Fx::two_atanh(&one.div(&Fx::int(3)));
        ln_y.add(&Fx(ln2.0 * k))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn a1_accountant_matches_high_precision_oracle() {
    let mut rng = stream(2024, 1);
    let log_uniform = |rng: &mut dpsad_core::rng::StreamRng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut worst = (0.0f64, 0.0f64);
    let mut cases = Vec::new();
    for _ in 0..50 {
        let p = PrivacyParams {
            clip: log_uniform(&mut rng, 1e-6, 10.0),
            sigma: log_uniform(&mut rng, 1e-2, 1e4),
            batch_size: rng.random_range(1..=512),
            iterations: rng.random_range(1..=100_000),
            steps: rng.random_range(1..=1000),
            param_count: rng.random_range(1..=1_000_000),
            delta: log_uniform(&mut rng, 1e-9, 0.5),
        };
        let q = rng.random_range(1.01..512.0);
        let rdp = p.rdp_epsilon(q).unwrap();
        let dp = rdp_to_dp(RdpPoint { order: q, epsilon: rdp }, p.delta).unwrap();

        let (c, sigma, qf, delta) = (Fx::from_f64(p.clip), Fx::from_f64(p.sigma), Fx::from_f64(q), Fx::from_f64(p.delta));
        let count = Fx::int(2 * p.param_count * p.batch_size * p.iterations);
        let oracle_rdp = c.mul(&c).mul(&count).mul(&qf).div(&sigma.mul(&sigma));
        let qm1 = qf.sub(&Fx::one());
        let oracle_dp = oracle_rdp.add(&qm1.div(&qf).ln()).sub(&delta.ln().add(&qf.ln()).div(&qm1));

        worst.0 = worst.0.max(rel(rdp, oracle_rdp.to_f64()));
        worst.1 = worst.1.max(rel(dp, oracle_dp.to_f64()));
        cases.push(p);
    }
    let start = Instant::now();
    for p in &cases {
        total_epsilon(p).unwrap();
    }
    let elapsed = start.elapsed();
    verdict(
        "A1",
        worst.0 <= 1e-9 && worst.1 <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("max rel err rdp={:.2e} dp={:.2e}; 50 full accountings in {elapsed:?}", worst.0, worst.1),
    );
}

// ---------------------------------------------------------------- A2

fn a2_clip_and_sensitivity_invariants() {
    let mut rng = stream(2024, 2);
    let mut clip_failures = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..64);
        let scale = 10f64.powf(rng.random_range(-8.0..6.0));
        let v: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let c = 10f64.powf(rng.random_range(-6.0..1.0));
        let out = clip(&v, c).unwrap();
        if out.iter().map(|x| x * x).sum::<f64>().sqrt() > c + 1e-12 {
            clip_failures += 1;
        }
    }
    let mut sens_failures = 0;
    for _ in 0..1_000 {
        let (b, s) = (rng.random_range(1..16), rng.random_range(1..32));
        let c = 10f64.powf(rng.random_range(-6.0..1.0));
        let scale = 10f64.powf(rng.random_range(-8.0..4.0));
        let mut rows: Vec<Vec<f64>> =
            (0..b).map(|_| (0..s).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).collect();
        let clipped_sum = |rows: &[Vec<f64>]| {
            let mut acc = vec![0.0; s];
            for r in rows {
                acc.iter_mut().zip(clip(r, c).unwrap()).for_each(|(a, v)| *a += v);
            }
            acc
        };
        let before = clipped_sum(&rows);
        let i = rng.random_range(0..b);
        rows[i] = (0..s).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let after = clipped_sum(&rows);
        let d = before.iter().zip(&after).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d > l2_sensitivity(c, s as u64).unwrap() + 1e-12 {
            sens_failures += 1;
        }
    }
    verdict(
        "A2",
        clip_failures == 0 && sens_failures == 0,
        format!("clip failures {clip_failures}/10000, sensitivity failures {sens_failures}/1000"),
    );
}

// ---------------------------------------------------------------- A3

fn random_arch(rng: &mut dpsad_core::rng::StreamRng) -> MlpArch {
    let depth = rng.random_range(0..3);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
    let act = [Activation::Silu, Activation::Tanh, Activation::Identity][rng.random_range(0..3)];
    MlpArch::new(rng.random_range(1..5), &hidden, rng.random_range(1..4), act)
}

fn net_loss(arch: &MlpArch, tape: &mut Tape, bound: &dpsad_core::nn::BoundParams, x: dpsad_core::autodiff::NodeId) -> dpsad_core::Result<dpsad_core::autodiff::NodeId> {
    let y = mlp_on_tape(tape, arch, bound, x)?;
    let t = tape.tanh(y);
    let sq = tape.square(t);
    Ok(tape.sum_all(sq))
}

fn eval_loss(arch: &MlpArch, params: &ParamSet, x: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xi = tape.leaf(x.clone());
    let l = net_loss(arch, &mut tape, &bound, xi).unwrap();
    tape.value(l).data()[0]
}

fn a3_autodiff_matches_finite_differences_and_split_identity() {
    let mut rng = stream(2024, 3);
    let (mut worst_fd, mut worst_split) = (0.0f64, 0.0f64);
    for net in 0..20 {
        let arch = random_arch(&mut rng);
        let params = xavier_init(&arch.layer_dims(), 100 + net).unwrap();
        let batch = standard_normal(&mut rng, 3, arch.input_dim);
        let per = per_example_gradients(&params, &batch, |t, b, x| net_loss(&arch, t, b, x)).unwrap();
        let flat = params.flatten();
        for i in 0..batch.rows() {
            let x = batch.row_tensor(i);
            let h = 1e-5;
            let fd: Vec<f64> = (0..flat.len())
                .map(|j| {
                    let at = |d: f64| {
                        let mut f = flat.clone();
                        f[j] += d;
                        eval_loss(&arch, &params.unflatten(&f).unwrap(), &x)
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect();
            let g = per.row(i);
            let num = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
            worst_fd = worst_fd.max(num / den);
        }

        // clip-free split: gradient at the network output, then pushed to parameters
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(batch.clone());
        let y = mlp_on_tape(&mut tape, &arch, &bound, x).unwrap();
        let t = tape.tanh(y);
        let sq = tape.square(t);
        let loss = tape.sum_all(sq);
        let direct = bound.gradient(&tape, loss).unwrap();
        let g_y = tape.grad_wrt_intermediate(loss, y).unwrap();
        let composed = tape.backprop_through(&g_y, y, bound.ids()).unwrap();
        let diff = direct.iter().zip(&composed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_split = worst_split.max(diff);
    }
    verdict(
        "A3",
        worst_fd < 1e-4 && worst_split <= 1e-10,
        format!("20 nets: max FD rel err {worst_fd:.2e}, max split-compose diff {worst_split:.2e}"),
    );
}

// ---------------------------------------------------------------- A4

fn tiny_models(seed: u64) -> ModelTriple {
    let cond = Conditioning { time_dim: 4, num_classes: 3 };
    let arch = Denoiser::arch_for(2, cond, &[8]);
    let teacher = Denoiser { params: xavier_init(&arch.layer_dims(), seed).unwrap(), arch, cond };
    let plan = TrainPlan { student_hidden: vec![6], disc_hidden: vec![5], seed, ..Default::default() };
    plan.init_models(teacher).unwrap()
}

/// All-steps objective averaged over `r = 1..=T`, differentiated directly.
fn all_steps_gradient(m: &ModelTriple, batch: &LabeledDataset, s: &NoiseSchedule, noise: &Tensor, w: f64) -> Vec<f64> {
    let mut total = vec![0.0; m.student.params.flatten().len()];
    let t_max = s.steps();
    for i in 0..batch.len() {
        let mut tape = Tape::new();
        let sb = m.student.params.bind(&mut tape);
        let db = m.disc.params.bind(&mut tape);
        let y = batch.labels[i];
        let mut terms = Vec::new();
        for r in 1..=t_max {
            let (x0, e) = (batch.x.row_tensor(i), noise.row_tensor(i));
            let x_r = forward_closed_form(&x0, r, s, &e).unwrap();
            let x_prev = forward_closed_form(&x0, r - 1, s, &e).unwrap();
            let teach = guided_mean(&m.teacher, &x_r, r, Some(&[y]), w, s).unwrap();
            let xr = tape.leaf(x_r);
            let eps = m.student.noise_on_tape(&mut tape, &sb, xr, &[r], &[Some(y)]).unwrap();
            let (cx, ce) = posterior_mean_coefs(s, r);
            let a = tape.scale(xr, cx);
            let b = tape.scale(eps, ce);
            let xs = tape.add(a, b).unwrap();
            let xt = tape.leaf(teach);
            let xp = tape.leaf(x_prev);
            let mut mse = |target| {
                let d = tape.sub(xs, target).unwrap();
                let d = tape.square(d);
                tape.mean_all(d)
            };
            let (m1, m2) = (mse(xt), mse(xp));
            let p = m.disc.student_prob_on_tape(&mut tape, &db, xt, xs, &[r], &[Some(y)]).unwrap();
            let q = tape.affine(p, -1.0, 1.0);
            let adv = tape.ln(q);
            let adv = tape.sum_all(adv);
            let sum = tape.add(m1, m2).unwrap();
            terms.push(tape.add(sum, adv).unwrap());
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t).unwrap();
        }
        let loss = tape.scale(acc, 1.0 / t_max as f64);
        let g = sb.gradient(&tape, loss).unwrap();
        total.iter_mut().zip(&g).for_each(|(a, v)| *a += v / batch.len() as f64);
    }
    total
}

fn a4_random_step_gradient_is_unbiased() {
    let schedule = NoiseSchedule::linear(4, 0.02, 0.3).unwrap();
    let models = tiny_models(41);
    let mut rng = stream(2024, 4);
    let x = standard_normal(&mut rng, 4, 2).map(|v| (0.5 * v).clamp(-1.0, 1.0));
    let batch = LabeledDataset::new(x, vec![0, 1, 2, 1], 3).unwrap();
    let noise = standard_normal(&mut rng, 4, 2);
    let weights = LossWeights { teacher_mse: 1.0, data_mse: 1.0, adv: 1.0 };
    let mut mean = vec![0.0; models.student.params.flatten().len()];
    for r in 1..=4 {
        let step = step_grads_at(&models, &batch, &schedule, weights, 1.8, &StepDraw { r, noise: noise.clone() }).unwrap();
        let (g, injected) = sanitized_gradient(&step, f64::INFINITY, 0.0, 4, &mut rng).unwrap();
        assert!(!injected);
        mean.iter_mut().zip(&g).for_each(|(m, v)| *m += v / 4.0);
    }
    let oracle = all_steps_gradient(&models, &batch, &schedule, &noise, 1.8);
    let diff = mean.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict("A4", diff <= 1e-10, format!("T=4, C=inf, sigma=0: max |mean_r g_r - g_all| = {diff:.2e}"));
}

// ---------------------------------------------------------------- toy task

const TOY_STEPS: usize = 50;
const TOY_BETA: (f64, f64) = (1e-4, 0.28);
const N_EVAL: usize = 2000;

struct Toy {
    train: LabeledDataset,
    heldout: LabeledDataset,
    schedule: NoiseSchedule,
    teacher: Denoiser,
    teacher_seconds: f64,
    teacher_mmd: f64,
}

fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let train = eight_gaussians(4096, 1);
        let heldout = eight_gaussians(N_EVAL, 2);
        let schedule = NoiseSchedule::linear(TOY_STEPS, TOY_BETA.0, TOY_BETA.1).unwrap();
        let plan = TeacherPlan { iterations: 2000, hidden: vec![64, 64, 64], seed: 1, ..Default::default() };
        let start = Instant::now();
        let teacher = train_teacher(&train, &schedule, &plan).unwrap().teacher;
        let teacher_seconds = start.elapsed().as_secs_f64();
        let teacher_mmd = sample_mmd(&teacher, &schedule, &heldout, GuidanceConfig::DEFAULT_W);
        Toy { train, heldout, schedule, teacher, teacher_seconds, teacher_mmd }
    })
}

fn sample_mmd(model: &Denoiser, schedule: &NoiseSchedule, heldout: &LabeledDataset, w: f64) -> f64 {
    let labels: Vec<usize> = (0..N_EVAL).map(|i| i % heldout.num_classes).collect();
    let x = sample_reverse(model, 2, schedule, GuidanceConfig::new(w).unwrap(), N_EVAL, Some(&labels), &mut stream(3, 3))
        .unwrap();
    let h = median_bandwidth(&heldout.x, &x).unwrap();
    mmd_unbiased(&heldout.x, &x, h).unwrap()
}

/// Direct double loop over all ordered pairs, as an independent check of the estimator.
fn brute_force_mmd(a: &Tensor, b: &Tensor, h: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| (-x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (2.0 * h * h)).exp();
    let (n, m) = (a.rows(), b.rows());
    let within = |t: &Tensor| {
        let mut s = 0.0;
        for i in 0..t.rows() {
            for j in 0..t.rows() {
                if i != j {
                    s += k(t.row_slice(i), t.row_slice(j));
                }
            }
        }
        s
    };
    let (sa, sb) = (within(a), within(b));
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += k(a.row_slice(i), b.row_slice(j));
        }
    }
    sa / (n * (n - 1)) as f64 + sb / (m * (m - 1)) as f64 - 2.0 * cross / (n * m) as f64
}

fn a5_teacher_matches_toy_distribution() {
    let toy = toy();
    let other = eight_gaussians(N_EVAL, 7);
    let h = median_bandwidth(&toy.heldout.x, &other.x).unwrap();
    let real_vs_real = mmd_unbiased(&toy.heldout.x, &other.x, h).unwrap();
    let (sa, sb) = (toy.heldout.select(&(0..400).collect::<Vec<_>>()), other.select(&(0..300).collect::<Vec<_>>()));
    let estimator_gap = (mmd_unbiased(&sa.x, &sb.x, h).unwrap() - brute_force_mmd(&sa.x, &sb.x, h)).abs();
    verdict(
        "A5",
        toy.teacher_mmd <= 0.05 && toy.teacher_seconds <= 600.0 && estimator_gap < 1e-12 && real_vs_real.abs() < 0.005,
        format!(
            "teacher MMD^2 {:.5} (<= 0.05) after {:.1}s; real-vs-real {real_vs_real:.5}; estimator vs brute force {estimator_gap:.1e}",
            toy.teacher_mmd, toy.teacher_seconds
        ),
    );
}

fn student_plan(epsilon: f64, seed: u64) -> TrainPlan {
    TrainPlan {
        iterations: 2000,
        batch_size: 128,
        lr: 3e4,
        lr_disc: 0.05,
        clip: 1e-6,
        noise: NoiseSpec::TargetEpsilon(epsilon),
        delta: 1e-5,
        seed,
        ..Default::default()
    }
}

fn a6_private_student_tracks_teacher() {
    let toy = toy();
    let run_at = |eps: f64| {
        let run = StudentTrainer::new(toy.teacher.clone(), toy.train.clone(), toy.schedule.clone(), student_plan(eps, 1))
            .unwrap()
            .run()
            .unwrap();
        assert!(run.spend.epsilon() <= eps);
        (sample_mmd(&run.models.student, &toy.schedule, &toy.heldout, 0.0), run.spend.epsilon(), run.sigma)
    };
    let (m10, e10, s10) = run_at(10.0);
    let (m1, e1, s1) = run_at(1.0);
    let t = toy.teacher_mmd;
    verdict(
        "A6",
        m10 <= 3.0 * t && m1 <= 10.0 * t,
        format!(
            "teacher {t:.5}; eps={e10:.4} (sigma {s10:.3}) student {m10:.5} <= {:.5}; eps={e1:.4} (sigma {s1:.3}) student {m1:.5} <= {:.5}",
            3.0 * t,
            10.0 * t
        ),
    );
}

fn a7_ablation_ordering() {
    let toy = toy();
    let task = AblationTask {
        teacher: toy.teacher.clone(),
        train: toy.train.clone(),
        test: toy.heldout.clone(),
        schedule: toy.schedule.clone(),
        plan: student_plan(10.0, 0),
        n_synth: N_EVAL,
        classifier: ClassifierConfig::default(),
    };
    let rows = ablation_suite(&task, &LossVariant::ALL, &[1, 2, 3]).unwrap();
    let pooled = (rows.iter().map(|r| r.std * r.std).sum::<f64>() / rows.len() as f64).sqrt();
    let ordered = rows.windows(2).all(|w| w[0].mean <= w[1].mean + pooled);
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.4}+-{:.4}", r.variant.name(), r.mean, r.std)).collect();
    verdict("A7", ordered, format!("{}; pooled std {pooled:.4}", table.join(", ")));
}

fn a8_convergence_floor() {
    let d = 20;
    let bowl = QuadraticBowl { eigenvalues: (0..d).map(|i| 1.0 + 0.1 * i as f64 / (d - 1) as f64).collect() };
    let noise = NoiseModel { gamma: 0.05, sigma: 1.0, clip: 1.0, dim: d };
    let run = simulate_quadratic_bowl(&bowl, &vec![2.0; d], &noise, 20_000, 8).unwrap();
    let trace = convergence_check(&run.losses, Some(0.0), &noise, run.fitted).unwrap();
    let condition = 2.0 * run.fitted.tau2 * noise.gamma * run.fitted.mu;
    let ratio = run.plateau / trace.floor;
    verdict(
        "A8",
        condition > 0.0 && condition < 1.0 && (1.0 / 3.0..=3.0).contains(&ratio),
        format!(
            "tau1 {:.3} tau2 {:.3} mu {:.3}; 2*tau2*gamma*mu = {condition:.4}; plateau {:.4} vs floor {:.4} (ratio {ratio:.3}); verdict {:?}",
            run.fitted.tau1, run.fitted.tau2, run.fitted.mu, run.plateau, trace.floor, trace.verdict
        ),
    );
}

// ---------------------------------------------------------------- A9

const PIPELINE: &str = "\
data = train.data
seed = 9
schedule.steps = 10
schedule.beta_start = 1e-4
schedule.beta_end = 0.3
teacher.iterations = 300
teacher.batch_size = 64
teacher.hidden = 32,32
teacher.time_dim = 8
teacher.eval_every = 100
student.iterations = 40
student.batch_size = 32
student.lr = 3e4
student.lr_disc = 0.05
student.hidden = 32
disc.hidden = 16
privacy.clip = 1e-6
privacy.epsilon = 10
eval.iterations = 100
";

fn pipeline(dir: &Path) {
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_dpsad")).current_dir(dir).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    std::fs::write(dir.join("run.cfg"), PIPELINE).unwrap();
    run(&["toy", "--n", "1024", "--seed", "1", "--out", "train.data"]);
    run(&["toy", "--n", "500", "--seed", "2", "--out", "test.data"]);
    run(&["train-teacher", "--config", "run.cfg", "--set", "out=out"]);
    run(&["train-student", "--config", "run.cfg", "--set", "out=out", "--teacher", "out/teacher.ckpt"]);
    run(&["sample", "--checkpoint", "out/student.ckpt", "--n", "500", "--seed", "4", "--out", "samples.data"]);
    run(&["eval", "--samples", "samples.data", "--real", "test.data", "--config", "run.cfg", "--out", "out/eval.report"]);
}

fn a9_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let files = ["out/teacher.metrics", "out/student.metrics", "out/privacy.report", "samples.data", "out/eval.report"];
    let same: Vec<bool> =
        files.iter().map(|f| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap()).collect();
    verdict(
        "A9",
        same.iter().all(|&s| s),
        format!("identical across reruns: {}", files.iter().zip(&same).map(|(f, s)| format!("{f}={s}")).collect::<Vec<_>>().join(" ")),
    );
}

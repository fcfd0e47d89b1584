use dpsad_core::autodiff::Tape;
use dpsad_core::diffusion::{forward_closed_form, forward_step, standard_normal, NoiseSchedule};
use dpsad_core::nn::{mlp_on_tape, per_example_gradients, xavier_init, Activation, MlpArch};
use dpsad_core::privacy::{calibrate_sigma, clip, l2_sensitivity, total_epsilon, PrivacyParams};
use dpsad_core::rng::stream;
use dpsad_core::tensor::Tensor;
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn clipped_norm_is_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..40), c in 1e-6f64..1e3) {
        let out = clip(&v, c).unwrap();
        prop_assert!(norm(&out) <= c * (1.0 + 1e-12));
        if norm(&v) <= c {
            prop_assert_eq!(out, v);
        }
    }

    #[test]
    fn neighbouring_sums_stay_within_sensitivity(
        rows in prop::collection::vec(prop::collection::vec(-10f64..10.0, 6), 2..8),
        swap in prop::collection::vec(-10f64..10.0, 6),
        c in 0.01f64..5.0,
    ) {
        let sum = |rs: &[Vec<f64>]| {
            let mut s = vec![0.0; 6];
            for r in rs {
                for (a, b) in s.iter_mut().zip(clip(r, c).unwrap()) {
                    *a += b;
                }
            }
            s
        };
        let mut other = rows.clone();
        other[0] = swap;
        let d: Vec<f64> = sum(&rows).iter().zip(sum(&other)).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&d) <= l2_sensitivity(c, 6).unwrap() + 1e-12);
        prop_assert!(norm(&d) <= 2.0 * c * (1.0 + 1e-12));
    }

    #[test]
    fn spend_grows_with_iterations_and_shrinks_with_noise(
        sigma in 0.5f64..50.0,
        n in 1u64..1000,
        s in 1u64..10_000,
    ) {
        let p = PrivacyParams { clip: 0.01, sigma, batch_size: 16, iterations: n, steps: 10, param_count: s, delta: 1e-5 };
        let base = total_epsilon(&p).unwrap().epsilon_raw;
        let more = total_epsilon(&PrivacyParams { iterations: 2 * n, ..p }).unwrap().epsilon_raw;
        let noisier = total_epsilon(&PrivacyParams { sigma: 2.0 * sigma, ..p }).unwrap().epsilon_raw;
        prop_assert!(more > base);
        prop_assert!(noisier < base);
    }

    #[test]
    fn calibrated_sigma_meets_target(target in 0.5f64..20.0, s in 1u64..5000) {
        let p = PrivacyParams { clip: 0.1, sigma: 1.0, batch_size: 32, iterations: 100, steps: 10, param_count: s, delta: 1e-5 };
        let sigma = calibrate_sigma(target, &p).unwrap();
        let spent = total_epsilon(&PrivacyParams { sigma, ..p }).unwrap().epsilon_raw;
        prop_assert!(spent <= target);
        let tighter = total_epsilon(&PrivacyParams { sigma: sigma * (1.0 - 1e-5), ..p }).unwrap().epsilon_raw;
        prop_assert!(tighter > target);
    }

    #[test]
    fn per_example_gradients_sum_to_batch_gradient(seed in 0u64..1000, n in 1usize..6) {
        let arch = MlpArch::new(3, &[4], 2, Activation::Tanh);
        let params = xavier_init(&arch.layer_dims(), seed).unwrap();
        let batch = standard_normal(&mut stream(seed, 1), n, 3);
        let loss = |tape: &mut Tape, bound: &dpsad_core::nn::BoundParams, x| {
            let y = mlp_on_tape(tape, &arch, bound, x)?;
            let sq = tape.square(y);
            Ok(tape.sum_all(sq))
        };
        let per = per_example_gradients(&params, &batch, loss).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(batch.clone());
        let l = loss(&mut tape, &bound, x).unwrap();
        let whole = bound.gradient(&tape, l).unwrap();
        for (a, b) in per.sum_rows().iter().zip(&whole) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn iterated_forward_steps_match_closed_form_moments() {
    let schedule = NoiseSchedule::linear(6, 0.05, 0.4).unwrap();
    let x0 = Tensor::row(vec![0.8]);
    let mut rng = stream(11, 0);
    let trials = 40_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..trials {
        let mut x = x0.clone();
        for t in 1..=6 {
            x = forward_step(&x, t, &schedule, &standard_normal(&mut rng, 1, 1)).unwrap();
        }
        let v = x.data()[0];
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / trials as f64;
    let var = s2 / trials as f64 - mean * mean;
    let ab = schedule.alpha_bar(6);
    let expect_mean = forward_closed_form(&x0, 6, &schedule, &Tensor::row(vec![0.0])).unwrap().data()[0];
    assert!((mean - expect_mean).abs() < 4.0 * ((1.0 - ab) / trials as f64).sqrt(), "mean {mean} vs {expect_mean}");
    assert!((var - (1.0 - ab)).abs() < 0.02, "variance {var} vs {}", 1.0 - ab);
}

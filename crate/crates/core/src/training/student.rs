//! The private student update and the full distillation loop.

use alloc::vec;
use alloc::vec::Vec;
use alloc::format;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::LabeledDataset;
use crate::diffusion::{forward_closed_form, guided_mean, standard_normal, Denoiser, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::nn::ParamSet;
use crate::optim::{sgd_step, OptState};
use crate::privacy::{calibrate_sigma, clip, total_epsilon, PrivacyParams, PrivacySpend};
use crate::rng::{RngStreams, StreamRng, StreamState};
use crate::tensor::Tensor;

use super::discriminator::discriminator_update;
use super::losses::{example_loss_on_tape, ExampleLoss, LossWeights};
use super::{ModelTriple, NoiseSpec, TrainPlan};

/// The random step `r` and the forward-process noise shared by `x_r` and `x_{r-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDraw {
    pub r: usize,
    pub noise: Tensor,
}

impl StepDraw {
    pub fn sample(schedule: &NoiseSchedule, batch: usize, dim: usize, step_rng: &mut StreamRng, forward_rng: &mut StreamRng) -> Self {
        let r = step_rng.random_range(1..=schedule.steps());
        Self { r, noise: standard_normal(forward_rng, batch, dim) }
    }
}

/// Per-example gradients of the step-`r` objective at the student's output,
/// with the tapes needed to push them back to the student's parameters.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub r: usize,
    pub examples: Vec<ExampleLoss>,
    /// `B x d`: row `i` is `dL_i / dx_student_i`.
    pub intermediate: Tensor,
    pub x_teacher: Tensor,
    pub x_student: Tensor,
    pub dis: f64,
    pub adv: f64,
}

fn prepare_targets(
    models: &ModelTriple,
    batch: &LabeledDataset,
    schedule: &NoiseSchedule,
    guidance_w: f64,
    draw: &StepDraw,
) -> Result<(Tensor, Tensor, Tensor)> {
    ensure!(draw.noise.dims2() == batch.x.dims2(), "noise shape differs from batch");
    let x_r = forward_closed_form(&batch.x, draw.r, schedule, &draw.noise)?;
    let x_true = forward_closed_form(&batch.x, draw.r - 1, schedule, &draw.noise)?;
    let x_teacher = if models.teacher.cond.num_classes > 0 {
        guided_mean(&models.teacher, &x_r, draw.r, Some(&batch.labels), guidance_w, schedule)?
    } else {
        guided_mean(&models.teacher, &x_r, draw.r, None, 0.0, schedule)?
    };
    Ok((x_r, x_true, x_teacher))
}

/// Evaluate the step-`draw.r` objective per example and take its gradient
/// with respect to the student's next-step prediction.
pub fn step_grads_at(
    models: &ModelTriple,
    batch: &LabeledDataset,
    schedule: &NoiseSchedule,
    weights: LossWeights,
    guidance_w: f64,
    draw: &StepDraw,
) -> Result<StepGrads> {
    ensure!(!batch.is_empty(), "empty batch");
    let (x_r, x_true, x_teacher) = prepare_targets(models, batch, schedule, guidance_w, draw)?;
    let (n, d) = x_r.dims2();
    let mut examples = Vec::with_capacity(n);
    let mut inter = Vec::with_capacity(n * d);
    let mut student_out = Vec::with_capacity(n * d);
    let (mut dis, mut adv) = (0.0, 0.0);
    for i in 0..n {
        let ex = example_loss_on_tape(
            models,
            schedule,
            &x_r.row_tensor(i),
            draw.r,
            &batch.labels[i..i + 1],
            &x_teacher.row_tensor(i),
            &x_true.row_tensor(i),
            weights,
        )?;
        let g = ex.tape.grad_wrt_intermediate(ex.loss, ex.x_student)?;
        inter.extend_from_slice(g.data());
        student_out.extend_from_slice(ex.tape.value(ex.x_student).data());
        dis += ex.dis / n as f64;
        adv += ex.adv / n as f64;
        examples.push(ex);
    }
    Ok(StepGrads {
        r: draw.r,
        examples,
        intermediate: Tensor::matrix(n, d, inter)?,
        x_teacher,
        x_student: Tensor::matrix(n, d, student_out)?,
        dis,
        adv,
    })
}

/// Draw `r` uniformly from `1..=T` and compute [`step_grads_at`].
#[allow(clippy::too_many_arguments)]
pub fn stochastic_step_grads(
    models: &ModelTriple,
    batch: &LabeledDataset,
    schedule: &NoiseSchedule,
    weights: LossWeights,
    guidance_w: f64,
    step_rng: &mut StreamRng,
    forward_rng: &mut StreamRng,
) -> Result<StepGrads> {
    let draw = StepDraw::sample(schedule, batch.len(), batch.dim(), step_rng, forward_rng);
    step_grads_at(models, batch, schedule, weights, guidance_w, &draw)
}

/// `(1/B) sum_i clip(dL_i/dx_i, C) . dx_i/dtheta + N(0, (sigma C)^2 I) / (B T)`.
///
/// `sigma == 0` skips the noise (used to check the noiseless identity).
/// Returns the gradient and whether noise was injected.
pub fn sanitized_gradient<R: Rng + ?Sized>(
    step: &StepGrads,
    clip_bound: f64,
    sigma: f64,
    diffusion_steps: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, bool)> {
    let b = step.examples.len();
    ensure!(b > 0, "empty batch");
    let mut sum: Vec<f64> = Vec::new();
    for (i, ex) in step.examples.iter().enumerate() {
        let g = clip(step.intermediate.row_slice(i), clip_bound)?;
        let g = Tensor::row(g);
        let row = ex.tape.backprop_through(&g, ex.x_student, ex.student_params.ids())?;
        if sum.is_empty() {
            sum = row;
        } else {
            sum.iter_mut().zip(&row).for_each(|(s, v)| *s += v);
        }
    }
    let mut out: Vec<f64> = sum.into_iter().map(|v| v / b as f64).collect();
    let injected = sigma > 0.0;
    if injected {
        let sd = sigma * clip_bound / (b * diffusion_steps) as f64;
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingFailure("non-finite student gradient".into()));
    }
    Ok((out, injected))
}

/// Direct per-example autodiff of the step objective, averaged; no clipping
/// or noise. Reference for the clipped chain-rule path.
pub fn plain_student_gradient(step: &StepGrads) -> Result<Vec<f64>> {
    let b = step.examples.len();
    ensure!(b > 0, "empty batch");
    let mut sum: Vec<f64> = Vec::new();
    for ex in &step.examples {
        let g = ex.student_params.gradient(&ex.tape, ex.loss)?;
        if sum.is_empty() {
            sum = g;
        } else {
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
    }
    Ok(sum.into_iter().map(|v| v / b as f64).collect())
}

/// Sanitized gradient followed by one SGD step on the student.
pub fn sanitized_student_update<R: Rng + ?Sized>(
    student: &Denoiser,
    step: &StepGrads,
    privacy: &PrivacyParams,
    opt: &mut OptState,
    rng: &mut R,
) -> Result<(Denoiser, Vec<f64>)> {
    let (grad, _) = sanitized_gradient(step, privacy.clip, privacy.sigma, privacy.steps as usize, rng)?;
    let params = sgd_step(&student.params, &grad, opt)?;
    Ok((Denoiser { params, ..student.clone() }, grad))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: u64,
    pub r: usize,
    pub l_dis: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub lr: f64,
    pub epsilon: f64,
}

/// Audit counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainerCounters {
    pub noise_injections: u64,
    pub student_updates: u64,
    pub disc_evals_in_student_path: u64,
}

/// Everything needed to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub student: ParamSet,
    pub disc: ParamSet,
    pub student_opt: OptState,
    pub disc_opt: OptState,
    pub iteration: u64,
    pub sigma: f64,
    pub streams: [StreamState; 4],
    pub counters: TrainerCounters,
}

#[derive(Debug, Clone)]
pub struct StudentRun {
    pub models: ModelTriple,
    pub spend: PrivacySpend,
    pub sigma: f64,
    pub records: Vec<IterRecord>,
    pub counters: TrainerCounters,
}

/// Owns all mutable state of the distillation phase.
#[derive(Debug, Clone)]
pub struct StudentTrainer {
    pub models: ModelTriple,
    pub plan: TrainPlan,
    pub schedule: NoiseSchedule,
    pub privacy: PrivacyParams,
    pub student_opt: OptState,
    pub disc_opt: OptState,
    pub streams: RngStreams,
    pub iteration: u64,
    pub counters: TrainerCounters,
    data: LabeledDataset,
}

impl StudentTrainer {
    /// Initializes student and discriminator; calibrates sigma when a target
    /// epsilon is given (fails with [`Error::Infeasible`] if unreachable).
    pub fn new(teacher: Denoiser, data: LabeledDataset, schedule: NoiseSchedule, plan: TrainPlan) -> Result<Self> {
        plan.validate()?;
        ensure!(data.len() >= plan.batch_size, "dataset has {} examples, batch needs {}", data.len(), plan.batch_size);
        ensure!(teacher.data_dim() == data.dim(), "teacher and data dimensions differ");
        let models = plan.init_models(teacher)?;
        let s = models.student.params.len();
        let sigma = match plan.noise {
            NoiseSpec::Sigma(s) => s,
            NoiseSpec::TargetEpsilon(eps) => calibrate_sigma(eps, &plan.privacy_params(&schedule, s, 1.0))?,
        };
        let privacy = plan.privacy_params(&schedule, s, sigma);
        total_epsilon(&privacy)?;
        Ok(Self {
            student_opt: OptState::new(plan.lr, plan.iterations),
            disc_opt: OptState::new(plan.lr_disc, plan.iterations),
            streams: RngStreams::new(plan.seed),
            iteration: 0,
            counters: TrainerCounters::default(),
            models,
            privacy,
            schedule,
            plan,
            data,
        })
    }

    /// Rebuild a trainer from a saved state.
    pub fn restore(teacher: Denoiser, data: LabeledDataset, schedule: NoiseSchedule, plan: TrainPlan, state: TrainerState) -> Result<Self> {
        let mut t = Self::new(teacher, data, schedule, plan)?;
        ensure!(state.student.len() == t.models.student.params.len(), "student checkpoint does not match plan");
        ensure!(state.disc.len() == t.models.disc.params.len(), "discriminator checkpoint does not match plan");
        t.models.student.params = state.student;
        t.models.disc.params = state.disc;
        t.student_opt = state.student_opt;
        t.disc_opt = state.disc_opt;
        t.iteration = state.iteration;
        t.privacy.sigma = state.sigma;
        t.streams = RngStreams {
            batch: state.streams[0].restore(),
            step: state.streams[1].restore(),
            dp_noise: state.streams[2].restore(),
            forward: state.streams[3].restore(),
        };
        t.counters = state.counters;
        Ok(t)
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            student: self.models.student.params.clone(),
            disc: self.models.disc.params.clone(),
            student_opt: self.student_opt.clone(),
            disc_opt: self.disc_opt.clone(),
            iteration: self.iteration,
            sigma: self.privacy.sigma,
            streams: [
                StreamState::capture(&self.streams.batch),
                StreamState::capture(&self.streams.step),
                StreamState::capture(&self.streams.dp_noise),
                StreamState::capture(&self.streams.forward),
            ],
            counters: self.counters,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.privacy.sigma
    }

    /// Accounted spend after `k` completed iterations.
    pub fn spend_after(&self, k: u64) -> Result<PrivacySpend> {
        total_epsilon(&PrivacyParams { iterations: k.max(1), ..self.privacy })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.plan.iterations
    }

    /// Sample a batch, update the student privately, then the discriminator.
    pub fn step(&mut self) -> Result<IterRecord> {
        let k = self.iteration + 1;
        let spend = self.spend_after(k)?;
        if let NoiseSpec::TargetEpsilon(target) = self.plan.noise {
            if spend.epsilon() > target {
                return Err(Error::BudgetExceeded { spent: spend.epsilon(), budget: target });
            }
        }
        let idx: Vec<usize> =
            (0..self.plan.batch_size).map(|_| self.streams.batch.random_range(0..self.data.len())).collect();
        let batch = self.data.select(&idx);
        let step = stochastic_step_grads(
            &self.models,
            &batch,
            &self.schedule,
            self.plan.loss_weights(),
            self.plan.guidance_w,
            &mut self.streams.step,
            &mut self.streams.forward,
        )?;
        self.counters.disc_evals_in_student_path +=
            step.examples.iter().filter(|e| e.disc_evaluated).count() as u64;

        let lr = self.student_opt.current_lr();
        let (grad, injected) = sanitized_gradient(
            &step,
            self.privacy.clip,
            self.privacy.sigma,
            self.schedule.steps(),
            &mut self.streams.dp_noise,
        )?;
        if injected {
            self.counters.noise_injections += 1;
        }
        self.models.student.params = sgd_step(&self.models.student.params, &grad, &mut self.student_opt)?;
        self.counters.student_updates += 1;

        let steps = vec![step.r; batch.len()];
        let labels: Vec<Option<usize>> = batch.labels.iter().map(|&y| Some(y)).collect();
        let (disc, l_disc) =
            discriminator_update(&self.models.disc, &step.x_teacher, &step.x_student, &steps, &labels, &mut self.disc_opt)?;
        if !l_disc.is_finite() {
            return Err(Error::TrainingFailure(format!("discriminator loss diverged at iteration {k}")));
        }
        self.models.disc = disc;
        self.iteration = k;
        Ok(IterRecord { iteration: k, r: step.r, l_dis: step.dis, l_adv: step.adv, l_disc, lr, epsilon: spend.epsilon() })
    }

    /// Run the remaining iterations.
    pub fn run(mut self) -> Result<StudentRun> {
        let mut records = Vec::new();
        while !self.is_done() {
            records.push(self.step()?);
        }
        self.finish(records)
    }

    pub fn finish(self, records: Vec<IterRecord>) -> Result<StudentRun> {
        let spend = self.spend_after(self.iteration)?;
        Ok(StudentRun { sigma: self.privacy.sigma, models: self.models, spend, records, counters: self.counters })
    }
}

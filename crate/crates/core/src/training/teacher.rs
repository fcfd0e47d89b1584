use alloc::vec::Vec;
use alloc::{format, vec};
use rand::Rng;

use crate::autodiff::Tape;
use crate::dataset::LabeledDataset;
use crate::diffusion::{ddpm_loss, forward_closed_form, standard_normal, Conditioning, Denoiser, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::nn::xavier_init;
use crate::optim::{Adam, OptState};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Hyperparameters for the unprotected teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPlan {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing a label with the null label, which trains
    /// the unconditional branch used by guidance.
    pub label_dropout: f64,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Fraction of the data held out for loss monitoring.
    pub heldout_fraction: f64,
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for TeacherPlan {
    fn default() -> Self {
        Self {
            iterations: 4000,
            batch_size: 128,
            lr: 2e-3,
            label_dropout: 0.1,
            hidden: vec![128, 128, 128],
            time_dim: 16,
            heldout_fraction: 0.1,
            eval_every: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub heldout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRun {
    pub teacher: Denoiser,
    pub records: Vec<TeacherRecord>,
}

impl TeacherRun {
    pub fn heldout_curve(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.heldout).collect()
    }
}

/// Train a conditional noise predictor on the simplified DDPM loss with label
/// dropout, so both guidance branches are available.
pub fn train_teacher(data: &LabeledDataset, schedule: &NoiseSchedule, plan: &TeacherPlan) -> Result<TeacherRun> {
    ensure!(plan.iterations >= 1 && plan.batch_size >= 1, "iterations and batch size must be >= 1");
    ensure!((0.0..=1.0).contains(&plan.label_dropout), "label dropout must lie in [0, 1]");
    ensure!((0.0..1.0).contains(&plan.heldout_fraction), "held-out fraction must lie in [0, 1)");
    let heldout_n = (data.len() as f64 * plan.heldout_fraction) as usize;
    let (train, heldout) = data.split_at(data.len() - heldout_n);
    ensure!(!train.is_empty(), "no training examples");

    let d = data.dim();
    let cond = Conditioning { time_dim: plan.time_dim, num_classes: data.num_classes };
    let arch = Denoiser::arch_for(d, cond, &plan.hidden);
    let mut teacher = Denoiser { params: xavier_init(&arch.layer_dims(), plan.seed)?, arch, cond };
    let mut adam = Adam::new(teacher.params.len(), OptState::new(plan.lr, plan.iterations));
    let mut rng = stream(plan.seed, 0x7465);
    let mut records = Vec::new();

    for it in 1..=plan.iterations {
        let idx: Vec<usize> = (0..plan.batch_size).map(|_| rng.random_range(0..train.len())).collect();
        let batch = train.select(&idx);
        let steps: Vec<usize> = (0..plan.batch_size).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let labels: Vec<Option<usize>> = batch
            .labels
            .iter()
            .map(|&y| if rng.random::<f64>() < plan.label_dropout { None } else { Some(y) })
            .collect();
        let eps = standard_normal(&mut rng, plan.batch_size, d);
        let mut x_t = Vec::with_capacity(plan.batch_size * d);
        for (i, &t) in steps.iter().enumerate() {
            let row = forward_closed_form(&batch.x.row_tensor(i), t, schedule, &eps.row_tensor(i))?;
            x_t.extend_from_slice(row.data());
        }

        let mut tape = Tape::new();
        let bound = teacher.params.bind(&mut tape);
        let xt = tape.leaf(Tensor::matrix(plan.batch_size, d, x_t)?);
        let target = tape.leaf(eps);
        let pred = teacher.noise_on_tape(&mut tape, &bound, xt, &steps, &labels)?;
        let diff = tape.sub(pred, target)?;
        let sq = tape.square(diff);
        let per_row = tape.sum_cols(sq);
        let loss = tape.mean_all(per_row);
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::TrainingFailure(format!("teacher loss diverged at iteration {it}")));
        }
        let grad = bound.gradient(&tape, loss)?;
        let lr = adam.state.current_lr();
        teacher.params = adam.step(&teacher.params, &grad)?;

        let heldout_loss = if (it % plan.eval_every.max(1) == 0 || it == plan.iterations) && !heldout.is_empty() {
            let mut eval_rng = stream(plan.seed, 0x6576);
            let v = ddpm_loss(&teacher, &heldout.x, Some(&heldout.labels), schedule, &mut eval_rng)?;
            if !v.is_finite() {
                return Err(Error::TrainingFailure(format!("held-out loss diverged at iteration {it}")));
            }
            Some(v)
        } else {
            None
        };
        records.push(TeacherRecord { iteration: it, loss: loss_value, lr, heldout: heldout_loss });
    }
    Ok(TeacherRun { teacher, records })
}

//! Teacher training and the differentially private student distillation loop.

mod discriminator;
mod losses;
mod student;
mod teacher;

pub use discriminator::{discriminator_accuracy, discriminator_objective, discriminator_update, Discriminator};
pub use losses::{
    adv_loss_discriminator, adv_loss_student, adv_loss_student_grad, combined_loss, dis_loss, example_loss_on_tape,
    ExampleLoss, LossWeights, PROB_CLAMP,
};
pub use student::{
    plain_student_gradient, sanitized_gradient, sanitized_student_update, step_grads_at, stochastic_step_grads, IterRecord, StepDraw,
    StepGrads, StudentRun, StudentTrainer, TrainerCounters, TrainerState,
};
pub use teacher::{train_teacher, TeacherPlan, TeacherRecord, TeacherRun};

use alloc::vec::Vec;

use crate::diffusion::{Conditioning, Denoiser, NoiseSchedule};
use crate::error::{ensure, Result};
use crate::nn::xavier_init;
use crate::privacy::{PrivacyParams, REFERENCE_DELTA};

pub use crate::dataset::LabeledDataset;
pub use crate::kmeans::pseudo_label;

/// Teacher (frozen), student and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTriple {
    pub teacher: Denoiser,
    pub student: Denoiser,
    pub disc: Discriminator,
}

/// How the privacy noise is set for a student run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Sigma(f64),
    TargetEpsilon(f64),
}

/// Hyperparameters of the student/discriminator phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    /// Iterations `N`.
    pub iterations: u64,
    /// Batch size `B`.
    pub batch_size: usize,
    /// Adversarial trade-off weight.
    pub lambda: f64,
    /// Weight of the student-vs-data MSE term (1 or 0 for ablations).
    pub data_mse_weight: f64,
    pub lr: f64,
    pub lr_disc: f64,
    /// Guidance weight for the teacher's targets.
    pub guidance_w: f64,
    pub clip: f64,
    pub noise: NoiseSpec,
    pub delta: f64,
    pub student_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub student_conditional: bool,
    pub disc_conditional: bool,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 128,
            lambda: 1.0,
            data_mse_weight: 1.0,
            lr: 1e-4,
            lr_disc: 1e-4,
            guidance_w: crate::diffusion::GuidanceConfig::DEFAULT_W,
            clip: crate::privacy::REFERENCE_CLIP,
            noise: NoiseSpec::TargetEpsilon(10.0),
            delta: REFERENCE_DELTA,
            student_hidden: alloc::vec![64, 64],
            disc_hidden: alloc::vec![64, 64],
            student_conditional: true,
            disc_conditional: true,
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, "iterations must be >= 1");
        ensure!(self.batch_size >= 1, "batch size must be >= 1");
        ensure!(self.lambda >= 0.0, "lambda must be >= 0");
        ensure!(self.data_mse_weight >= 0.0, "data MSE weight must be >= 0");
        ensure!(self.lr >= 0.0 && self.lr_disc >= 0.0, "learning rates must be >= 0");
        ensure!(self.guidance_w >= 0.0, "guidance weight must be >= 0");
        ensure!(self.clip > 0.0, "clip bound must be positive");
        match self.noise {
            NoiseSpec::Sigma(s) => ensure!(s > 0.0, "sigma must be positive"),
            NoiseSpec::TargetEpsilon(e) => ensure!(e > 0.0, "target epsilon must be positive"),
        }
        ensure!(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1)");
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { teacher_mse: 1.0, data_mse: self.data_mse_weight, adv: self.lambda }
    }

    /// Accountant inputs for a student with `param_count` parameters,
    /// with `sigma` resolved.
    pub fn privacy_params(&self, schedule: &NoiseSchedule, param_count: usize, sigma: f64) -> PrivacyParams {
        PrivacyParams {
            clip: self.clip,
            sigma,
            batch_size: self.batch_size as u64,
            iterations: self.iterations,
            steps: schedule.steps() as u64,
            param_count: param_count as u64,
            delta: self.delta,
        }
    }

    /// Freshly initialized student and discriminator around a trained teacher.
    pub fn init_models(&self, teacher: Denoiser) -> Result<ModelTriple> {
        let data_dim = teacher.data_dim();
        let classes = teacher.cond.num_classes;
        let student_cond = Conditioning {
            time_dim: teacher.cond.time_dim,
            num_classes: if self.student_conditional { classes } else { 0 },
        };
        let arch = Denoiser::arch_for(data_dim, student_cond, &self.student_hidden);
        let student = Denoiser {
            params: xavier_init(&arch.layer_dims(), self.seed ^ 0x5354_5544)?,
            arch,
            cond: student_cond,
        };
        let disc_cond = Conditioning {
            time_dim: if self.disc_conditional { teacher.cond.time_dim } else { 0 },
            num_classes: if self.disc_conditional { classes } else { 0 },
        };
        let disc = Discriminator::new(data_dim, disc_cond, &self.disc_hidden, self.seed ^ 0x4449_5343)?;
        Ok(ModelTriple { teacher, student, disc })
    }
}

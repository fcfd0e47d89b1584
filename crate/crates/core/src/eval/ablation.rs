use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::dataset::LabeledDataset;
use crate::diffusion::{sample_reverse, Denoiser, GuidanceConfig, NoiseSchedule};
use crate::error::{ensure, Result};
use crate::rng::stream;
use crate::training::{StudentTrainer, TrainPlan};

use super::classifier::{classifier_accuracy, ClassifierConfig};

/// Which terms of the student objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Teacher MSE only.
    TeacherMse,
    /// Teacher MSE plus data MSE.
    TeacherDataMse,
    /// Both MSE terms plus the adversarial term.
    Full,
}

impl LossVariant {
    pub const ALL: [LossVariant; 3] = [LossVariant::TeacherMse, LossVariant::TeacherDataMse, LossVariant::Full];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::TeacherMse => "mse-t",
            LossVariant::TeacherDataMse => "mse-t+mse",
            LossVariant::Full => "mse-t+mse+adv",
        }
    }

    /// `plan` with the variant's loss weights; the full variant keeps the
    /// plan's lambda.
    pub fn apply(self, plan: &TrainPlan) -> TrainPlan {
        let mut p = plan.clone();
        match self {
            LossVariant::TeacherMse => {
                p.data_mse_weight = 0.0;
                p.lambda = 0.0;
            }
            LossVariant::TeacherDataMse => {
                p.data_mse_weight = 1.0;
                p.lambda = 0.0;
            }
            LossVariant::Full => p.data_mse_weight = 1.0,
        }
        p
    }
}

/// Everything fixed across the ablation grid.
#[derive(Debug, Clone)]
pub struct AblationTask {
    pub teacher: Denoiser,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub schedule: NoiseSchedule,
    pub plan: TrainPlan,
    /// Synthetic examples drawn per student, labels balanced over classes.
    pub n_synth: usize,
    pub classifier: ClassifierConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: LossVariant,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AblationRow {
    pub fn to_line(&self) -> String {
        alloc::format!("{},{},{:.6},{:.6}", self.variant.name(), self.accuracies.len(), self.mean, self.std)
    }
}

/// Train one student and score its labeled samples with the classifier protocol.
pub fn score_variant(task: &AblationTask, variant: LossVariant, seed: u64) -> Result<f64> {
    let plan = TrainPlan { seed, ..variant.apply(&task.plan) };
    let run = StudentTrainer::new(task.teacher.clone(), task.train.clone(), task.schedule.clone(), plan)?.run()?;
    let k = task.train.num_classes;
    let labels: Vec<usize> = (0..task.n_synth).map(|i| i % k).collect();
    let mut rng = stream(seed, 0x6162);
    let x = sample_reverse(
        &run.models.student,
        task.train.dim(),
        &task.schedule,
        GuidanceConfig::new(0.0)?,
        task.n_synth,
        Some(&labels),
        &mut rng,
    )?;
    let synth = LabeledDataset::new(x, labels, k)?;
    classifier_accuracy(&synth, &task.test, &task.classifier)
}

#[cfg(feature = "std")]
fn score_grid(task: &AblationTask, variants: &[LossVariant], seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    std::thread::scope(|scope| {
        let handles: Vec<Vec<_>> = variants
            .iter()
            .map(|&v| seeds.iter().map(|&s| scope.spawn(move || score_variant(task, v, s))).collect())
            .collect();
        handles
            .into_iter()
            .map(|row| row.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect())
            .collect()
    })
}

#[cfg(not(feature = "std"))]
fn score_grid(task: &AblationTask, variants: &[LossVariant], seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    variants.iter().map(|&v| seeds.iter().map(|&s| score_variant(task, v, s)).collect()).collect()
}

/// Mean and sample standard deviation of accuracy per variant. With `std`
/// each (variant, seed) run gets its own thread; results do not depend on it.
pub fn ablation_suite(task: &AblationTask, variants: &[LossVariant], seeds: &[u64]) -> Result<Vec<AblationRow>> {
    ensure!(seeds.len() >= 2, "need at least two seeds per variant");
    let grid = score_grid(task, variants, seeds)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (&variant, accuracies) in variants.iter().zip(grid) {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
        rows.push(AblationRow { variant, accuracies, mean, std: var.sqrt() });
    }
    Ok(rows)
}

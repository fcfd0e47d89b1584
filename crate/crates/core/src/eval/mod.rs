//! Sample-quality metrics, convergence monitoring and the loss ablation.

mod ablation;
mod classifier;
mod convergence;
mod mmd;

pub use ablation::{ablation_suite, score_variant, AblationRow, AblationTask, LossVariant};
pub use classifier::{classifier_accuracy, ClassifierConfig};
pub use convergence::{
    convergence_check, simulate_quadratic_bowl, BowlRun, ConvergenceConstants, ConvergenceTrace, NoiseModel,
    QuadraticBowl, Verdict,
};
pub use mmd::{median_bandwidth, mmd_biased, mmd_unbiased, MEDIAN_SUBSET};

/// Sample-quality summary of a synthetic set against real data.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Unbiased MMD², floored at zero for reporting.
    pub mmd: f64,
    /// Raw unbiased estimate before flooring.
    pub mmd_raw: f64,
    pub bandwidth: f64,
    pub classifier_accuracy: Option<f64>,
    pub n_real: usize,
    pub n_synth: usize,
}

impl MetricReport {
    /// MMD with the median-heuristic bandwidth, plus classifier accuracy
    /// when both sets carry labels.
    pub fn compute(
        real: &crate::dataset::LabeledDataset,
        synth: &crate::dataset::LabeledDataset,
        labeled: bool,
        classifier: &ClassifierConfig,
    ) -> crate::Result<Self> {
        let bandwidth = median_bandwidth(&real.x, &synth.x)?;
        let raw = mmd_unbiased(&real.x, &synth.x, bandwidth)?;
        let classifier_accuracy = if labeled { Some(classifier_accuracy(synth, real, classifier)?) } else { None };
        Ok(Self {
            mmd: raw.max(0.0),
            mmd_raw: raw,
            bandwidth,
            classifier_accuracy,
            n_real: real.len(),
            n_synth: synth.len(),
        })
    }
}

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::autodiff::Tape;
use crate::dataset::LabeledDataset;
use crate::error::{ensure, Result};
use crate::nn::{forward_mlp, mlp_on_tape, xavier_init, Activation, MlpArch};
use crate::optim::{Adam, OptState};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Fixed protocol for the train-on-synthetic, test-on-real classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: vec![32], iterations: 600, batch_size: 64, lr: 1e-2, seed: 0 }
    }
}

/// Train a small MLP on `synth` with softmax cross-entropy and report its
/// accuracy on `real_test`.
pub fn classifier_accuracy(synth: &LabeledDataset, real_test: &LabeledDataset, cfg: &ClassifierConfig) -> Result<f64> {
    ensure!(synth.num_classes == real_test.num_classes, "label spaces differ: {} vs {}", synth.num_classes, real_test.num_classes);
    ensure!(synth.dim() == real_test.dim(), "dimension mismatch: {} vs {}", synth.dim(), real_test.dim());
    ensure!(!synth.is_empty() && !real_test.is_empty(), "need nonempty train and test sets");
    ensure!(cfg.batch_size >= 1, "batch size must be >= 1");
    let k = synth.num_classes;
    let arch = MlpArch::new(synth.dim(), &cfg.hidden, k, Activation::Tanh);
    let mut params = xavier_init(&arch.layer_dims(), cfg.seed)?;
    let mut adam = Adam::new(params.len(), OptState::new(cfg.lr, cfg.iterations));
    let mut rng = stream(cfg.seed, 0x636c);
    let b = cfg.batch_size.min(synth.len());

    for _ in 0..cfg.iterations {
        let idx: Vec<usize> = (0..b).map(|_| rng.random_range(0..synth.len())).collect();
        let batch = synth.select(&idx);
        let mut onehot = vec![0.0; b * k];
        for (i, &y) in batch.labels.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.leaf(batch.x.clone());
        let logits = mlp_on_tape(&mut tape, &arch, &bound, x)?;
        let p = tape.softmax_rows(logits);
        let p = tape.clamp(p, 1e-12, 1.0);
        let lp = tape.ln(p);
        let y = tape.leaf(Tensor::matrix(b, k, onehot)?);
        let picked = tape.mul(lp, y)?;
        let s = tape.sum_all(picked);
        let loss = tape.scale(s, -1.0 / b as f64);
        let grad = bound.gradient(&tape, loss)?;
        params = adam.step(&params, &grad)?;
    }

    let logits = forward_mlp(&params, &real_test.x, &arch)?;
    let correct = (0..real_test.len())
        .filter(|&i| {
            let row = logits.row_slice(i);
            let pred = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            pred == real_test.labels[i]
        })
        .count();
    Ok(correct as f64 / real_test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::mixture_on_circle;

    #[test]
    fn separable_task_is_learned() {
        let train = mixture_on_circle(800, 4, 0.7, 0.05, 1);
        let test = mixture_on_circle(400, 4, 0.7, 0.05, 2);
        let acc = classifier_accuracy(&train, &test, &ClassifierConfig::default()).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn random_labels_give_chance() {
        let mut train = mixture_on_circle(800, 4, 0.7, 0.05, 3);
        let mut rng = stream(9, 9);
        for y in train.labels.iter_mut() {
            *y = rng.random_range(0..4);
        }
        let mut test = mixture_on_circle(2000, 4, 0.7, 0.05, 4);
        for y in test.labels.iter_mut() {
            *y = rng.random_range(0..4);
        }
        let acc = classifier_accuracy(&train, &test, &ClassifierConfig::default()).unwrap();
        let sd = (0.25f64 * 0.75 / 2000.0).sqrt();
        assert!((acc - 0.25).abs() < 4.0 * sd, "accuracy {acc}");
    }

    #[test]
    fn deterministic_and_checked() {
        let train = mixture_on_circle(200, 3, 0.7, 0.05, 5);
        let test = mixture_on_circle(100, 3, 0.7, 0.05, 6);
        let cfg = ClassifierConfig { iterations: 50, ..Default::default() };
        assert_eq!(classifier_accuracy(&train, &test, &cfg).unwrap(), classifier_accuracy(&train, &test, &cfg).unwrap());
        let other = mixture_on_circle(100, 4, 0.7, 0.05, 6);
        assert!(classifier_accuracy(&train, &other, &cfg).is_err());
    }
}

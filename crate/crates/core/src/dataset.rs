use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Examples in `[-1, 1]^d`, one per row, with class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(x: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        ensure!(x.rows() == labels.len(), "{} rows but {} labels", x.rows(), labels.len());
        ensure!(num_classes >= 1, "need at least one class");
        ensure!(labels.iter().all(|&y| y < num_classes), "label outside 0..{}", num_classes);
        ensure!(
            x.data().iter().all(|v| (-1.0..=1.0).contains(v)),
            "values must lie in [-1, 1]"
        );
        Ok(Self { x, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledDataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row_slice(i));
        }
        LabeledDataset {
            x: Tensor::matrix(idx.len(), d, data).unwrap(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (LabeledDataset, LabeledDataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

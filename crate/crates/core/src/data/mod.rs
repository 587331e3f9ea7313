//! Dataset loading, synthetic data generation, and client partitioning.

pub mod idx;
pub mod partition;
pub mod synth;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use idx::{load_mnist_idx, write_idx_images, write_idx_labels};
pub use partition::{partition_by_label, partition_iid, PartitionSpec};
pub use synth::{synth_digits, synth_digits_with, synth_gaussian, synth_gaussian_with};

/// Feature rows plus class labels. Read-only after construction.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if samples.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} sample rows vs {} labels",
                samples.nrows(),
                labels.len()
            )));
        }
        for &label in &labels {
            if label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: class_count,
                });
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Copy out the rows at `indices`, preserving their order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let samples = Array2::from_shape_fn((indices.len(), self.input_dim()), |(i, j)| {
            self.samples[[indices[i], j]]
        });
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset {
            samples,
            labels,
            class_count: self.class_count,
        }
    }

    /// First `count` rows (the configurable desk-scale subset).
    pub fn take(&self, count: usize) -> LabeledDataset {
        let count = count.min(self.len());
        let indices: Vec<usize> = (0..count).collect();
        self.subset(&indices)
    }

    /// Gather a batch by row indices.
    pub fn batch(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let rows = Array2::from_shape_fn((indices.len(), self.input_dim()), |(i, j)| {
            self.samples[[indices[i], j]]
        });
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (rows, labels)
    }
}

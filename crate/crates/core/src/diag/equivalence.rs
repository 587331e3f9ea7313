use ndarray::Array2;

use crate::data::{LabeledDataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::sim::{plain_gradient, SchemeConfig, Simulation};
use crate::tensor::{ModelParams, NetworkSpec};

/// One full-batch gradient step on the given data in batch-stats mode;
/// the same computation the simulator's centralized scheme performs.
pub fn centralized_step(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    lr: f64,
) -> Result<ModelParams> {
    let (_, grads, _) = plain_gradient(spec, params, batch, labels, None)?;
    let mut next = params.clone();
    next.sgd_step(&grads, lr);
    Ok(next)
}

/// Max-abs parameter divergence between two scheme trajectories run in
/// lockstep from the same seed and initialization.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub per_iteration: Vec<f64>,
}

impl EquivalenceReport {
    pub fn max(&self) -> f64 {
        self.per_iteration.iter().fold(0.0f64, |m, &x| m.max(x))
    }

    /// First iteration (1-based) whose divergence exceeds `threshold`.
    pub fn first_exceeding(&self, threshold: f64) -> Option<usize> {
        self.per_iteration
            .iter()
            .position(|&d| d > threshold)
            .map(|i| i + 1)
    }
}

pub fn check_equivalence(
    spec: &NetworkSpec,
    train: &LabeledDataset,
    partition_a: &PartitionSpec,
    cfg_a: &SchemeConfig,
    partition_b: &PartitionSpec,
    cfg_b: &SchemeConfig,
    iterations: usize,
) -> Result<EquivalenceReport> {
    if cfg_a.seed != cfg_b.seed || cfg_a.epsilon != cfg_b.epsilon {
        return Err(Error::Config(
            "equivalence runs must share seed and epsilon".into(),
        ));
    }
    let mut sim_a = Simulation::new(spec, train, partition_a, cfg_a)?;
    let mut sim_b = Simulation::new(spec, train, partition_b, cfg_b)?;
    let mut per_iteration = Vec::with_capacity(iterations);
    for r in 1..=iterations {
        sim_a.step_round(spec, cfg_a, r)?;
        sim_b.step_round(spec, cfg_b, r)?;
        per_iteration.push(sim_a.server.params.max_abs_diff(&sim_b.server.params));
    }
    Ok(EquivalenceReport { per_iteration })
}

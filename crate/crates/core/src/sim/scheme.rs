use crate::error::{Error, Result};

/// Aggregation scheme run by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Single worker holding the union dataset; no communication.
    Centralized,
    /// Vanilla federated averaging with batch norm left untouched.
    FedAvgBn,
    /// Layer-wise sync of batch stats (forward) and stat grads (backward)
    /// in the first local step of every iteration.
    FedTan,
    /// FedTan for the first `freeze_at` iterations, then frozen statistics
    /// and plain averaging of gradient parameters.
    FedTanII { freeze_at: usize },
    /// Forward-only sync: batch stats are aggregated, stat grads are not.
    FedAvgAlg2Only,
    /// All batch-norm parameters (scale, shift, statistics) stay local.
    FedBn,
    /// Only the statistics stay local; scale/shift aggregate with the rest.
    SiloBn,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Centralized => "centralized",
            Scheme::FedAvgBn => "fedavg_bn",
            Scheme::FedTan => "fedtan",
            Scheme::FedTanII { .. } => "fedtan2",
            Scheme::FedAvgAlg2Only => "fedavg_alg2",
            Scheme::FedBn => "fedbn",
            Scheme::SiloBn => "silobn",
        }
    }

    /// Whether iteration `r` (1-based) runs the layer-wise sync step.
    pub fn syncs_at(self, r: usize) -> bool {
        match self {
            Scheme::FedTan | Scheme::FedAvgAlg2Only => true,
            Scheme::FedTanII { freeze_at } => r <= freeze_at,
            _ => false,
        }
    }

    /// Whether stat grads are aggregated too (not just batch stats).
    pub fn syncs_stat_grads(self) -> bool {
        matches!(self, Scheme::FedTan | Scheme::FedTanII { .. })
    }
}

/// Per-client batch selection for each local step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Use the whole local shard every step (full gradient descent).
    Full,
    /// Sample this many rows per step, with replacement.
    Mini(usize),
}

/// Stepwise learning rate: `initial` through iteration `drop_at`, then
/// `after`. A plain constant rate leaves `drop_at` unset.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub initial: f64,
    pub drop_at: Option<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            drop_at: None,
        }
    }

    pub fn step(initial: f64, at: usize, after: f64) -> Self {
        LrSchedule {
            initial,
            drop_at: Some((at, after)),
        }
    }

    /// Rate for iteration `r` (1-based).
    pub fn at(&self, r: usize) -> f64 {
        match self.drop_at {
            Some((at, after)) if r > at => after,
            _ => self.initial,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Local updating steps per iteration (E).
    pub local_steps: usize,
    /// Iterations (R).
    pub iterations: usize,
    pub lr: LrSchedule,
    pub batch: BatchMode,
    /// Moving-average momentum.
    pub rho: f64,
    /// Batch-norm variance regularizer.
    pub epsilon: f64,
    pub seed: u64,
    /// Run client phases on a thread pool between barriers; results are
    /// identical to sequential execution.
    pub parallel_clients: bool,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, iterations: usize) -> Self {
        SchemeConfig {
            scheme,
            local_steps: 5,
            iterations,
            lr: LrSchedule::constant(0.5),
            batch: BatchMode::Mini(128),
            rho: 0.1,
            epsilon: 1e-5,
            seed: 1,
            parallel_clients: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config("rho must satisfy 0 < rho <= 1".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Scheme::FedTanII { freeze_at } = self.scheme {
            if freeze_at >= self.iterations {
                return Err(Error::Config(
                    "fedtan2 freeze point must come before the last iteration".into(),
                ));
            }
        }
        if let BatchMode::Mini(0) = self.batch {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

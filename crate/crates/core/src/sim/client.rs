use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledDataset, PartitionSpec};
use crate::sim::scheme::BatchMode;
use crate::tensor::{ModelParams, NetworkSpec, StatsSet};

/// Stable per-client stream derived from the experiment seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB)
}

/// One simulated client: its shard, working model, moving-average
/// statistics, and a private batch sampler.
pub struct ClientState {
    pub id: usize,
    pub data: LabeledDataset,
    pub params: ModelParams,
    pub moving: StatsSet,
    rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(
        id: usize,
        data: LabeledDataset,
        params: ModelParams,
        moving: StatsSet,
        seed: u64,
    ) -> Self {
        ClientState {
            id,
            data,
            params,
            moving,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Draw the next batch. Full mode returns the whole shard and leaves
    /// the sampler untouched; mini mode samples rows with replacement.
    pub fn sample_batch(&mut self, mode: BatchMode) -> (Array2<f64>, Vec<usize>) {
        match mode {
            BatchMode::Full => {
                let indices: Vec<usize> = (0..self.data.len()).collect();
                self.data.batch(&indices)
            }
            BatchMode::Mini(size) => {
                let size = size.min(self.data.len()).max(1);
                let indices: Vec<usize> = (0..size)
                    .map(|_| self.rng.random_range(0..self.data.len()))
                    .collect();
                self.data.batch(&indices)
            }
        }
    }
}

/// Server-side view: the global model, aggregation weights, and the
/// statistics frozen by FedTAN-II once it stops syncing.
pub struct ServerState {
    pub params: ModelParams,
    pub moving: StatsSet,
    pub weights: Vec<f64>,
    pub frozen_stats: Option<StatsSet>,
}

impl ServerState {
    pub fn new(params: ModelParams, moving: StatsSet, weights: Vec<f64>) -> Self {
        ServerState {
            params,
            moving,
            weights,
            frozen_stats: None,
        }
    }
}

/// Build per-client states from a partition. Moving averages start at
/// the identity stats (mean 0, variance 1), matching a fresh model.
pub fn build_clients(
    spec: &NetworkSpec,
    dataset: &LabeledDataset,
    partition: &PartitionSpec,
    init_params: &ModelParams,
    seed: u64,
) -> Vec<ClientState> {
    partition
        .client_indices
        .iter()
        .enumerate()
        .map(|(id, indices)| {
            ClientState::new(
                id,
                dataset.subset(indices),
                init_params.clone(),
                StatsSet::identity(spec),
                derive_seed(seed, 1 + id as u64),
            )
        })
        .collect()
}

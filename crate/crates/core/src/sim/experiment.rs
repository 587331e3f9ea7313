use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{LabeledDataset, PartitionSpec};
use crate::error::Result;
use crate::metrics::evaluate;
use crate::sim::client::{build_clients, derive_seed, ClientState, ServerState};
use crate::sim::message::ProtocolTranscript;
use crate::sim::round::run_round;
use crate::sim::scheme::{Scheme, SchemeConfig};
use crate::tensor::{ModelParams, NetworkSpec, StatsSet};

/// One row of an experiment's history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub scheme: String,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub cum_bytes: u64,
    pub cum_rounds: u64,
    /// Not filled by the simulator (it would break run-to-run byte
    /// identity of exports); callers may stamp it if they want timing.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<IterationRecord>,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }
}

/// Simulator state bundle, exposed so oracles can drive rounds manually.
pub struct Simulation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub transcript: ProtocolTranscript,
}

impl Simulation {
    /// Build server and clients for a configuration. The centralized
    /// scheme gets a single client holding the partition's union data.
    pub fn new(
        spec: &NetworkSpec,
        train: &LabeledDataset,
        partition: &PartitionSpec,
        cfg: &SchemeConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
        let init = ModelParams::init(spec, cfg.epsilon, &mut rng);
        let identity = StatsSet::identity(spec);
        let (server, clients) = if cfg.scheme == Scheme::Centralized {
            let union = train.subset(&partition.union_indices());
            let client = ClientState::new(
                0,
                union,
                init.clone(),
                identity.clone(),
                derive_seed(cfg.seed, 1),
            );
            (
                ServerState::new(init, identity, vec![1.0]),
                vec![client],
            )
        } else {
            let clients = build_clients(spec, train, partition, &init, cfg.seed);
            (
                ServerState::new(init, identity, partition.weights.clone()),
                clients,
            )
        };
        Ok(Simulation {
            server,
            clients,
            transcript: ProtocolTranscript::new(),
        })
    }

    pub fn step_round(&mut self, spec: &NetworkSpec, cfg: &SchemeConfig, r: usize) -> Result<f64> {
        run_round(
            spec,
            &mut self.server,
            &mut self.clients,
            cfg,
            r,
            &mut self.transcript,
        )
    }

    /// Test metrics under the scheme's evaluation convention: local-BN
    /// schemes average each client's own model over the full test set,
    /// everything else evaluates the global model with its moving stats.
    pub fn evaluate(
        &self,
        spec: &NetworkSpec,
        cfg: &SchemeConfig,
        test: &LabeledDataset,
    ) -> Result<(f64, f64)> {
        match cfg.scheme {
            Scheme::FedBn | Scheme::SiloBn => {
                let mut acc = 0.0;
                let mut loss = 0.0;
                for client in &self.clients {
                    let (a, l) = evaluate(spec, &client.params, &client.moving, test)?;
                    acc += a;
                    loss += l;
                }
                let n = self.clients.len() as f64;
                Ok((acc / n, loss / n))
            }
            _ => evaluate(spec, &self.server.params, &self.server.moving, test),
        }
    }
}

/// Run a full experiment: R iterations with per-iteration loss, test
/// accuracy, and cumulative communication accounting.
pub fn run_experiment(
    spec: &NetworkSpec,
    train: &LabeledDataset,
    partition: &PartitionSpec,
    test: &LabeledDataset,
    cfg: &SchemeConfig,
) -> Result<(History, ProtocolTranscript)> {
    let mut sim = Simulation::new(spec, train, partition, cfg)?;
    let mut history = History::default();
    for r in 1..=cfg.iterations {
        let train_loss = sim.step_round(spec, cfg, r)?;
        let (test_accuracy, _) = sim.evaluate(spec, cfg, test)?;
        history.records.push(IterationRecord {
            iteration: r,
            scheme: cfg.scheme.name().to_string(),
            train_loss,
            test_accuracy,
            cum_bytes: sim.transcript.total_bytes(),
            cum_rounds: sim.transcript.round_trips(),
            wall_seconds: 0.0,
        });
    }
    Ok((history, sim.transcript))
}

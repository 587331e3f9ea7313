//! Lockstep server/client simulator. Every exchange is recorded as a
//! transcript message; all aggregation runs in fixed client order so a
//! run is bit-reproducible for a given seed, whether client phases
//! execute sequentially or on a thread pool.

mod client;
mod experiment;
mod message;
mod round;
mod scheme;

pub use client::{build_clients, derive_seed, ClientState, ServerState};
pub use experiment::{run_experiment, History, IterationRecord, Simulation};
pub use message::{Direction, Message, MessageKind, ProtocolTranscript, BYTES_PER_SCALAR};
pub use round::{
    fedtan_backward_sync, fedtan_forward_sync, local_update_plain, plain_gradient, run_round,
};
pub use scheme::{BatchMode, LrSchedule, Scheme, SchemeConfig};

//! Federated-learning simulator built around batch normalization with
//! explicit statistical-parameter gradients. The tensor module does
//! fully manual forward/backward propagation; the sim module runs
//! lockstep server/client protocols that synchronize batch statistics
//! and their gradients layer by layer; diag hosts the centralized
//! oracles and finite-difference checks; metrics does communication
//! accounting and CSV export.

pub mod data;
pub mod diag;
pub mod error;
pub mod metrics;
pub mod sim;
pub mod tensor;

pub use data::{LabeledDataset, PartitionSpec};
pub use error::{Error, IdxError, Result};
pub use tensor::{
    BnLayerParams, BnStatGrads, BnStats, ForwardCache, ModelGrads, ModelParams, NetworkSpec,
    StatGradsSet, StatsMode, StatsSet,
};

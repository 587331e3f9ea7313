//! Dense networks with batch-norm layers and fully manual forward and
//! backward propagation. Batch statistics and their gradients are first
//! class values here: every pass can run with replacement stats or
//! replacement stat gradients, which is what the sync protocol needs.

mod backward;
mod forward;
mod network;
mod ops;

pub use backward::{model_backward, BackwardPass};
pub use forward::{model_forward, ForwardCache, ForwardPass, LayerCache, StatsMode};
pub use network::{
    BnLayerParams, BnStatGrads, BnStats, DenseLayerParams, LayerGrads, LayerKind, LayerParams,
    ModelGrads, ModelParams, NetworkSpec, StatGradsSet, StatsSet,
};
pub use ops::{
    batch_mean, batch_stats, bn_backward, bn_forward, bn_input_grad, bn_stat_grads,
    dense_backward, dense_forward, relu_backward, relu_forward, softmax_cross_entropy,
    variance_against,
};

use crate::data::{LabeledDataset, PartitionSpec};
use crate::error::Result;
use crate::tensor::{
    model_backward, model_forward, BnStatGrads, BnStats, ModelGrads, ModelParams, NetworkSpec,
    StatsMode,
};

/// Per-client gradient deviation and heterogeneity, measured at fixed
/// parameters with full-shard batches:
///   b_i = || grad_i(local stats, local stat grads)
///          - grad_i(union stats, union stat grads) ||^2
///   v_i = || grad_i(union stats, union stat grads) - union grad ||^2
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub b: Vec<f64>,
    pub v: Vec<f64>,
}

/// Gradient of one shard's loss with the union statistics and union stat
/// gradients injected through the override paths.
fn gradient_with_injected(
    spec: &NetworkSpec,
    params: &ModelParams,
    shard: &LabeledDataset,
    union_stats: &[Option<BnStats>],
    union_grads: &[Option<BnStatGrads>],
) -> Result<ModelGrads> {
    let (_, cache) = model_forward(
        spec,
        params,
        &shard.samples.view(),
        StatsMode::Override(union_stats),
    )?;
    let (_, grads, _) = model_backward(spec, params, &cache, &shard.labels, Some(union_grads))?;
    Ok(grads)
}

pub fn estimate_deviation(
    spec: &NetworkSpec,
    params: &ModelParams,
    dataset: &LabeledDataset,
    partition: &PartitionSpec,
) -> Result<DeviationReport> {
    // Union pass: harvest the global stats, stat grads, and gradient.
    let union = dataset.subset(&partition.union_indices());
    let (_, union_cache) = model_forward(spec, params, &union.samples.view(), StatsMode::Batch)?;
    let (_, union_grad, union_stat_grads) =
        model_backward(spec, params, &union_cache, &union.labels, None)?;
    let union_stats: Vec<Option<BnStats>> = union_cache
        .stats_set()
        .layers
        .into_iter()
        .map(Some)
        .collect();
    let union_grads_inj: Vec<Option<BnStatGrads>> = union_stat_grads
        .layers
        .iter()
        .cloned()
        .map(Some)
        .collect();

    let mut b = Vec::with_capacity(partition.client_count());
    let mut v = Vec::with_capacity(partition.client_count());
    for indices in &partition.client_indices {
        let shard = dataset.subset(indices);

        let (_, cache) = model_forward(spec, params, &shard.samples.view(), StatsMode::Batch)?;
        let (_, local_grad, _) = model_backward(spec, params, &cache, &shard.labels, None)?;

        let injected_grad =
            gradient_with_injected(spec, params, &shard, &union_stats, &union_grads_inj)?;

        b.push(local_grad.sq_norm_diff(&injected_grad));
        v.push(injected_grad.sq_norm_diff(&union_grad));
    }
    Ok(DeviationReport { b, v })
}

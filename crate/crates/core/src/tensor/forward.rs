use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::tensor::network::{
    BnStats, LayerParams, ModelParams, NetworkSpec, StatsSet,
};
use crate::tensor::ops::{batch_mean, bn_forward, dense_forward, relu_forward, variance_against};

/// Tensors retained per layer for the manual backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense {
        input: Array2<f64>,
    },
    BatchNorm {
        input: Array2<f64>,
        normalized: Array2<f64>,
        stats: BnStats,
    },
    Relu {
        input: Array2<f64>,
    },
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub logits: Array2<f64>,
}

impl ForwardCache {
    /// Batch stats actually used, per batch-norm layer in forward order.
    pub fn stats_set(&self) -> StatsSet {
        StatsSet {
            layers: self
                .layers
                .iter()
                .filter_map(|c| match c {
                    LayerCache::BatchNorm { stats, .. } => Some(stats.clone()),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Where batch-norm layers take their statistics from during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum StatsMode<'a> {
    /// Compute mean/variance from the batch itself (training default).
    Batch,
    /// Per-layer replacement values; `None` entries fall back to batch
    /// stats. Used by the sync protocol and by stat-gradient oracles.
    Override(&'a [Option<BnStats>]),
    /// Use stored moving averages (the inference path).
    Moving(&'a StatsSet),
}

/// Layer-by-layer forward execution that pauses at every batch-norm
/// layer so a protocol can interleave mean/variance barriers.
pub struct ForwardPass<'a> {
    params: &'a ModelParams,
    current: Array2<f64>,
    cache: Vec<LayerCache>,
    next_layer: usize,
    next_bn: usize,
    at_bn: bool,
}

impl<'a> ForwardPass<'a> {
    pub fn new(
        spec: &NetworkSpec,
        params: &'a ModelParams,
        batch: &ArrayView2<f64>,
    ) -> Result<Self> {
        if batch.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch.ncols() != spec.input_dim() {
            return Err(Error::shape(format!(
                "batch width {} vs network input {}",
                batch.ncols(),
                spec.input_dim()
            )));
        }
        if params.layers.len() != spec.layers().len() {
            return Err(Error::shape("params do not match network spec"));
        }
        Ok(ForwardPass {
            params,
            current: batch.to_owned(),
            cache: Vec::with_capacity(spec.layers().len()),
            next_layer: 0,
            next_bn: 0,
            at_bn: false,
        })
    }

    /// Run dense/activation layers until the next batch-norm layer's input
    /// is ready. Returns the batch-norm layer index (forward order) or
    /// `None` once the final logits have been produced.
    pub fn advance_to_bn(&mut self) -> Result<Option<usize>> {
        assert!(!self.at_bn, "previous batch-norm layer not completed");
        while self.next_layer < self.params.layers.len() {
            match &self.params.layers[self.next_layer] {
                LayerParams::Dense(d) => {
                    let out = dense_forward(&self.current.view(), d)?;
                    let input = std::mem::replace(&mut self.current, out);
                    self.cache.push(LayerCache::Dense { input });
                    self.next_layer += 1;
                }
                LayerParams::Relu => {
                    let out = relu_forward(&self.current.view());
                    let input = std::mem::replace(&mut self.current, out);
                    self.cache.push(LayerCache::Relu { input });
                    self.next_layer += 1;
                }
                LayerParams::BatchNorm(_) => {
                    self.at_bn = true;
                    return Ok(Some(self.next_bn));
                }
            }
        }
        Ok(None)
    }

    /// Local batch mean of the pending batch-norm layer's input.
    pub fn bn_mean(&self) -> Array1<f64> {
        assert!(self.at_bn, "not paused at a batch-norm layer");
        batch_mean(&self.current.view())
    }

    /// Batch variance of the pending layer's input measured against the
    /// given mean (the protocol resets the mean before this step).
    pub fn bn_variance_against(&self, mean: &Array1<f64>) -> Array1<f64> {
        assert!(self.at_bn, "not paused at a batch-norm layer");
        variance_against(&self.current.view(), mean)
    }

    /// Complete the pending batch-norm layer using the supplied stats.
    pub fn bn_apply(&mut self, stats: BnStats) -> Result<()> {
        assert!(self.at_bn, "not paused at a batch-norm layer");
        let LayerParams::BatchNorm(bn) = &self.params.layers[self.next_layer] else {
            unreachable!("at_bn points at a batch-norm layer");
        };
        let (out, stats, normalized) = bn_forward(&self.current.view(), bn, Some(&stats))?;
        let input = std::mem::replace(&mut self.current, out);
        self.cache.push(LayerCache::BatchNorm {
            input,
            normalized,
            stats,
        });
        self.next_layer += 1;
        self.next_bn += 1;
        self.at_bn = false;
        Ok(())
    }

    /// Finish the pass; only valid after `advance_to_bn` returned `None`.
    pub fn into_output(self) -> (Array2<f64>, ForwardCache) {
        assert!(
            !self.at_bn && self.next_layer == self.params.layers.len(),
            "forward pass not finished"
        );
        let logits = self.current.clone();
        (
            self.current,
            ForwardCache {
                layers: self.cache,
                logits,
            },
        )
    }
}

/// Full forward pass. The cache retains everything the backward pass
/// needs; the stats mode selects between batch statistics, per-layer
/// overrides, and stored moving averages.
pub fn model_forward(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &ArrayView2<f64>,
    mode: StatsMode,
) -> Result<(Array2<f64>, ForwardCache)> {
    let bn_count = spec.bn_layer_count();
    if let StatsMode::Override(list) = mode {
        if list.len() != bn_count {
            return Err(Error::shape(format!(
                "override list has {} entries, network has {} batch-norm layers",
                list.len(),
                bn_count
            )));
        }
    }
    if let StatsMode::Moving(set) = mode {
        if set.layers.len() != bn_count {
            return Err(Error::shape(format!(
                "moving stats have {} entries, network has {} batch-norm layers",
                set.layers.len(),
                bn_count
            )));
        }
    }
    let mut pass = ForwardPass::new(spec, params, batch)?;
    while let Some(bn_idx) = pass.advance_to_bn()? {
        let stats = match mode {
            StatsMode::Batch => None,
            StatsMode::Override(list) => list[bn_idx].clone(),
            StatsMode::Moving(set) => Some(set.layers[bn_idx].clone()),
        };
        let stats = match stats {
            Some(s) => s,
            None => {
                let mean = pass.bn_mean();
                let variance = pass.bn_variance_against(&mean);
                BnStats { mean, variance }
            }
        };
        pass.bn_apply(stats)?;
    }
    Ok(pass.into_output())
}

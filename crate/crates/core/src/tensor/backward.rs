use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::forward::{ForwardCache, LayerCache};
use crate::tensor::network::{
    BnStatGrads, LayerGrads, LayerParams, ModelGrads, ModelParams, NetworkSpec, StatGradsSet,
};
use crate::tensor::ops::{
    bn_input_grad, bn_stat_grads, dense_backward, relu_backward, softmax_cross_entropy,
};

/// Layer-by-layer backward execution, from the loss toward the input.
/// It pauses at every batch-norm layer after computing that layer's
/// local stat gradients, so a protocol can aggregate them before the
/// chain continues; earlier layers then see the adopted values.
pub struct BackwardPass<'a> {
    params: &'a ModelParams,
    cache: &'a ForwardCache,
    d_current: Array2<f64>,
    grads_rev: Vec<LayerGrads>,
    stat_grads_rev: Vec<BnStatGrads>,
    next_layer: isize,
    pending: Option<Array2<f64>>, // d_normalized of the paused layer
    loss: f64,
}

impl<'a> BackwardPass<'a> {
    pub fn new(
        spec: &NetworkSpec,
        params: &'a ModelParams,
        cache: &'a ForwardCache,
        labels: &[usize],
    ) -> Result<Self> {
        if params.layers.len() != spec.layers().len() || cache.layers.len() != params.layers.len()
        {
            return Err(Error::shape("cache/params do not match the network spec"));
        }
        let (loss, d_logits) = softmax_cross_entropy(&cache.logits.view(), labels)?;
        Ok(BackwardPass {
            params,
            cache,
            d_current: d_logits,
            grads_rev: Vec::with_capacity(params.layers.len()),
            stat_grads_rev: Vec::new(),
            next_layer: params.layers.len() as isize - 1,
            pending: None,
            loss,
        })
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Process layers backward until a batch-norm layer is reached;
    /// returns its index (forward order) together with the locally
    /// computed stat gradients, or `None` once the input is reached.
    pub fn advance_to_bn(&mut self) -> Result<Option<(usize, BnStatGrads)>> {
        assert!(self.pending.is_none(), "previous batch-norm not completed");
        while self.next_layer >= 0 {
            let idx = self.next_layer as usize;
            match (&self.params.layers[idx], &self.cache.layers[idx]) {
                (LayerParams::Dense(p), LayerCache::Dense { input }) => {
                    let (d_input, d_weights, d_bias) =
                        dense_backward(&self.d_current.view(), &input.view(), p)?;
                    self.grads_rev.push(LayerGrads::Dense { d_weights, d_bias });
                    self.d_current = d_input;
                    self.next_layer -= 1;
                }
                (LayerParams::Relu, LayerCache::Relu { input }) => {
                    self.d_current = relu_backward(&self.d_current.view(), &input.view());
                    self.grads_rev.push(LayerGrads::Relu);
                    self.next_layer -= 1;
                }
                (LayerParams::BatchNorm(p), LayerCache::BatchNorm { input, stats, .. }) => {
                    let d_normalized = &self.d_current * &p.gamma;
                    let local = bn_stat_grads(&d_normalized, &input.view(), stats, p.epsilon);
                    let bn_idx = self.bn_index_of(idx);
                    self.pending = Some(d_normalized);
                    return Ok(Some((bn_idx, local)));
                }
                _ => return Err(Error::shape("cache does not match params layout")),
            }
        }
        Ok(None)
    }

    fn bn_index_of(&self, layer_idx: usize) -> usize {
        self.params.layers[..layer_idx]
            .iter()
            .filter(|l| matches!(l, LayerParams::BatchNorm(_)))
            .count()
    }

    /// Complete the pending batch-norm layer with (possibly replaced)
    /// stat gradients; the input cotangent and everything upstream is
    /// computed from the adopted values.
    pub fn bn_apply(&mut self, stat_grads: BnStatGrads) -> Result<()> {
        let d_normalized = self.pending.take().expect("not paused at a batch-norm layer");
        let idx = self.next_layer as usize;
        let (LayerParams::BatchNorm(p), LayerCache::BatchNorm {
            input,
            normalized,
            stats,
        }) = (&self.params.layers[idx], &self.cache.layers[idx])
        else {
            unreachable!("pause always sits on a batch-norm layer");
        };
        if stat_grads.d_mean.len() != p.features() {
            return Err(Error::shape(format!(
                "stat-grad override has {} features, layer has {}",
                stat_grads.d_mean.len(),
                p.features()
            )));
        }
        let d_input = bn_input_grad(&d_normalized, &input.view(), stats, &stat_grads, p.epsilon);
        let d_gamma = (&self.d_current * normalized).sum_axis(ndarray::Axis(0));
        let d_beta = self.d_current.sum_axis(ndarray::Axis(0));
        self.grads_rev.push(LayerGrads::BatchNorm { d_gamma, d_beta });
        self.stat_grads_rev.push(stat_grads);
        self.d_current = d_input;
        self.next_layer -= 1;
        Ok(())
    }

    /// Finish the pass; only valid after `advance_to_bn` returned `None`.
    /// Returns the loss, the gradients in params layout, and the stat
    /// gradients actually used per batch-norm layer in forward order.
    pub fn into_grads(mut self) -> (f64, ModelGrads, StatGradsSet) {
        assert!(
            self.pending.is_none() && self.next_layer < 0,
            "backward pass not finished"
        );
        self.grads_rev.reverse();
        self.stat_grads_rev.reverse();
        (
            self.loss,
            ModelGrads {
                layers: self.grads_rev,
            },
            StatGradsSet {
                layers: self.stat_grads_rev,
            },
        )
    }
}

/// Full backward pass over a cached forward run. `stat_grads_override`
/// substitutes per-layer stat gradients (entries may be `None` to keep
/// the local value); downstream-layer overrides change what earlier
/// layers compute, which is exactly the sync protocol's substitution.
pub fn model_backward(
    spec: &NetworkSpec,
    params: &ModelParams,
    cache: &ForwardCache,
    labels: &[usize],
    stat_grads_override: Option<&[Option<BnStatGrads>]>,
) -> Result<(f64, ModelGrads, StatGradsSet)> {
    if let Some(list) = stat_grads_override {
        if list.len() != spec.bn_layer_count() {
            return Err(Error::shape(format!(
                "override list has {} entries, network has {} batch-norm layers",
                list.len(),
                spec.bn_layer_count()
            )));
        }
    }
    let mut pass = BackwardPass::new(spec, params, cache, labels)?;
    while let Some((bn_idx, local)) = pass.advance_to_bn()? {
        let adopted = match stat_grads_override {
            Some(list) => list[bn_idx].clone().unwrap_or(local),
            None => local,
        };
        pass.bn_apply(adopted)?;
    }
    Ok(pass.into_grads())
}

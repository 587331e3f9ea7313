use ndarray::Array2;

use crate::error::Result;
use crate::tensor::{
    model_backward, model_forward, softmax_cross_entropy, BnStatGrads, BnStats, ModelParams,
    NetworkSpec, StatsMode,
};

/// Absolute floor under which a gradient discrepancy counts as zero
/// relative error; below it central differences are pure roundoff.
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// What the checker differentiates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdTarget {
    /// Every gradient parameter (weights, biases, gamma, beta).
    Weights,
    /// Batch mean and variance treated as free inputs per layer via the
    /// stats-override path; downstream layers keep batch statistics.
    Stats,
    /// Weights again, but with all statistics pinned to constants; the
    /// analytic side must drop the stat-gradient paths (zero overrides).
    FrozenStatsWeights,
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rel_error(analytic: f64, fd: f64) -> f64 {
    let diff = (analytic - fd).abs();
    if diff <= FD_ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(fd.abs())
    }
}

/// Central finite differences of the softmax cross-entropy loss against
/// the analytic gradients of the manual backward pass.
pub fn finite_difference_check(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    step: f64,
    target: FdTarget,
) -> Result<FdReport> {
    assert!(step > 0.0, "finite-difference step must be positive");
    match target {
        FdTarget::Weights => fd_weights(spec, params, batch, labels, step, None),
        FdTarget::FrozenStatsWeights => {
            let (_, cache) = model_forward(spec, params, &batch.view(), StatsMode::Batch)?;
            let pinned: Vec<Option<BnStats>> =
                cache.stats_set().layers.into_iter().map(Some).collect();
            fd_weights(spec, params, batch, labels, step, Some(pinned))
        }
        FdTarget::Stats => fd_stats(spec, params, batch, labels, step),
    }
}

fn loss_with_mode(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    pinned: Option<&[Option<BnStats>]>,
) -> Result<f64> {
    let mode = match pinned {
        Some(list) => StatsMode::Override(list),
        None => StatsMode::Batch,
    };
    let (logits, _) = model_forward(spec, params, &batch.view(), mode)?;
    let (loss, _) = softmax_cross_entropy(&logits.view(), labels)?;
    Ok(loss)
}

fn fd_weights(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    step: f64,
    pinned: Option<Vec<Option<BnStats>>>,
) -> Result<FdReport> {
    let mode = match &pinned {
        Some(list) => StatsMode::Override(list),
        None => StatsMode::Batch,
    };
    let (_, cache) = model_forward(spec, params, &batch.view(), mode)?;
    let zero_overrides: Vec<Option<BnStatGrads>> = spec
        .bn_feature_counts()
        .iter()
        .map(|&f| Some(BnStatGrads::zeros(f)))
        .collect();
    let override_arg = pinned.as_ref().map(|_| zero_overrides.as_slice());
    let (_, grads, _) = model_backward(spec, params, &cache, labels, override_arg)?;
    let analytic = grads.flatten();

    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = *work.scalar_mut(i).expect("index within param count");
        *work.scalar_mut(i).unwrap() = original + step;
        let plus = loss_with_mode(spec, &work, batch, labels, pinned.as_deref())?;
        *work.scalar_mut(i).unwrap() = original - step;
        let minus = loss_with_mode(spec, &work, batch, labels, pinned.as_deref())?;
        *work.scalar_mut(i).unwrap() = original;
        let fd = (plus - minus) / (2.0 * step);
        max_rel = max_rel.max(rel_error(a, fd));
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        checked: analytic.len(),
    })
}

fn fd_stats(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    step: f64,
) -> Result<FdReport> {
    let (_, cache) = model_forward(spec, params, &batch.view(), StatsMode::Batch)?;
    let base_stats = cache.stats_set();
    let (_, _, stat_grads) = model_backward(spec, params, &cache, labels, None)?;

    let bn_count = spec.bn_layer_count();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for layer in 0..bn_count {
        let features = base_stats.layers[layer].features();
        for j in 0..features {
            for target_variance in [false, true] {
                let eval = |delta: f64| -> Result<f64> {
                    let mut stats = base_stats.layers[layer].clone();
                    if target_variance {
                        stats.variance[j] += delta;
                    } else {
                        stats.mean[j] += delta;
                    }
                    // Only the probed layer is overridden; downstream
                    // layers recompute their own batch statistics.
                    let overrides: Vec<Option<BnStats>> = (0..bn_count)
                        .map(|l| if l == layer { Some(stats.clone()) } else { None })
                        .collect();
                    loss_with_mode(spec, params, batch, labels, Some(&overrides))
                };
                let fd = (eval(step)? - eval(-step)?) / (2.0 * step);
                let analytic = if target_variance {
                    stat_grads.layers[layer].d_variance[j]
                } else {
                    stat_grads.layers[layer].d_mean[j]
                };
                max_rel = max_rel.max(rel_error(analytic, fd));
                checked += 1;
            }
        }
    }
    Ok(FdReport {
        max_rel_error: max_rel,
        checked,
    })
}

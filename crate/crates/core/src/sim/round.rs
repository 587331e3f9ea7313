use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::client::{ClientState, ServerState};
use crate::sim::message::{Direction, Message, MessageKind, ProtocolTranscript};
use crate::sim::scheme::{BatchMode, Scheme, SchemeConfig};
use crate::tensor::{
    model_backward, model_forward, BackwardPass, BnStatGrads, BnStats, ForwardCache, ForwardPass,
    LayerParams, ModelGrads, ModelParams, NetworkSpec, StatGradsSet, StatsMode, StatsSet,
};

/// One forward/backward evaluation on a batch. With `frozen` statistics
/// the pass treats them as constants: forward uses them verbatim and the
/// backward chain carries no stat-gradient paths (zero overrides).
pub fn plain_gradient(
    spec: &NetworkSpec,
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[usize],
    frozen: Option<&StatsSet>,
) -> Result<(f64, ModelGrads, StatsSet)> {
    match frozen {
        None => {
            let (_, cache) = model_forward(spec, params, &batch.view(), StatsMode::Batch)?;
            let (loss, grads, _) = model_backward(spec, params, &cache, labels, None)?;
            let stats = cache.stats_set();
            Ok((loss, grads, stats))
        }
        Some(stats) => {
            let (_, cache) = model_forward(spec, params, &batch.view(), StatsMode::Moving(stats))?;
            let zeros: Vec<Option<BnStatGrads>> = spec
                .bn_feature_counts()
                .iter()
                .map(|&f| Some(BnStatGrads::zeros(f)))
                .collect();
            let (loss, grads, _) = model_backward(spec, params, &cache, labels, Some(&zeros))?;
            Ok((loss, grads, stats.clone()))
        }
    }
}

/// Successive plain local steps: sample a batch, descend, and fold the
/// batch statistics into the moving average (unless they are frozen).
/// Returns the mean per-step training loss.
pub fn local_update_plain(
    spec: &NetworkSpec,
    client: &mut ClientState,
    steps: usize,
    lr: f64,
    batch: BatchMode,
    rho: f64,
    frozen: Option<&StatsSet>,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for _ in 0..steps {
        let (rows, labels) = client.sample_batch(batch);
        let (loss, grads, stats) = plain_gradient(spec, &client.params, &rows, &labels, frozen)?;
        client.params.sgd_step(&grads, lr);
        if frozen.is_none() {
            client.moving.moving_update(&stats, rho);
        }
        loss_sum += loss;
    }
    Ok(loss_sum / steps.max(1) as f64)
}

fn weighted_vector(parts: &[Array1<f64>], weights: &[f64]) -> Array1<f64> {
    let mut acc = Array1::zeros(parts[0].len());
    for (part, &w) in parts.iter().zip(weights) {
        acc.scaled_add(w, part);
    }
    acc
}

/// Layer-wise forward synchronization: for every batch-norm layer, the
/// clients upload local batch means, adopt the weighted global mean,
/// compute variances against it, upload those, and adopt the weighted
/// global variance before producing the layer output. Two barriers per
/// layer are logged on the transcript.
pub fn fedtan_forward_sync(
    spec: &NetworkSpec,
    params: &[&ModelParams],
    batches: &[Array2<f64>],
    weights: &[f64],
    parallel: bool,
    transcript: &mut ProtocolTranscript,
) -> Result<(Vec<(Array2<f64>, ForwardCache)>, StatsSet)> {
    if params.len() != batches.len() || params.len() != weights.len() || params.is_empty() {
        return Err(Error::Protocol(
            "forward sync needs one batch and weight per client".into(),
        ));
    }
    let mut passes = params
        .iter()
        .zip(batches)
        .map(|(p, b)| ForwardPass::new(spec, p, &b.view()))
        .collect::<Result<Vec<_>>>()?;

    let features = spec.bn_feature_counts();
    let mut synced = Vec::with_capacity(features.len());
    for (layer, &feat) in features.iter().enumerate() {
        let positions: Vec<Option<usize>> = if parallel {
            passes
                .par_iter_mut()
                .map(|p| p.advance_to_bn())
                .collect::<Result<_>>()?
        } else {
            passes
                .iter_mut()
                .map(|p| p.advance_to_bn())
                .collect::<Result<_>>()?
        };
        if positions.iter().any(|p| *p != Some(layer)) {
            return Err(Error::Protocol(format!(
                "clients desynchronized at batch-norm layer {layer}"
            )));
        }

        let means: Vec<Array1<f64>> = passes.iter().map(|p| p.bn_mean()).collect();
        for _ in 0..passes.len() {
            transcript.push(Message {
                direction: Direction::Up,
                kind: MessageKind::LayerMeanUp,
                layer: Some(layer),
                scalar_count: feat as u64,
            });
        }
        transcript.push(Message {
            direction: Direction::Down,
            kind: MessageKind::LayerMeanDown,
            layer: Some(layer),
            scalar_count: feat as u64,
        });
        transcript.record_layer_round();
        let mean_bar = weighted_vector(&means, weights);

        let variances: Vec<Array1<f64>> = passes
            .iter()
            .map(|p| p.bn_variance_against(&mean_bar))
            .collect();
        for _ in 0..passes.len() {
            transcript.push(Message {
                direction: Direction::Up,
                kind: MessageKind::LayerVarUp,
                layer: Some(layer),
                scalar_count: feat as u64,
            });
        }
        transcript.push(Message {
            direction: Direction::Down,
            kind: MessageKind::LayerVarDown,
            layer: Some(layer),
            scalar_count: feat as u64,
        });
        transcript.record_layer_round();
        let var_bar = weighted_vector(&variances, weights);

        let stats = BnStats {
            mean: mean_bar,
            variance: var_bar,
        };
        for pass in &mut passes {
            pass.bn_apply(stats.clone())?;
        }
        synced.push(stats);
    }

    let mut outputs = Vec::with_capacity(passes.len());
    for mut pass in passes {
        if pass.advance_to_bn()?.is_some() {
            return Err(Error::Protocol(
                "batch-norm layer left unsynchronized".into(),
            ));
        }
        outputs.push(pass.into_output());
    }
    Ok((outputs, StatsSet { layers: synced }))
}

/// Layer-wise backward synchronization: from the last batch-norm layer
/// to the first, clients upload their local stat gradients (computed
/// with the already-adopted downstream values), adopt the weighted
/// average, and continue the chain; one barrier per layer.
pub fn fedtan_backward_sync(
    spec: &NetworkSpec,
    params: &[&ModelParams],
    caches: &[ForwardCache],
    labels: &[Vec<usize>],
    weights: &[f64],
    parallel: bool,
    transcript: &mut ProtocolTranscript,
) -> Result<(Vec<(f64, ModelGrads)>, StatGradsSet)> {
    if params.len() != caches.len() || params.len() != labels.len() || params.is_empty() {
        return Err(Error::Protocol(
            "backward sync needs one cache and label set per client".into(),
        ));
    }
    let mut passes = params
        .iter()
        .zip(caches)
        .zip(labels)
        .map(|((p, c), l)| BackwardPass::new(spec, p, c, l))
        .collect::<Result<Vec<_>>>()?;

    let features = spec.bn_feature_counts();
    let mut adopted_rev = Vec::with_capacity(features.len());
    loop {
        let locals: Vec<Option<(usize, BnStatGrads)>> = if parallel {
            passes
                .par_iter_mut()
                .map(|p| p.advance_to_bn())
                .collect::<Result<_>>()?
        } else {
            passes
                .iter_mut()
                .map(|p| p.advance_to_bn())
                .collect::<Result<_>>()?
        };
        let Some((layer, _)) = locals[0] else {
            if locals.iter().any(|l| l.is_some()) {
                return Err(Error::Protocol("clients desynchronized in backward".into()));
            }
            break;
        };
        if locals.iter().any(|l| !matches!(l, Some((idx, _)) if *idx == layer)) {
            return Err(Error::Protocol(format!(
                "clients desynchronized at batch-norm layer {layer} in backward"
            )));
        }
        let feat = features[layer];

        let d_means: Vec<Array1<f64>> = locals
            .iter()
            .map(|l| l.as_ref().unwrap().1.d_mean.clone())
            .collect();
        let d_vars: Vec<Array1<f64>> = locals
            .iter()
            .map(|l| l.as_ref().unwrap().1.d_variance.clone())
            .collect();
        for _ in 0..passes.len() {
            transcript.push(Message {
                direction: Direction::Up,
                kind: MessageKind::LayerStatGradUp,
                layer: Some(layer),
                scalar_count: 2 * feat as u64,
            });
        }
        transcript.push(Message {
            direction: Direction::Down,
            kind: MessageKind::LayerStatGradDown,
            layer: Some(layer),
            scalar_count: 2 * feat as u64,
        });
        transcript.record_layer_round();

        let adopted = BnStatGrads {
            d_mean: weighted_vector(&d_means, weights),
            d_variance: weighted_vector(&d_vars, weights),
        };
        for pass in &mut passes {
            pass.bn_apply(adopted.clone())?;
        }
        adopted_rev.push(adopted);
    }

    let results = passes
        .into_iter()
        .map(|p| {
            let (loss, grads, _) = p.into_grads();
            (loss, grads)
        })
        .collect();
    adopted_rev.reverse();
    Ok((
        results,
        StatGradsSet {
            layers: adopted_rev,
        },
    ))
}

fn model_payload_scalars(scheme: Scheme, params: &ModelParams, stats: &StatsSet) -> u64 {
    let w = params.param_count() as u64;
    let s = stats.scalar_count() as u64;
    match scheme {
        Scheme::FedBn => w - params.bn_param_count() as u64,
        Scheme::SiloBn => w,
        _ => w + s,
    }
}

fn adopt_dense_from(dst: &mut ModelParams, src: &ModelParams) {
    for (d, s) in dst.layers.iter_mut().zip(&src.layers) {
        if let (LayerParams::Dense(dd), LayerParams::Dense(sd)) = (d, s) {
            dd.weights.assign(&sd.weights);
            dd.bias.assign(&sd.bias);
        }
    }
}

/// One full iteration: broadcast, local updating (with the scheme's sync
/// step when applicable), upload, aggregate. Returns the weighted mean
/// training loss observed across clients.
pub fn run_round(
    spec: &NetworkSpec,
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &SchemeConfig,
    r: usize,
    transcript: &mut ProtocolTranscript,
) -> Result<f64> {
    if clients.len() != server.weights.len() || clients.is_empty() {
        return Err(Error::Protocol(format!(
            "lockstep violation: {} clients for {} weights",
            clients.len(),
            server.weights.len()
        )));
    }
    let scheme = cfg.scheme;
    let lr = cfg.lr.at(r);
    let frozen_phase = matches!(scheme, Scheme::FedTanII { freeze_at } if r > freeze_at);
    let frozen_stats = if frozen_phase {
        Some(server.frozen_stats.clone().ok_or_else(|| {
            Error::Protocol("fedtan2 entered frozen phase without stored stats".into())
        })?)
    } else {
        None
    };

    // Broadcast.
    if scheme != Scheme::Centralized {
        transcript.push(Message {
            direction: Direction::Down,
            kind: MessageKind::GlobalModel,
            layer: None,
            scalar_count: model_payload_scalars(scheme, &server.params, &server.moving),
        });
    }
    for client in clients.iter_mut() {
        match scheme {
            Scheme::FedBn => adopt_dense_from(&mut client.params, &server.params),
            Scheme::SiloBn => client.params = server.params.clone(),
            _ => {
                client.params = server.params.clone();
                client.moving = match &frozen_stats {
                    Some(f) => f.clone(),
                    None => server.moving.clone(),
                };
            }
        }
    }

    // Local updating.
    let n = clients.len();
    let mut loss_sums = vec![0.0; n];
    let mut remaining_steps = cfg.local_steps;

    if scheme.syncs_at(r) {
        let sampled: Vec<(Array2<f64>, Vec<usize>)> = clients
            .iter_mut()
            .map(|c| c.sample_batch(cfg.batch))
            .collect();
        let batches: Vec<Array2<f64>> = sampled.iter().map(|(b, _)| b.clone()).collect();
        let batch_labels: Vec<Vec<usize>> = sampled.into_iter().map(|(_, l)| l).collect();

        let (forwarded, synced_stats) = {
            let refs: Vec<&ModelParams> = clients.iter().map(|c| &c.params).collect();
            fedtan_forward_sync(
                spec,
                &refs,
                &batches,
                &server.weights,
                cfg.parallel_clients,
                transcript,
            )?
        };
        let caches: Vec<ForwardCache> = forwarded.into_iter().map(|(_, c)| c).collect();

        if scheme.syncs_stat_grads() {
            let (results, _) = {
                let refs: Vec<&ModelParams> = clients.iter().map(|c| &c.params).collect();
                fedtan_backward_sync(
                    spec,
                    &refs,
                    &caches,
                    &batch_labels,
                    &server.weights,
                    cfg.parallel_clients,
                    transcript,
                )?
            };
            for (i, (client, (loss, grads))) in clients.iter_mut().zip(results).enumerate() {
                client.params.sgd_step(&grads, lr);
                client.moving.moving_update(&synced_stats, cfg.rho);
                loss_sums[i] += loss;
            }
        } else {
            // Forward-only sync: stats are global, stat grads stay local.
            for (i, client) in clients.iter_mut().enumerate() {
                let (loss, grads, _) =
                    model_backward(spec, &client.params, &caches[i], &batch_labels[i], None)?;
                client.params.sgd_step(&grads, lr);
                client.moving.moving_update(&synced_stats, cfg.rho);
                loss_sums[i] += loss;
            }
        }
        remaining_steps -= 1;
    }

    if remaining_steps > 0 {
        let frozen_ref = frozen_stats.as_ref();
        let step_losses: Vec<f64> = if cfg.parallel_clients {
            clients
                .par_iter_mut()
                .map(|c| {
                    local_update_plain(
                        spec,
                        c,
                        remaining_steps,
                        lr,
                        cfg.batch,
                        cfg.rho,
                        frozen_ref,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            clients
                .iter_mut()
                .map(|c| {
                    local_update_plain(
                        spec,
                        c,
                        remaining_steps,
                        lr,
                        cfg.batch,
                        cfg.rho,
                        frozen_ref,
                    )
                })
                .collect::<Result<_>>()?
        };
        for (sum, step_loss) in loss_sums.iter_mut().zip(step_losses) {
            *sum += step_loss * remaining_steps as f64;
        }
    }

    // Upload and aggregate, in fixed client order.
    if scheme != Scheme::Centralized {
        let payload = model_payload_scalars(scheme, &server.params, &server.moving);
        for _ in 0..n {
            transcript.push(Message {
                direction: Direction::Up,
                kind: MessageKind::LocalModel,
                layer: None,
                scalar_count: payload,
            });
        }
        transcript.record_model_round();
    }

    let mut agg = clients[0].params.zeros_like();
    for (client, &w) in clients.iter().zip(&server.weights) {
        agg.add_scaled(&client.params, w);
    }
    server.params = agg;

    // Local-BN schemes deploy the aggregated shared parameters next to
    // their local batch-norm state; reflect that in the client models so
    // per-client evaluation sees what the next broadcast would deliver.
    match scheme {
        Scheme::FedBn => {
            for client in clients.iter_mut() {
                adopt_dense_from(&mut client.params, &server.params);
            }
        }
        Scheme::SiloBn => {
            for client in clients.iter_mut() {
                client.params = server.params.clone();
            }
        }
        _ => {}
    }

    if frozen_phase {
        server.moving = frozen_stats.expect("frozen phase checked above");
    } else {
        let mut stats = clients[0].moving.zeros_like();
        for (client, &w) in clients.iter().zip(&server.weights) {
            stats.add_scaled(&client.moving, w);
        }
        server.moving = stats;
    }
    if let Scheme::FedTanII { freeze_at } = scheme {
        if r == freeze_at {
            server.frozen_stats = Some(server.moving.clone());
        }
    }

    let mean_loss: f64 = loss_sums
        .iter()
        .zip(&server.weights)
        .map(|(sum, &w)| w * sum / cfg.local_steps as f64)
        .sum();
    Ok(mean_loss)
}

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::tensor::network::{BnLayerParams, BnStatGrads, BnStats, DenseLayerParams};

/// Per-feature mean over the batch axis.
pub fn batch_mean(input: &ArrayView2<f64>) -> Array1<f64> {
    input.mean_axis(Axis(0)).expect("nonempty batch")
}

/// Per-feature population variance of `input` measured against `mean`
/// (which need not be the batch's own mean; the sync protocol resets it).
pub fn variance_against(input: &ArrayView2<f64>, mean: &Array1<f64>) -> Array1<f64> {
    let centered = input - mean;
    (&centered * &centered)
        .mean_axis(Axis(0))
        .expect("nonempty batch")
}

/// Batch mean and variance in one pass; the divide-by-B convention.
pub fn batch_stats(input: &ArrayView2<f64>) -> BnStats {
    let mean = batch_mean(input);
    let variance = variance_against(input, &mean);
    BnStats { mean, variance }
}

fn check_bn_dims(input: &ArrayView2<f64>, features: usize, what: &str) -> Result<()> {
    if input.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if input.ncols() != features {
        return Err(Error::shape(format!(
            "{what}: {} features, layer has {features}",
            input.ncols()
        )));
    }
    Ok(())
}

/// Normalize a batch. Without an override the stats are computed from
/// the batch itself; with one, the supplied stats are used verbatim
/// (the sync-reset and inference paths).
///
/// Returns (output, stats used, normalized activations).
pub fn bn_forward(
    input: &ArrayView2<f64>,
    params: &BnLayerParams,
    stats_override: Option<&BnStats>,
) -> Result<(Array2<f64>, BnStats, Array2<f64>)> {
    check_bn_dims(input, params.features(), "bn_forward")?;
    let stats = match stats_override {
        Some(s) => {
            if s.features() != params.features() {
                return Err(Error::shape(format!(
                    "bn_forward: override has {} features, layer has {}",
                    s.features(),
                    params.features()
                )));
            }
            s.clone()
        }
        None => batch_stats(input),
    };
    let inv_std = stats.variance.mapv(|v| 1.0 / (v + params.epsilon).sqrt());
    let normalized = (input - &stats.mean) * &inv_std;
    let output = &normalized * &params.gamma + &params.beta;
    Ok((output, stats, normalized))
}

/// Gradients of the loss w.r.t. batch variance and batch mean, from the
/// cotangent of the normalized activations. The mean gradient drops the
/// variance-through-mean term, which vanishes at the batch optimum and
/// matches treating the stats as free inputs on the override path.
pub fn bn_stat_grads(
    d_normalized: &Array2<f64>,
    input: &ArrayView2<f64>,
    stats: &BnStats,
    epsilon: f64,
) -> BnStatGrads {
    let inv_std = stats.variance.mapv(|v| 1.0 / (v + epsilon).sqrt());
    let inv_std3 = &inv_std * &inv_std * &inv_std;
    let centered = input - &stats.mean;
    let d_variance = (d_normalized * &centered)
        .sum_axis(Axis(0))
        .iter()
        .zip(inv_std3.iter())
        .map(|(s, i3)| -0.5 * s * i3)
        .collect();
    let d_mean = d_normalized
        .sum_axis(Axis(0))
        .iter()
        .zip(inv_std.iter())
        .map(|(s, i)| -s * i)
        .collect();
    BnStatGrads { d_mean, d_variance }
}

/// Cotangent of the layer input, combining the direct path with the
/// stat-gradient paths: dy = dnorm/sqrt(var+eps) + dvar*2(y-mu)/B + dmu/B.
pub fn bn_input_grad(
    d_normalized: &Array2<f64>,
    input: &ArrayView2<f64>,
    stats: &BnStats,
    stat_grads: &BnStatGrads,
    epsilon: f64,
) -> Array2<f64> {
    let batch = input.nrows() as f64;
    let inv_std = stats.variance.mapv(|v| 1.0 / (v + epsilon).sqrt());
    let centered = input - &stats.mean;
    let mut d_input = d_normalized * &inv_std;
    d_input += &(&centered * &(stat_grads.d_variance.mapv(|d| 2.0 * d / batch)));
    d_input += &stat_grads.d_mean.mapv(|d| d / batch);
    d_input
}

/// Backward pass of a batch-norm layer given the tensors retained by the
/// matching forward call. With `stat_grads_override` the supplied values
/// replace the locally computed stat gradients before the input cotangent
/// is assembled, and are also the ones returned.
pub fn bn_backward(
    d_output: &ArrayView2<f64>,
    input: &ArrayView2<f64>,
    normalized: &Array2<f64>,
    stats: &BnStats,
    params: &BnLayerParams,
    stat_grads_override: Option<&BnStatGrads>,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>, BnStatGrads)> {
    check_bn_dims(input, params.features(), "bn_backward")?;
    if d_output.raw_dim() != input.raw_dim() {
        return Err(Error::shape(format!(
            "bn_backward: cotangent {:?} vs input {:?}",
            d_output.shape(),
            input.shape()
        )));
    }
    let d_normalized = d_output * &params.gamma;
    let stat_grads = match stat_grads_override {
        Some(g) => {
            if g.d_mean.len() != params.features() {
                return Err(Error::shape(format!(
                    "bn_backward: override has {} features, layer has {}",
                    g.d_mean.len(),
                    params.features()
                )));
            }
            g.clone()
        }
        None => bn_stat_grads(&d_normalized, input, stats, params.epsilon),
    };
    let d_input = bn_input_grad(&d_normalized, input, stats, &stat_grads, params.epsilon);
    let d_gamma = (d_output * normalized).sum_axis(Axis(0));
    let d_beta = d_output.sum_axis(Axis(0));
    Ok((d_input, d_gamma, d_beta, stat_grads))
}

pub fn dense_forward(input: &ArrayView2<f64>, params: &DenseLayerParams) -> Result<Array2<f64>> {
    if input.ncols() != params.weights.ncols() {
        return Err(Error::shape(format!(
            "dense_forward: input width {} vs weights {}x{}",
            input.ncols(),
            params.weights.nrows(),
            params.weights.ncols()
        )));
    }
    Ok(input.dot(&params.weights.t()) + &params.bias)
}

pub fn dense_backward(
    d_output: &ArrayView2<f64>,
    input: &ArrayView2<f64>,
    params: &DenseLayerParams,
) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    if d_output.ncols() != params.weights.nrows() || input.ncols() != params.weights.ncols() {
        return Err(Error::shape(format!(
            "dense_backward: cotangent width {} / input width {} vs weights {}x{}",
            d_output.ncols(),
            input.ncols(),
            params.weights.nrows(),
            params.weights.ncols()
        )));
    }
    let d_weights = d_output.t().dot(input);
    let d_bias = d_output.sum_axis(Axis(0));
    let d_input = d_output.dot(&params.weights);
    Ok((d_input, d_weights, d_bias))
}

pub fn relu_forward(input: &ArrayView2<f64>) -> Array2<f64> {
    input.mapv(|x| x.max(0.0))
}

pub fn relu_backward(d_output: &ArrayView2<f64>, input: &ArrayView2<f64>) -> Array2<f64> {
    let mut d = d_output.to_owned();
    d.zip_mut_with(input, |g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    d
}

/// Mean-over-batch softmax cross entropy. Returns the loss and the logits
/// cotangent (softmax - onehot) / B, so every downstream gradient carries
/// the expectation convention.
pub fn softmax_cross_entropy(
    logits: &ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let batch = logits.nrows();
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "softmax_cross_entropy: {} logits rows vs {} labels",
            batch,
            labels.len()
        )));
    }
    let classes = logits.ncols();
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let inv_batch = 1.0 / batch as f64;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum_exp: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += (lse - row[labels[i]]) * inv_batch;
        for (j, &x) in row.iter().enumerate() {
            let p = (x - lse).exp();
            d_logits[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) * inv_batch;
        }
    }
    Ok((loss, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn bn_forward_symmetric_pair() {
        let input = array![[-1.0], [1.0]];
        let params = BnLayerParams::identity(1, 1e-5);
        let (out, stats, _) = bn_forward(&input.view(), &params, None).unwrap();
        assert!(stats.mean[0].abs() < 1e-15);
        assert!((stats.variance[0] - 1.0).abs() < 1e-15);
        let expected = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!((out[[0, 0]] + expected).abs() < 1e-12);
        assert!((out[[1, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn bn_forward_constant_column_yields_beta() {
        let input = array![[3.0], [3.0], [3.0]];
        let mut params = BnLayerParams::identity(1, 1e-5);
        params.gamma[0] = 2.5;
        params.beta[0] = -0.75;
        let (out, stats, normalized) = bn_forward(&input.view(), &params, None).unwrap();
        assert_eq!(stats.mean[0], 3.0);
        assert_eq!(stats.variance[0], 0.0);
        for v in normalized.iter() {
            assert_eq!(*v, 0.0);
        }
        for v in out.iter() {
            assert_eq!(*v, -0.75);
        }
    }

    #[test]
    fn bn_forward_stats_match_two_pass_oracle() {
        // Straightforward two-pass mean/variance, no shortcuts.
        let input = array![
            [0.31, -1.2, 0.5],
            [2.0, 0.7, -0.3],
            [-0.4, 0.25, 1.9],
            [1.1, -0.6, 0.05]
        ];
        let params = BnLayerParams::identity(3, 1e-5);
        let (_, stats, _) = bn_forward(&input.view(), &params, None).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = input.column(j).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
            assert!((stats.mean[j] - mean).abs() < 1e-12);
            assert!((stats.variance[j] - var).abs() < 1e-12);
        }
    }

    #[test]
    fn bn_forward_rejects_empty_and_mismatched() {
        let params = BnLayerParams::identity(2, 1e-5);
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            bn_forward(&empty.view(), &params, None),
            Err(Error::EmptyBatch)
        ));
        let wrong = Array2::<f64>::zeros((3, 4));
        assert!(matches!(
            bn_forward(&wrong.view(), &params, None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn bn_backward_zero_cotangent() {
        let input = array![[0.3, -0.2], [1.4, 0.9], [-0.8, 0.1]];
        let params = BnLayerParams::identity(2, 1e-5);
        let (_, stats, normalized) = bn_forward(&input.view(), &params, None).unwrap();
        let zeros = Array2::zeros((3, 2));
        let (d_in, d_gamma, d_beta, sg) = bn_backward(
            &zeros.view(),
            &input.view(),
            &normalized,
            &stats,
            &params,
            None,
        )
        .unwrap();
        assert!(d_in.iter().all(|&x| x == 0.0));
        assert!(d_gamma.iter().all(|&x| x == 0.0));
        assert!(d_beta.iter().all(|&x| x == 0.0));
        assert!(sg.d_mean.iter().all(|&x| x == 0.0));
        assert!(sg.d_variance.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dense_identity_and_zero_weights() {
        let input = array![[1.0, 2.0], [3.0, 4.0]];
        let id = DenseLayerParams {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
        };
        let out = dense_forward(&input.view(), &id).unwrap();
        assert_eq!(out, input);

        let zero = DenseLayerParams {
            weights: Array2::zeros((3, 2)),
            bias: array![1.0, -2.0, 0.5],
        };
        let out = dense_forward(&input.view(), &zero).unwrap();
        for row in out.outer_iter() {
            assert_eq!(row[0], 1.0);
            assert_eq!(row[1], -2.0);
            assert_eq!(row[2], 0.5);
        }
    }

    #[test]
    fn dense_matches_naive_triple_loop() {
        let input = array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]];
        let weights = array![
            [0.1, 0.2, 0.3],
            [-0.4, 0.5, -0.6],
            [0.7, -0.8, 0.9],
            [1.0, 1.1, -1.2]
        ];
        let bias = array![0.01, 0.02, 0.03, 0.04];
        let params = DenseLayerParams {
            weights: weights.clone(),
            bias: bias.clone(),
        };
        let out = dense_forward(&input.view(), &params).unwrap();
        for b in 0..2 {
            for o in 0..4 {
                let mut acc = bias[o];
                for i in 0..3 {
                    acc += input[[b, i]] * weights[[o, i]];
                }
                assert!((out[[b, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_single_sample_identity_backward() {
        let input = array![[0.7, -0.3]];
        let params = DenseLayerParams {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
        };
        let d_out = array![[0.25, -1.5]];
        let (d_in, _, _) = dense_backward(&d_out.view(), &input.view(), &params).unwrap();
        assert_eq!(d_in, d_out);
    }

    #[test]
    fn softmax_uniform_logits_loss_is_ln_k() {
        let logits = Array2::zeros((4, 7));
        let labels = vec![0, 3, 6, 2];
        let (loss, _) = softmax_cross_entropy(&logits.view(), &labels).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_huge_margin_loss_near_zero() {
        let mut logits = Array2::zeros((2, 3));
        logits[[0, 1]] = 100.0;
        logits[[1, 0]] = 100.0;
        let (loss, _) = softmax_cross_entropy(&logits.view(), &[1, 0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn softmax_matches_log_sum_exp_oracle() {
        let logits = array![
            [0.3, -1.2, 2.2, 0.0],
            [1.5, 1.5, -0.5, 0.25],
            [-2.0, 0.1, 0.4, 3.0]
        ];
        let labels = vec![2, 0, 3];
        let (loss, _) = softmax_cross_entropy(&logits.view(), &labels).unwrap();
        let mut expected = 0.0;
        for (i, row) in logits.outer_iter().enumerate() {
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            expected += (lse - row[labels[i]]) / 3.0;
        }
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_out_of_range_label() {
        let logits = Array2::zeros((1, 3));
        assert!(matches!(
            softmax_cross_entropy(&logits.view(), &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }
}

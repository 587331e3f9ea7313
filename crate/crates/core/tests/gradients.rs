//! Finite-difference oracles for the manual backward pass.

use fedtan_core::diag::{finite_difference_check, FdTarget, FD_ABS_FLOOR, FD_STEP};
use fedtan_core::tensor::{
    bn_backward, bn_forward, model_backward, model_forward, BnLayerParams, LayerKind, ModelParams,
    NetworkSpec, StatsMode,
};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0))
}

fn random_labels(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Vec<usize> {
    (0..rows).map(|_| rng.random_range(0..classes)).collect()
}

#[test]
fn full_model_fd_on_tiny_bn_net() {
    // 6 -> 4 -> 3 with one batch-norm layer, batch of 5.
    let spec = NetworkSpec::bn_mlp(&[6, 4, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let batch = random_batch(&mut rng, 5, 6);
    let labels = random_labels(&mut rng, 5, 3);

    let report =
        finite_difference_check(&spec, &params, &batch, &labels, FD_STEP, FdTarget::Weights)
            .unwrap();
    assert!(
        report.max_rel_error < TOL,
        "weight gradients off by {}",
        report.max_rel_error
    );

    let report =
        finite_difference_check(&spec, &params, &batch, &labels, FD_STEP, FdTarget::Stats)
            .unwrap();
    assert!(
        report.max_rel_error < TOL,
        "stat gradients off by {}",
        report.max_rel_error
    );
}

#[test]
fn frozen_stats_backward_matches_fd() {
    let spec = NetworkSpec::bn_mlp(&[5, 6, 4, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let batch = random_batch(&mut rng, 6, 5);
    let labels = random_labels(&mut rng, 6, 3);
    let report = finite_difference_check(
        &spec,
        &params,
        &batch,
        &labels,
        FD_STEP,
        FdTarget::FrozenStatsWeights,
    )
    .unwrap();
    assert!(
        report.max_rel_error < TOL,
        "frozen-stat gradients off by {}",
        report.max_rel_error
    );
}

#[test]
fn coarse_step_degrades_the_check() {
    // Taylor remainder: step 1.0 must be visibly worse than step 1e-5.
    let spec = NetworkSpec::bn_mlp(&[4, 4, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let batch = random_batch(&mut rng, 6, 4);
    let labels = random_labels(&mut rng, 6, 3);
    let fine = finite_difference_check(&spec, &params, &batch, &labels, 1e-5, FdTarget::Weights)
        .unwrap()
        .max_rel_error;
    let coarse = finite_difference_check(&spec, &params, &batch, &labels, 1.0, FdTarget::Weights)
        .unwrap()
        .max_rel_error;
    assert!(fine < TOL);
    assert!(coarse > 100.0 * fine.max(1e-9), "coarse {coarse} vs fine {fine}");
}

#[test]
fn zero_loss_construction_has_vanishing_gradients() {
    // Saturated logits on the true class: softmax is one-hot to rounding,
    // so every gradient is ~0.
    let spec = NetworkSpec::plain_mlp(&[3, 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ModelParams::init(&spec, 1e-5, &mut rng);
    if let fedtan_core::tensor::LayerParams::Dense(d) = &mut params.layers[0] {
        d.weights.fill(0.0);
        d.bias[0] = 60.0;
        d.bias[1] = -60.0;
    }
    let batch = random_batch(&mut rng, 4, 3);
    let labels = vec![0; 4];
    let (logits, cache) = model_forward(&spec, &params, &batch.view(), StatsMode::Batch).unwrap();
    let (loss, grads, _) = model_backward(&spec, &params, &cache, &labels, None).unwrap();
    assert!(loss < 1e-12, "loss {loss}");
    assert!(grads.flatten().iter().all(|g| g.abs() < 1e-12));
    assert!(logits.iter().all(|x| x.is_finite()));
}

#[test]
fn dense_backward_fd_random_shapes() {
    let spec = NetworkSpec::plain_mlp(&[7, 5, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let batch = random_batch(&mut rng, 9, 7);
    let labels = random_labels(&mut rng, 9, 4);
    let report =
        finite_difference_check(&spec, &params, &batch, &labels, FD_STEP, FdTarget::Weights)
            .unwrap();
    assert!(report.max_rel_error < TOL, "{}", report.max_rel_error);
}

/// Quadratic loss on a single batch-norm layer: L = sum of squared
/// outputs. Central differences are exact for quadratics in the output,
/// and this exercises the input-cotangent path with stats recomputed per
/// perturbation.
#[test]
fn bn_input_gradient_matches_fd_with_recomputed_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_batch(&mut rng, 8, 5);
    let mut params = BnLayerParams::identity(5, 1e-5);
    for g in params.gamma.iter_mut() {
        *g = rng.random_range(0.5..1.5);
    }
    for b in params.beta.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }

    let loss_of = |y: &Array2<f64>| -> f64 {
        let (out, _, _) = bn_forward(&y.view(), &params, None).unwrap();
        out.iter().map(|x| x * x).sum()
    };

    let (out, stats, normalized) = bn_forward(&input.view(), &params, None).unwrap();
    let d_output = out.mapv(|x| 2.0 * x);
    let (d_input, _, _, stat_grads) = bn_backward(
        &d_output.view(),
        &input.view(),
        &normalized,
        &stats,
        &params,
        None,
    )
    .unwrap();

    let h = 1e-5;
    let mut worst = 0.0f64;
    for b in 0..8 {
        for j in 0..5 {
            let mut plus = input.clone();
            plus[[b, j]] += h;
            let mut minus = input.clone();
            minus[[b, j]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let diff = (fd - d_input[[b, j]]).abs();
            if diff > FD_ABS_FLOOR {
                worst = worst.max(diff / fd.abs().max(d_input[[b, j]].abs()));
            }
        }
    }
    assert!(worst < TOL, "d_input off by {worst}");

    // Stat grads against differences over the override path: mean and
    // variance as free inputs.
    let loss_with_stats = |mean_delta: (usize, f64), var_delta: (usize, f64)| -> f64 {
        let mut s = stats.clone();
        s.mean[mean_delta.0] += mean_delta.1;
        s.variance[var_delta.0] += var_delta.1;
        let (out, _, _) = bn_forward(&input.view(), &params, Some(&s)).unwrap();
        out.iter().map(|x| x * x).sum()
    };
    let mut worst = 0.0f64;
    for j in 0..5 {
        let fd_mean =
            (loss_with_stats((j, h), (0, 0.0)) - loss_with_stats((j, -h), (0, 0.0))) / (2.0 * h);
        let fd_var =
            (loss_with_stats((0, 0.0), (j, h)) - loss_with_stats((0, 0.0), (j, -h))) / (2.0 * h);
        for (fd, analytic) in [
            (fd_mean, stat_grads.d_mean[j]),
            (fd_var, stat_grads.d_variance[j]),
        ] {
            let diff = (fd - analytic).abs();
            if diff > FD_ABS_FLOOR {
                worst = worst.max(diff / fd.abs().max(analytic.abs()));
            }
        }
    }
    assert!(worst < TOL, "stat grads off by {worst}");
}

#[test]
fn linear_layer_quadratic_loss_is_exact() {
    // Identity-activation dense layer with L = 0.5 * sum(logits^2):
    // the gradient is linear, so central differences are exact to
    // rounding. Hand-rolled oracle, no library gradient involved.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let input = random_batch(&mut rng, 4, 3);
    let mut weights = Array2::zeros((2, 3));
    for w in weights.iter_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let params = fedtan_core::tensor::DenseLayerParams {
        weights: weights.clone(),
        bias: ndarray::Array1::zeros(2),
    };
    let out = fedtan_core::tensor::dense_forward(&input.view(), &params).unwrap();
    let d_out = out.clone();
    let (_, d_weights, _) =
        fedtan_core::tensor::dense_backward(&d_out.view(), &input.view(), &params).unwrap();

    let loss_of = |w: &Array2<f64>| -> f64 {
        let p = fedtan_core::tensor::DenseLayerParams {
            weights: w.clone(),
            bias: ndarray::Array1::zeros(2),
        };
        let out = fedtan_core::tensor::dense_forward(&input.view(), &p).unwrap();
        0.5 * out.iter().map(|x| x * x).sum::<f64>()
    };
    // Central differences are exact for quadratics at any step, so a
    // large step keeps roundoff out of the picture entirely.
    let h = 0.5;
    for o in 0..2 {
        for i in 0..3 {
            let mut plus = weights.clone();
            plus[[o, i]] += h;
            let mut minus = weights.clone();
            minus[[o, i]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let rel = (fd - d_weights[[o, i]]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-9, "quadratic case not exact: {rel}");
        }
    }
}

#[test]
fn relu_position_follows_spec_ordering() {
    // dense -> bn -> relu -> dense; make sure the builder produced that.
    let spec = NetworkSpec::bn_mlp(&[784, 30, 10]).unwrap();
    let kinds = spec.layers();
    assert_eq!(kinds.len(), 4);
    assert!(matches!(kinds[0], LayerKind::Dense { input: 784, output: 30 }));
    assert!(matches!(kinds[1], LayerKind::BatchNorm { features: 30 }));
    assert!(matches!(kinds[2], LayerKind::Relu));
    assert!(matches!(kinds[3], LayerKind::Dense { input: 30, output: 10 }));
    assert_eq!(spec.bn_layer_count(), 1);
}

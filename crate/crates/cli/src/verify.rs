//! The `verify` subcommand: an executable battery of the library's
//! oracle checks, one pass/fail line per check.

use anyhow::{bail, Result};
use fedtan_core::data::{partition_by_label, synth_gaussian_with, PartitionSpec};
use fedtan_core::diag::{
    check_equivalence, estimate_deviation, finite_difference_check, FdTarget, FD_STEP,
};
use fedtan_core::metrics::{extra_round_fraction, format_mb, per_iteration_bytes, resnet20_gn_size_spec, resnet20_size_spec};
use fedtan_core::sim::{
    fedtan_backward_sync, fedtan_forward_sync, run_experiment, BatchMode, LrSchedule,
    ProtocolTranscript, Scheme, SchemeConfig,
};
use fedtan_core::tensor::{
    model_backward, model_forward, ModelGrads, ModelParams, NetworkSpec, StatsMode, StatsSet,
};
use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = (&'static str, fn() -> Result<()>);

fn full_batch_cfg(scheme: Scheme, iterations: usize, lr: f64, seed: u64) -> SchemeConfig {
    let mut cfg = SchemeConfig::new(scheme, iterations);
    cfg.local_steps = 1;
    cfg.batch = BatchMode::Full;
    cfg.lr = LrSchedule::constant(lr);
    cfg.seed = seed;
    cfg
}

fn gradient_fd() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for trial in 0..5u64 {
        let widths = [4 + (trial as usize % 3), 5, 3];
        let spec = NetworkSpec::bn_mlp(&[widths[0], widths[1], widths[2]])?;
        let params = ModelParams::init(&spec, 1e-5, &mut rng);
        let batch =
            Array2::from_shape_fn((6, widths[0]), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..widths[2])).collect();
        for target in [FdTarget::Weights, FdTarget::Stats, FdTarget::FrozenStatsWeights] {
            let report =
                finite_difference_check(&spec, &params, &batch, &labels, FD_STEP, target)?;
            if report.max_rel_error >= 1e-4 {
                bail!(
                    "trial {trial} {target:?}: max relative error {}",
                    report.max_rel_error
                );
            }
        }
    }
    Ok(())
}

fn aggregation_exactness() -> Result<()> {
    let spec = NetworkSpec::bn_mlp(&[4, 6, 5, 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    for trial in 0..5 {
        let n = 2 + trial % 4;
        let mut batches = Vec::new();
        let mut sizes = Vec::new();
        for _ in 0..n {
            let rows = rng.random_range(2..8);
            batches.push(Array2::from_shape_fn((rows, 4), |_| {
                rng.random_range(-1.0..1.0)
            }));
            sizes.push(rows);
        }
        let total: usize = sizes.iter().sum();
        let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        let refs: Vec<&ModelParams> = (0..n).map(|_| &params).collect();
        let mut transcript = ProtocolTranscript::new();
        let (_, synced) =
            fedtan_forward_sync(&spec, &refs, &batches, &weights, false, &mut transcript)?;
        let views: Vec<_> = batches.iter().map(|b| b.view()).collect();
        let union = concatenate(Axis(0), &views)?;
        let (_, cache) = model_forward(&spec, &params, &union.view(), StatsMode::Batch)?;
        let diff = synced.max_abs_diff(&cache.stats_set());
        if diff >= 1e-12 {
            bail!("trial {trial}: synced stats off union stats by {diff}");
        }
    }
    Ok(())
}

fn gradient_parity() -> Result<()> {
    let spec = NetworkSpec::bn_mlp(&[4, 5, 3])?;
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let union = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
    let batches = vec![
        union.slice(ndarray::s![0..5, ..]).to_owned(),
        union.slice(ndarray::s![5..10, ..]).to_owned(),
    ];
    let label_parts = vec![labels[0..5].to_vec(), labels[5..10].to_vec()];
    let weights = [0.5, 0.5];
    let refs = vec![&params, &params];
    let mut transcript = ProtocolTranscript::new();
    let (fwd, _) =
        fedtan_forward_sync(&spec, &refs, &batches, &weights, false, &mut transcript)?;
    let caches: Vec<_> = fwd.into_iter().map(|(_, c)| c).collect();
    let (results, _) = fedtan_backward_sync(
        &spec,
        &refs,
        &caches,
        &label_parts,
        &weights,
        false,
        &mut transcript,
    )?;
    let (_, cache) = model_forward(&spec, &params, &union.view(), StatsMode::Batch)?;
    let (_, central, _) = model_backward(&spec, &params, &cache, &labels, None)?;
    let mut avg = ModelGrads::zeros_like(&params);
    for ((_, grads), &w) in results.iter().zip(&weights) {
        avg.add_scaled(grads, w);
    }
    let diff = avg.max_abs_diff(&central);
    if diff >= 1e-10 {
        bail!("aggregate gradient off the centralized gradient by {diff}");
    }
    Ok(())
}

fn trajectory_equivalence() -> Result<()> {
    let ds = synth_gaussian_with(2, 15, 6, 1.0, 41)?;
    let shards = partition_by_label(&ds, 2, 1)?;
    let indices: Vec<usize> = shards.union_indices();
    let union = PartitionSpec::from_indices(vec![indices])?;
    let spec = NetworkSpec::bn_mlp(&[6, 5, 2])?;

    let fedtan = full_batch_cfg(Scheme::FedTan, 15, 0.2, 7);
    let central = full_batch_cfg(Scheme::Centralized, 15, 0.2, 7);
    let report = check_equivalence(&spec, &ds, &shards, &fedtan, &union, &central, 15)?;
    if report.max() >= 1e-10 {
        bail!("fedtan trajectory diverged from centralized by {}", report.max());
    }

    let fedavg = full_batch_cfg(Scheme::FedAvgBn, 15, 0.2, 7);
    let report = check_equivalence(&spec, &ds, &shards, &fedavg, &union, &central, 10)?;
    match report.first_exceeding(1e-3) {
        Some(_) => Ok(()),
        None => bail!("fedavg+bn unexpectedly tracked the centralized trajectory"),
    }
}

fn deviation_signs() -> Result<()> {
    let ds = synth_gaussian_with(4, 10, 5, 1.0, 45)?;
    let spec = NetworkSpec::bn_mlp(&[5, 4, 4])?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParams::init(&spec, 1e-5, &mut rng);
    let shards = partition_by_label(&ds, 4, 1)?;
    let report = estimate_deviation(&spec, &params, &ds, &shards)?;
    if report.b.iter().any(|&b| b <= 0.0) {
        bail!("disjoint shards should have positive deviation");
    }
    let plain = NetworkSpec::plain_mlp(&[5, 4, 4])?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let plain_params = ModelParams::init(&plain, 1e-5, &mut rng);
    let report = estimate_deviation(&plain, &plain_params, &ds, &shards)?;
    if report.b.iter().any(|&b| b != 0.0) {
        bail!("a batch-norm-free network must report zero deviation");
    }
    Ok(())
}

fn comm_table() -> Result<()> {
    let bn = resnet20_size_spec();
    let gn = resnet20_gn_size_spec();
    let cases = [
        (per_iteration_bytes(&bn, Scheme::FedTan).unwrap(), "6.2679"),
        (per_iteration_bytes(&bn, Scheme::FedAvgBn).unwrap(), "6.2049"),
        (per_iteration_bytes(&gn, Scheme::FedAvgBn).unwrap(), "6.1734"),
    ];
    for (bytes, expected) in cases {
        let got = format_mb(bytes);
        if got != expected {
            bail!("accounting mismatch: got {got} MB, expected {expected} MB");
        }
    }
    let f = extra_round_fraction(19, Scheme::FedTan, 1);
    if format!("{:.2}", 100.0 * f) != "98.28" {
        bail!("extra-round fraction for 19 layers came out as {f}");
    }
    let f = extra_round_fraction(1, Scheme::FedTan, 1);
    if (100.0 * f - 75.0).abs() > 1e-12 {
        bail!("extra-round fraction for 1 layer came out as {f}");
    }
    Ok(())
}

fn moving_average_law() -> Result<()> {
    let mut sbar = StatsSet {
        layers: vec![fedtan_core::tensor::BnStats {
            mean: ndarray::Array1::zeros(3),
            variance: ndarray::Array1::ones(3),
        }],
    };
    let target = StatsSet {
        layers: vec![fedtan_core::tensor::BnStats {
            mean: ndarray::Array1::from_elem(3, 2.0),
            variance: ndarray::Array1::from_elem(3, 0.5),
        }],
    };
    let rho = 0.1;
    for t in 1..=100usize {
        sbar.moving_update(&target, rho);
        let decay = (1.0f64 - rho).powi(t as i32);
        let expected_mean = (1.0 - decay) * 2.0;
        let expected_var = decay * 1.0 + (1.0 - decay) * 0.5;
        for j in 0..3 {
            if (sbar.layers[0].mean[j] - expected_mean).abs() >= 1e-12
                || (sbar.layers[0].variance[j] - expected_var).abs() >= 1e-12
            {
                bail!("moving average left the geometric law at step {t}");
            }
        }
    }
    Ok(())
}

fn round_accounting() -> Result<()> {
    let ds = synth_gaussian_with(4, 8, 5, 1.0, 9)?;
    let partition = partition_by_label(&ds, 4, 1)?;
    let spec = NetworkSpec::bn_mlp(&[5, 4, 4])?;
    for (scheme, expected) in [(Scheme::FedTan, 4u64), (Scheme::FedAvgBn, 1u64)] {
        let mut cfg = full_batch_cfg(scheme, 3, 0.1, 3);
        cfg.local_steps = 2;
        let (_, transcript) = run_experiment(&spec, &ds, &partition, &ds, &cfg)?;
        if transcript.round_trips() != expected * 3 {
            bail!(
                "{}: {} round trips for 3 iterations, expected {}",
                scheme.name(),
                transcript.round_trips(),
                expected * 3
            );
        }
    }
    Ok(())
}

fn determinism() -> Result<()> {
    let ds = synth_gaussian_with(3, 10, 4, 1.0, 5)?;
    let partition = partition_by_label(&ds, 3, 1)?;
    let spec = NetworkSpec::bn_mlp(&[4, 4, 3])?;
    let mut cfg = SchemeConfig::new(Scheme::FedTan, 4);
    cfg.batch = BatchMode::Mini(6);
    cfg.seed = 21;
    let (a, _) = run_experiment(&spec, &ds, &partition, &ds, &cfg)?;
    let (b, _) = run_experiment(&spec, &ds, &partition, &ds, &cfg)?;
    let mut par = cfg.clone();
    par.parallel_clients = true;
    let (c, _) = run_experiment(&spec, &ds, &partition, &ds, &par)?;
    if a != b || a != c {
        bail!("same-seed runs disagreed");
    }
    Ok(())
}

pub fn run_verify() -> i32 {
    let checks: Vec<Check> = vec![
        ("gradient-finite-difference", gradient_fd),
        ("aggregation-exactness", aggregation_exactness),
        ("gradient-parity", gradient_parity),
        ("trajectory-equivalence", trajectory_equivalence),
        ("deviation-signs", deviation_signs),
        ("comm-accounting", comm_table),
        ("moving-average-law", moving_average_law),
        ("round-accounting", round_accounting),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(err) => {
                failures += 1;
                println!("FAIL {name}: {err}");
            }
        }
    }
    if failures == 0 {
        0
    } else {
        eprintln!("{failures} check(s) failed");
        1
    }
}

mod config;
mod verify;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedtan_core::metrics::{
    export_csv, extra_round_fraction, format_mb, per_iteration_bytes, ModelSizeSpec,
};
use fedtan_core::sim::{run_experiment, History, Scheme};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "fedtan",
    about = "Federated-learning experiments with layer-wise batch-norm synchronization",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its history CSV.
    Run {
        /// Path to a `key = value` config file.
        config: PathBuf,
        /// Echo the effective config (with defaults applied) to stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Run several configs (e.g. one per scheme) into a single CSV.
    Compare {
        /// Config files, run in order.
        configs: Vec<PathBuf>,
        /// Output CSV path (default: the first config's output).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Execute the invariant/oracle suite and print pass/fail lines.
    Verify,
    /// Per-iteration communication accounting for a model size.
    Comm {
        /// Total exchanged parameters per model transfer.
        total_params: u64,
        /// Statistical parameters (means plus variances).
        stat_params: u64,
        /// Client count.
        clients: u64,
        /// Scheme: fedtan, fedavg (or fedavg_bn), fedavg_alg2, silobn.
        scheme: String,
        /// Also print the extra-round fraction for this many layers.
        #[arg(long)]
        bn_layers: Option<u64>,
    },
}

fn run_one(path: &PathBuf) -> Result<(ExperimentConfig, History)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let (train, test) = cfg.load_datasets()?;
    let partition = cfg.build_partition(&train)?;
    let spec = cfg.network_spec(&train)?;
    let scheme_cfg = cfg.scheme_config();

    let started = Instant::now();
    let (history, transcript) = run_experiment(&spec, &train, &partition, &test, &scheme_cfg)?;
    eprintln!(
        "{}: {} iterations in {:.1}s, {} rounds, {} bytes exchanged, final accuracy {}",
        scheme_cfg.scheme.name(),
        cfg.iterations,
        started.elapsed().as_secs_f64(),
        transcript.round_trips(),
        transcript.total_bytes(),
        history
            .last()
            .map(|r| format!("{:.4}", r.test_accuracy))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok((cfg, history))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, verbose } => {
            if verbose {
                let text = std::fs::read_to_string(&config)
                    .with_context(|| format!("cannot read config {}", config.display()))?;
                eprint!("{}", ExperimentConfig::parse(&text)?.serialize());
            }
            let (cfg, history) = run_one(&config)?;
            export_csv(&history, &cfg.output)?;
            eprintln!("wrote {}", cfg.output.display());
        }
        Command::Compare { configs, output } => {
            if configs.is_empty() {
                bail!("compare needs at least one config file");
            }
            let mut combined = History::default();
            let mut out_path = output;
            for path in &configs {
                let (cfg, history) = run_one(path)?;
                if out_path.is_none() {
                    out_path = Some(cfg.output.clone());
                }
                combined.extend(history);
            }
            let out_path = out_path.expect("at least one config");
            export_csv(&combined, &out_path)?;
            eprintln!("wrote {}", out_path.display());
        }
        Command::Verify => {
            std::process::exit(verify::run_verify());
        }
        Command::Comm {
            total_params,
            stat_params,
            clients,
            scheme,
            bn_layers,
        } => {
            let scheme = match scheme.as_str() {
                "fedtan" => Scheme::FedTan,
                "fedavg" | "fedavg_bn" | "fedavg_gn" => Scheme::FedAvgBn,
                "fedavg_alg2" => Scheme::FedAvgAlg2Only,
                "silobn" => Scheme::SiloBn,
                other => bail!("no accounting model for scheme {other:?}"),
            };
            let size = ModelSizeSpec::new(total_params, stat_params, clients);
            let bytes = per_iteration_bytes(&size, scheme)
                .expect("accounting model covers these schemes");
            println!("{} MB per iteration ({bytes} bytes)", format_mb(bytes));
            if let Some(layers) = bn_layers {
                let fraction = extra_round_fraction(layers, scheme, 1);
                println!("extra rounds: {:.2}%", 100.0 * fraction);
            }
        }
    }
    Ok(())
}

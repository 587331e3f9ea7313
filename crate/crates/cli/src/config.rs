use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedtan_core::data::{
    load_mnist_idx, partition_by_label, partition_iid, synth_digits_with, synth_gaussian_with,
    LabeledDataset, PartitionSpec,
};
use fedtan_core::sim::{BatchMode, LrSchedule, Scheme, SchemeConfig};
use fedtan_core::tensor::NetworkSpec;

/// Environment variable giving the default dataset root directory.
pub const DATA_DIR_ENV: &str = "FEDTAN_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetChoice {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthKind {
    Digits,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionChoice {
    Iid,
    LabelShard,
}

/// Flat `key = value` experiment description. Every field has a default
/// except the dataset and scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetChoice,
    pub mnist_dir: Option<PathBuf>,
    pub subset: usize,
    pub synth_kind: SynthKind,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub partition: PartitionChoice,
    pub shard_classes: usize,
    pub clients: usize,
    pub scheme: Scheme,
    pub local_steps: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_after_freeze: f64,
    pub batch: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub hidden: usize,
    pub seed: u64,
    pub parallel: bool,
    pub output: PathBuf,
}

fn parse_scheme(value: &str, freeze_at: usize) -> Result<Scheme> {
    Ok(match value {
        "centralized" => Scheme::Centralized,
        "fedavg_bn" | "fedavg" => Scheme::FedAvgBn,
        "fedtan" => Scheme::FedTan,
        "fedtan2" => Scheme::FedTanII { freeze_at },
        "fedavg_alg2" => Scheme::FedAvgAlg2Only,
        "fedbn" => Scheme::FedBn,
        "silobn" => Scheme::SiloBn,
        other => bail!(
            "scheme: unknown value {other:?} (expected centralized, fedavg_bn, fedtan, \
             fedtan2, fedavg_alg2, fedbn, or silobn)"
        ),
    })
}

impl ExperimentConfig {
    /// Parse the flat config format: one `key = value` per line, `#`
    /// comments, blank lines ignored. Unknown keys and malformed values
    /// are errors that name the offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {raw:?}", lineno + 1);
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                bail!("{key}: duplicate key");
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        fn take<T: std::str::FromStr>(
            map: &mut BTreeMap<String, String>,
            key: &str,
            default: T,
        ) -> Result<T> {
            match map.remove(key) {
                None => Ok(default),
                Some(raw) => raw
                    .parse()
                    .map_err(|_| anyhow::anyhow!("{key}: cannot parse value {raw:?}")),
            }
        }

        let dataset = match map.remove("dataset").as_deref() {
            Some("mnist") => DatasetChoice::Mnist,
            Some("synthetic") => DatasetChoice::Synthetic,
            Some(other) => bail!("dataset: unknown value {other:?} (expected mnist or synthetic)"),
            None => bail!("dataset: missing (expected mnist or synthetic)"),
        };
        let scheme_raw = map
            .remove("scheme")
            .filter(|s| !s.is_empty())
            .context("scheme: missing or empty")?;

        let freeze_at = take(&mut map, "freeze_at", 50usize)?;
        let scheme = parse_scheme(&scheme_raw, freeze_at)?;

        let synth_kind = match map.remove("synth_kind").as_deref() {
            None | Some("digits") => SynthKind::Digits,
            Some("gaussian") => SynthKind::Gaussian,
            Some(other) => bail!("synth_kind: unknown value {other:?}"),
        };
        let partition = match map.remove("partition").as_deref() {
            None | Some("iid") => PartitionChoice::Iid,
            Some("label_shard") => PartitionChoice::LabelShard,
            Some(other) => bail!("partition: unknown value {other:?}"),
        };

        let config = ExperimentConfig {
            dataset,
            mnist_dir: map.remove("mnist_dir").map(PathBuf::from),
            subset: take(&mut map, "subset", 6000usize)?,
            synth_kind,
            classes: take(&mut map, "classes", 10usize)?,
            per_class: take(&mut map, "per_class", 600usize)?,
            test_per_class: take(&mut map, "test_per_class", 100usize)?,
            input_dim: take(&mut map, "input_dim", 784usize)?,
            noise: take(&mut map, "noise", 0.25f64)?,
            data_seed: take(&mut map, "data_seed", 7u64)?,
            partition,
            shard_classes: take(&mut map, "shard_classes", 2usize)?,
            clients: take(&mut map, "clients", 5usize)?,
            scheme,
            local_steps: take(&mut map, "local_steps", 5usize)?,
            iterations: take(&mut map, "iterations", 100usize)?,
            lr: take(&mut map, "lr", 0.5f64)?,
            lr_after_freeze: take(&mut map, "lr_after_freeze", 0.05f64)?,
            batch: take(&mut map, "batch", 128usize)?,
            rho: take(&mut map, "rho", 0.1f64)?,
            epsilon: take(&mut map, "epsilon", 1e-5f64)?,
            hidden: take(&mut map, "hidden", 30usize)?,
            seed: take(&mut map, "seed", 1u64)?,
            parallel: take(&mut map, "parallel", false)?,
            output: PathBuf::from(
                map.remove("output")
                    .unwrap_or_else(|| "history.csv".to_string()),
            ),
        };
        if let Some(key) = map.keys().next() {
            bail!("{key}: unknown key");
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            bail!("local_steps: must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            bail!("rho: must satisfy 0 < rho <= 1");
        }
        if self.epsilon <= 0.0 {
            bail!("epsilon: must be positive");
        }
        if self.clients == 0 {
            bail!("clients: must be at least 1");
        }
        if self.lr <= 0.0 {
            bail!("lr: must be positive");
        }
        if let Scheme::FedTanII { freeze_at } = self.scheme {
            if self.iterations > 0 && freeze_at >= self.iterations {
                bail!("freeze_at: must be smaller than iterations");
            }
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c))` equals `c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let dataset = match self.dataset {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Synthetic => "synthetic",
        };
        out.push_str(&format!("dataset = {dataset}\n"));
        if let Some(dir) = &self.mnist_dir {
            out.push_str(&format!("mnist_dir = {}\n", dir.display()));
        }
        out.push_str(&format!("subset = {}\n", self.subset));
        let kind = match self.synth_kind {
            SynthKind::Digits => "digits",
            SynthKind::Gaussian => "gaussian",
        };
        out.push_str(&format!("synth_kind = {kind}\n"));
        out.push_str(&format!("classes = {}\n", self.classes));
        out.push_str(&format!("per_class = {}\n", self.per_class));
        out.push_str(&format!("test_per_class = {}\n", self.test_per_class));
        out.push_str(&format!("input_dim = {}\n", self.input_dim));
        out.push_str(&format!("noise = {}\n", self.noise));
        out.push_str(&format!("data_seed = {}\n", self.data_seed));
        let partition = match self.partition {
            PartitionChoice::Iid => "iid",
            PartitionChoice::LabelShard => "label_shard",
        };
        out.push_str(&format!("partition = {partition}\n"));
        out.push_str(&format!("shard_classes = {}\n", self.shard_classes));
        out.push_str(&format!("clients = {}\n", self.clients));
        out.push_str(&format!("scheme = {}\n", self.scheme.name()));
        if let Scheme::FedTanII { freeze_at } = self.scheme {
            out.push_str(&format!("freeze_at = {freeze_at}\n"));
        }
        out.push_str(&format!("local_steps = {}\n", self.local_steps));
        out.push_str(&format!("iterations = {}\n", self.iterations));
        out.push_str(&format!("lr = {}\n", self.lr));
        out.push_str(&format!("lr_after_freeze = {}\n", self.lr_after_freeze));
        out.push_str(&format!("batch = {}\n", self.batch));
        out.push_str(&format!("rho = {}\n", self.rho));
        out.push_str(&format!("epsilon = {}\n", self.epsilon));
        out.push_str(&format!("hidden = {}\n", self.hidden));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("parallel = {}\n", self.parallel));
        out.push_str(&format!("output = {}\n", self.output.display()));
        out
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        let lr = match self.scheme {
            Scheme::FedTanII { freeze_at } => {
                LrSchedule::step(self.lr, freeze_at, self.lr_after_freeze)
            }
            _ => LrSchedule::constant(self.lr),
        };
        SchemeConfig {
            scheme: self.scheme,
            local_steps: self.local_steps,
            iterations: self.iterations,
            lr,
            batch: if self.batch == 0 {
                BatchMode::Full
            } else {
                BatchMode::Mini(self.batch)
            },
            rho: self.rho,
            epsilon: self.epsilon,
            seed: self.seed,
            parallel_clients: self.parallel,
        }
    }

    fn mnist_root(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.mnist_dir {
            return Ok(dir.clone());
        }
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            return Ok(PathBuf::from(dir));
        }
        bail!("mnist_dir: missing (set the key or the {DATA_DIR_ENV} environment variable)");
    }

    /// Materialize train/test datasets per the config.
    pub fn load_datasets(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self.dataset {
            DatasetChoice::Mnist => {
                let root = self.mnist_root()?;
                let train = load_pair(&root, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
                let test = load_pair(&root, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
                Ok((train.take(self.subset), test))
            }
            DatasetChoice::Synthetic => match self.synth_kind {
                SynthKind::Digits => {
                    let (train, test) =
                        synth_digits_with(self.per_class, self.test_per_class, self.noise, 3, self.data_seed)?;
                    Ok((train, test))
                }
                SynthKind::Gaussian => {
                    let train = synth_gaussian_with(
                        self.classes,
                        self.per_class,
                        self.input_dim,
                        self.noise,
                        self.data_seed,
                    )?;
                    let test = synth_gaussian_with(
                        self.classes,
                        self.test_per_class,
                        self.input_dim,
                        self.noise,
                        self.data_seed.wrapping_add(1),
                    )?;
                    Ok((train, test))
                }
            },
        }
    }

    pub fn build_partition(&self, train: &LabeledDataset) -> Result<PartitionSpec> {
        Ok(match self.partition {
            PartitionChoice::Iid => partition_iid(train, self.clients, self.seed)?,
            PartitionChoice::LabelShard => {
                partition_by_label(train, self.clients, self.shard_classes)?
            }
        })
    }

    pub fn network_spec(&self, train: &LabeledDataset) -> Result<NetworkSpec> {
        Ok(NetworkSpec::bn_mlp(&[
            train.input_dim(),
            self.hidden,
            train.class_count,
        ])?)
    }
}

fn load_pair(root: &Path, images: &str, labels: &str) -> Result<LabeledDataset> {
    let images_path = root.join(images);
    let labels_path = root.join(labels);
    for path in [&images_path, &labels_path] {
        if !path.exists() {
            bail!("dataset file {} does not exist", path.display());
        }
    }
    Ok(load_mnist_idx(&images_path, &labels_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_published_defaults() {
        let cfg = ExperimentConfig::parse("dataset = synthetic\nscheme = fedtan\n").unwrap();
        assert_eq!(cfg.rho, 0.1);
        assert_eq!(cfg.epsilon, 1e-5);
        assert_eq!(cfg.local_steps, 5);
        assert_eq!(cfg.batch, 128);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.scheme, Scheme::FedTan);
    }

    #[test]
    fn empty_scheme_is_an_error_naming_the_key() {
        let err = ExperimentConfig::parse("dataset = synthetic\nscheme =\n").unwrap_err();
        assert!(err.to_string().contains("scheme"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("dataset = synthetic\nscheme = fedtan\nbogus = 1\n")
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn type_errors_are_named() {
        let err =
            ExperimentConfig::parse("dataset = synthetic\nscheme = fedtan\nbatch = large\n")
                .unwrap_err();
        assert!(err.to_string().contains("batch"), "{err}");
    }

    #[test]
    fn constraint_violations_are_named() {
        let err = ExperimentConfig::parse("dataset = synthetic\nscheme = fedtan\nrho = 2.0\n")
            .unwrap_err();
        assert!(err.to_string().contains("rho"), "{err}");
    }

    #[test]
    fn serialize_parse_round_trip() {
        let text = "dataset = synthetic\nscheme = fedtan2\nfreeze_at = 3\niterations = 9\n\
                    partition = label_shard\nshard_classes = 2\nnoise = 0.3\nparallel = true\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let reparsed = ExperimentConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = ExperimentConfig::parse(
            "# experiment\n\ndataset = synthetic # inline\nscheme = fedavg_bn\n",
        )
        .unwrap();
        assert_eq!(cfg.scheme, Scheme::FedAvgBn);
    }
}

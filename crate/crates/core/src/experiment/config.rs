use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::SensitivityConfig;
use crate::error::{Error, Result};
use crate::model::{BlockId, BridgeConfig};
use crate::nn::ArchConfig;
use crate::regimes::{EvalConfig, RegimeKind, TrainConfig, TttConfig};
use crate::shifts::{
    gen_synthetic, load_cifar10_binary, load_mnist_idx, substream, CorruptionSpec, ImageDataset, SyntheticSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Train,
    Eval,
    Sensitivity,
    Ablation,
    Alphas,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Train,
        ExperimentKind::Eval,
        ExperimentKind::Sensitivity,
        ExperimentKind::Ablation,
        ExperimentKind::Alphas,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Eval => "eval",
            ExperimentKind::Sensitivity => "sensitivity",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Alphas => "alphas",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind `{s}`")))
    }
}

fn default_train_per_class() -> usize {
    500
}

fn default_test_per_class() -> usize {
    250
}

/// Where images come from. Synthetic train and test sets are drawn from
/// different streams of `data_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
        #[serde(default)]
        spec: SyntheticSpec,
    },
    Cifar10 {
        train: PathBuf,
        test: PathBuf,
    },
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl DatasetSource {
    /// Default synthetic set: 2000 training and 1000 test images of 16×16.
    pub fn synthetic(data_seed: u64) -> Self {
        DatasetSource::Synthetic {
            data_seed,
            train_per_class: default_train_per_class(),
            test_per_class: default_test_per_class(),
            spec: SyntheticSpec::default(),
        }
    }

    fn paths(&self) -> Vec<(&'static str, &Path)> {
        match self {
            DatasetSource::Synthetic { .. } => vec![],
            DatasetSource::Cifar10 { train, test } => vec![("dataset.train", train), ("dataset.test", test)],
            DatasetSource::Mnist { train_images, train_labels, test_images, test_labels } => vec![
                ("dataset.train_images", train_images),
                ("dataset.train_labels", train_labels),
                ("dataset.test_images", test_images),
                ("dataset.test_labels", test_labels),
            ],
        }
    }

    /// `(train, test)`.
    pub fn load(&self) -> Result<(ImageDataset, ImageDataset)> {
        match self {
            DatasetSource::Synthetic { data_seed, train_per_class, test_per_class, spec } => {
                let train = SyntheticSpec { samples_per_class: *train_per_class, ..spec.clone() };
                let test = SyntheticSpec { samples_per_class: *test_per_class, ..spec.clone() };
                Ok((
                    gen_synthetic(&train, substream(*data_seed, 0))?.with_name(format!("synthetic-train-{data_seed}")),
                    gen_synthetic(&test, substream(*data_seed, 1))?.with_name(format!("synthetic-test-{data_seed}")),
                ))
            }
            DatasetSource::Cifar10 { train, test } => Ok((load_cifar10_binary(train)?, load_cifar10_binary(test)?)),
            DatasetSource::Mnist { train_images, train_labels, test_images, test_labels } => Ok((
                load_mnist_idx(train_images, train_labels)?.with_name("mnist-train"),
                load_mnist_idx(test_images, test_labels)?.with_name("mnist-test"),
            )),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: ExperimentKind,
    #[serde(default = "default_regime")]
    pub regime: RegimeKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Load `model-seed{N}.ckpt` from here instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Real timings in `wall_ms`; off keeps metrics.csv reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Blocks probed by the sensitivity run; all stages when empty.
    #[serde(default)]
    pub blocks: Vec<String>,
    #[serde(default)]
    pub arch: ArchConfig,
    /// Defaults to the regime's bridges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<BridgeConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ttt: TttConfig,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub corruptions: Vec<CorruptionSpec>,
}

fn default_regime() -> RegimeKind {
    RegimeKind::JointTraining
}

fn default_eval_batch() -> usize {
    EvalConfig::default().batch_size
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        ExperimentConfig {
            kind: ExperimentKind::default(),
            regime: default_regime(),
            seeds: default_seeds(),
            out_dir: None,
            checkpoint_dir: None,
            record_wall_time: false,
            blocks: vec![],
            arch: ArchConfig::default(),
            bridge: None,
            train: TrainConfig::default(),
            ttt: TttConfig::default(),
            eval_batch_size: default_eval_batch(),
            sensitivity: SensitivityConfig::default(),
            dataset,
            corruptions: vec![],
        }
    }

    /// The configured bridges, or the regime's.
    pub fn bridge(&self) -> BridgeConfig {
        self.bridge.unwrap_or_else(|| self.regime.bridge())
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig { batch_size: self.eval_batch_size, ttt: self.ttt.clone() }
    }

    /// Training settings for the regime (no rotation loss for Standard).
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { self_supervised: self.train.self_supervised && self.regime.self_supervised(), ..self.train.clone() }
    }

    pub fn block_ids(&self) -> Result<Vec<BlockId>> {
        self.blocks
            .iter()
            .map(|b| b.parse::<BlockId>().map_err(|e| Error::Config(format!("blocks: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, e: Error| Error::Config(format!("{key}: {e}"));
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        self.arch.validate().map_err(|e| cfg("arch", e))?;
        let bridge = self.bridge();
        bridge.validate().map_err(|e| cfg("bridge", e))?;
        if self.kind != ExperimentKind::Ablation && bridge.is_enabled() != self.regime.is_bridged() {
            return Err(Error::Config(format!(
                "bridge: regime {} needs {} bridges, got {}",
                self.regime,
                if self.regime.is_bridged() { "enabled" } else { "disabled" },
                bridge.flags_code()
            )));
        }
        if self.kind == ExperimentKind::Alphas && !bridge.is_enabled() {
            return Err(Error::Config("regime: the alphas experiment needs a bridged regime".into()));
        }
        if matches!(self.kind, ExperimentKind::Sensitivity | ExperimentKind::Alphas) && self.corruptions.is_empty() {
            return Err(Error::Config(format!("corruptions: the {} experiment needs at least one", self.kind)));
        }
        if self.kind == ExperimentKind::Sensitivity && self.sensitivity.probe_size < 2 {
            return Err(Error::Config("sensitivity.probe_size: at least 2 probe images".into()));
        }
        self.train.validate().map_err(|e| cfg("train", e))?;
        self.ttt.validate().map_err(|e| cfg("ttt", e))?;
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size: must be positive".into()));
        }
        for (i, c) in self.corruptions.iter().enumerate() {
            c.kind.parameter(c.severity).map_err(|e| cfg(&format!("corruptions[{i}].severity"), e))?;
        }
        self.block_ids()?;
        if let DatasetSource::Synthetic { spec, train_per_class, test_per_class, .. } = &self.dataset {
            spec.validate().map_err(|e| cfg("dataset.spec", e))?;
            if *train_per_class == 0 || *test_per_class == 0 {
                return Err(Error::Config("dataset: train_per_class and test_per_class must be positive".into()));
            }
        }
        for (key, path) in self.dataset.paths() {
            if !path.exists() {
                return Err(Error::Config(format!("{key}: `{}` does not exist", path.display())));
            }
        }
        if let Some(dir) = &self.checkpoint_dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!("checkpoint_dir: `{}` is not a directory", dir.display())));
            }
        }
        Ok(())
    }

    /// Parses without validating; callers that override fields validate after.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parses and validates a TOML experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_toml(text)?;
    cfg.validate()?;
    Ok(cfg)
}

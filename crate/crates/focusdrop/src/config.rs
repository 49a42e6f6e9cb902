//! TOML experiment configs.

use std::fs;
use std::path::{Path, PathBuf};

use focusdrop_core::data::{synthetic_pair, AugmentPolicy, CifarVariant, Dataset};
use focusdrop_core::nn::ModelSpec;
use focusdrop_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::cifar::load_cifar;
use crate::error::{io_err, Error, Result};

/// Overrides the directory that relative `output_dir`s and run names resolve against.
pub const OUTPUT_ROOT_ENV: &str = "FOCUSDROP_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        size: usize,
        seed: u64,
    },
    Cifar10 {
        path: PathBuf,
    },
    Cifar100 {
        path: PathBuf,
    },
}

impl DataSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            DataSpec::Synthetic { classes, .. } => *classes,
            DataSpec::Cifar10 { .. } => 10,
            DataSpec::Cifar100 { .. } => 100,
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            DataSpec::Synthetic { size, .. } => *size,
            _ => 32,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DataSpec::Synthetic { classes, size, .. } => format!("synthetic-{classes}x{size}"),
            DataSpec::Cifar10 { path } => format!("cifar10:{}", path.display()),
            DataSpec::Cifar100 { path } => format!("cifar100:{}", path.display()),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSpec::Synthetic { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    /// Train and test splits; the test split uses the training normalization.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DataSpec::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                size,
                seed,
            } => Ok(synthetic_pair(*classes, *train_per_class, *test_per_class, *size, *seed)?),
            DataSpec::Cifar10 { path } => load_cifar(path, CifarVariant::Cifar10),
            DataSpec::Cifar100 { path } => load_cifar(path, CifarVariant::Cifar100),
        }
    }
}

fn default_augment() -> AugmentPolicy {
    AugmentPolicy::CIFAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Run directory; relative paths resolve against the output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default = "default_augment")]
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        focusdrop_core::nn::Architecture::parse(&self.model.architecture)?;
        if self.model.num_classes != self.data.num_classes() {
            return Err(Error::Invalid(format!(
                "model has {} classes but the dataset has {}",
                self.model.num_classes,
                self.data.num_classes()
            )));
        }
        if self.model.input_size != self.data.image_size() {
            return Err(Error::Invalid(format!(
                "model input_size {} does not match dataset image size {}",
                self.model.input_size,
                self.data.image_size()
            )));
        }
        Ok(())
    }

    /// Run directory under `root` (or the output-root env var, or `runs/`).
    pub fn run_dir(&self, root: Option<&Path>) -> PathBuf {
        let root = root.map(Path::to_path_buf).unwrap_or_else(output_root);
        match &self.output_dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => root.join(d),
            None => root.join(&self.name),
        }
    }
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Parse a dataset argument: either an experiment config (its `data` table is
/// used) or a file holding just a data table.
pub fn load_data_spec(path: &Path) -> Result<DataSpec> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    #[derive(Deserialize)]
    struct Wrapper {
        data: DataSpec,
    }
    let wrapped = toml::from_str::<Wrapper>(&text).map(|w| w.data);
    match wrapped {
        Ok(d) => Ok(d),
        Err(_) => toml::from_str::<DataSpec>(&text).map_err(|source| Error::Config {
            path: path.to_path_buf(),
            source,
        }),
    }
}

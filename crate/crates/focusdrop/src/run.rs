//! Experiment runs and parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use focusdrop_core::data::{Dataset, Normalization};
use focusdrop_core::focus::GammaRange;
use focusdrop_core::nn::{build_model, Model};
use focusdrop_core::regularize::RegularizerKind;
use focusdrop_core::train::{train, EpochRecord, StepRecord, TrainObserver};
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::cifar::write_dataset_manifest;
use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};
use crate::kv::KvFile;
use crate::metrics::{CsvLog, MetricsRow, StepRow, METRICS_SCHEMA, STEPS_SCHEMA};

pub const METRICS_FILE: &str = "metrics.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const BEST_DIR: &str = "best";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const SWEEP_SCHEMA: &str = "# schema: focusdrop-sweep v1";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

impl RunSummary {
    /// Mean of the epoch dropped fractions over epochs that applied masks.
    pub fn mean_dropped_fraction(&self) -> Option<f64> {
        let v: Vec<f64> = self.epochs.iter().filter_map(|e| e.keep.map(|k| k.dropped_fraction)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn active_fraction(&self) -> f64 {
        let active: usize = self.epochs.iter().map(|e| e.active_batches).sum();
        let total: usize = self.epochs.iter().map(|e| e.total_batches).sum();
        active as f64 / total.max(1) as f64
    }
}

struct RunObserver {
    dir: PathBuf,
    metrics: CsvLog,
    steps: CsvLog,
    normalization: Normalization,
    best: f64,
}

fn sink(e: Error) -> focusdrop_core::Error {
    focusdrop_core::Error::Sink(e.to_string())
}

impl TrainObserver<f32> for RunObserver {
    fn on_step(&mut self, record: &StepRecord) -> focusdrop_core::Result<()> {
        self.steps.write(&StepRow::from(record)).map_err(sink)
    }

    fn on_epoch(&mut self, record: &EpochRecord, model: &Model<f32>) -> focusdrop_core::Result<()> {
        self.metrics.write(&MetricsRow::from(record)).map_err(sink)?;
        if record.test_acc > self.best {
            self.best = record.test_acc;
            save_checkpoint(&self.dir.join(BEST_DIR), model, &self.normalization, record.epoch, record.test_acc)
                .map_err(sink)?;
        }
        Ok(())
    }
}

/// Load the configured data, train, and write logs and the best checkpoint
/// under the run directory.
pub fn run_experiment(config: &ExperimentConfig, root: Option<&Path>) -> Result<RunSummary> {
    config.validate()?;
    let (train_set, test_set) = config.data.load()?;
    run_with_data(config, &train_set, &test_set, &config.run_dir(root))
}

/// [`run_experiment`] with preloaded data and an explicit run directory.
pub fn run_with_data(config: &ExperimentConfig, train_set: &Dataset, test_set: &Dataset, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, config.to_toml()).map_err(io_err(&cfg_path))?;
    write_dataset_manifest(
        &dir.join("dataset.txt"),
        &config.data.describe(),
        train_set,
        test_set,
        config.data.seed(),
    )?;
    let mut observer = RunObserver {
        dir: dir.to_path_buf(),
        metrics: CsvLog::create(&dir.join(METRICS_FILE), METRICS_SCHEMA)?,
        steps: CsvLog::create(&dir.join(STEPS_FILE), STEPS_SCHEMA)?,
        normalization: train_set.normalization().clone(),
        best: f64::NEG_INFINITY,
    };
    let mut model = build_model::<f32>(&config.model, config.train.seeds.init)?;
    let summary = train(&mut model, train_set, test_set, &config.train, &config.augment, &mut observer)?;
    let out = RunSummary {
        dir: dir.to_path_buf(),
        best_test_acc: summary.best_test_acc,
        best_epoch: summary.best_epoch,
        epochs: summary.epochs,
    };
    let mut kv = KvFile::default();
    kv.push("name", &config.name)
        .push("regularizer", config.train.regularizer.kind.name())
        .push("epochs", out.epochs.len())
        .push("best_test_acc", out.best_test_acc)
        .push("best_epoch", out.best_epoch)
        .push("active_fraction", out.active_fraction());
    if let Some(d) = out.mean_dropped_fraction() {
        kv.push("mean_dropped_fraction", d);
    }
    kv.write(&dir.join(SUMMARY_FILE), "focusdrop run summary")?;
    Ok(out)
}

/// A swept hyperparameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepParam {
    ParticipationRate(Vec<f64>),
    Gamma(Vec<GammaRange>),
    Mwd(Vec<f64>),
}

impl SweepParam {
    /// Parse `participation_rate=0,0.1`, `gamma=0.3:0.6,0.9` or `mwd=5e-4,1e-3`.
    pub fn parse(arg: &str) -> Result<Self> {
        let (key, values) = arg
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("sweep parameter `{arg}` must look like key=v1,v2")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::Invalid(format!("sweep parameter `{key}` has no values")));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| Error::Invalid(format!("bad number `{s}` for `{key}`")));
        match key {
            "participation_rate" | "rate" => Ok(Self::ParticipationRate(items.into_iter().map(float).collect::<Result<_>>()?)),
            "mwd" | "mwd_weight_decay" => Ok(Self::Mwd(items.into_iter().map(float).collect::<Result<_>>()?)),
            "gamma" => Ok(Self::Gamma(
                items
                    .into_iter()
                    .map(|s| match s.split_once(':') {
                        Some((lo, hi)) => Ok(GammaRange::new(float(lo)?, float(hi)?)?),
                        None => Ok(GammaRange::fixed(float(s)?)?),
                    })
                    .collect::<Result<_>>()?,
            )),
            other => Err(Error::Invalid(format!(
                "unknown sweep parameter `{other}` (participation_rate, gamma, mwd)"
            ))),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            Self::ParticipationRate(_) => "participation_rate",
            Self::Gamma(_) => "gamma",
            Self::Mwd(_) => "mwd",
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::ParticipationRate(v) | Self::Mwd(v) => v.iter().map(f64::to_string).collect(),
            Self::Gamma(v) => v.iter().map(|g| format!("{}:{}", g.lo(), g.hi())).collect(),
        }
    }

    pub fn apply(&self, base: &ExperimentConfig, index: usize) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            Self::ParticipationRate(v) => cfg.train.participation_rate = v[index],
            Self::Mwd(v) => cfg.train.mwd_weight_decay = v[index],
            Self::Gamma(v) => match &mut cfg.train.regularizer.kind {
                RegularizerKind::Focused { gamma } | RegularizerKind::Opposite { gamma } => *gamma = v[index],
                other => {
                    return Err(Error::Invalid(format!(
                        "gamma sweep needs a focused or opposite regularizer, config has `{}`",
                        other.name()
                    )))
                }
            },
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub final_test_acc: f64,
    pub active_fraction: f64,
    pub dropped_fraction: Option<f64>,
    pub retained_fraction: Option<f64>,
}

/// One run per value, each in `<root>/<name>-sweep/<key>=<value>`, plus a
/// `sweep.csv` summary in the sweep directory.
pub fn sweep(config: &ExperimentConfig, param: &SweepParam, root: Option<&Path>) -> Result<(PathBuf, Vec<SweepRow>)> {
    config.validate()?;
    let labels = param.labels();
    let configs = (0..labels.len()).map(|i| param.apply(config, i)).collect::<Result<Vec<_>>>()?;
    let (train_set, test_set) = config.data.load()?;
    let base_dir = config.run_dir(root);
    let dir = base_dir.with_file_name(format!(
        "{}-sweep",
        base_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| config.name.clone())
    ));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut log = CsvLog::create(&dir.join("sweep.csv"), SWEEP_SCHEMA)?;
    let mut rows = Vec::new();
    for (cfg, label) in configs.iter().zip(&labels) {
        let run_dir = dir.join(format!("{}={}", param.key(), label.replace(':', "-")));
        let s = run_with_data(cfg, &train_set, &test_set, &run_dir)?;
        let dropped = s.mean_dropped_fraction();
        let row = SweepRow {
            param: param.key().to_string(),
            value: label.clone(),
            best_test_acc: s.best_test_acc,
            best_epoch: s.best_epoch,
            final_test_acc: s.epochs.last().map(|e| e.test_acc).unwrap_or(0.0),
            active_fraction: s.active_fraction(),
            dropped_fraction: dropped,
            retained_fraction: dropped.map(|d| 1.0 - d),
        };
        log.write(&row)?;
        rows.push(row);
    }
    Ok((dir, rows))
}

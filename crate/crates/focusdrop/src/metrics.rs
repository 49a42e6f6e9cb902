//! Versioned CSV logs: per-epoch metrics and per-step records.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use focusdrop_core::train::{EpochRecord, StepRecord};
use serde::{Deserialize, Serialize};

use crate::error::{csv_err, format_err, io_err, Result};

pub const METRICS_SCHEMA: &str = "# schema: focusdrop-metrics v1";
pub const STEPS_SCHEMA: &str = "# schema: focusdrop-steps v1";

/// One row of `metrics.csv`. Mask columns are blank for epochs without masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub active_batches: usize,
    pub total_batches: usize,
    pub dropped_fraction: Option<f64>,
    pub retained_fraction: Option<f64>,
}

impl From<&EpochRecord> for MetricsRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            train_acc: r.train_acc,
            test_acc: r.test_acc,
            lr: r.lr,
            active_batches: r.active_batches,
            total_batches: r.total_batches,
            dropped_fraction: r.keep.map(|k| k.dropped_fraction),
            retained_fraction: r.keep.map(|k| k.retained_fraction),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub epoch: usize,
    pub active: bool,
    pub masked: bool,
    pub weight_decay: f64,
    pub lr: f64,
    pub loss: f64,
    pub batch_size: usize,
    pub dropped_fraction: Option<f64>,
}

impl From<&StepRecord> for StepRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            epoch: r.epoch,
            active: r.active,
            masked: r.masked,
            weight_decay: r.weight_decay,
            lr: r.lr,
            loss: r.loss,
            batch_size: r.batch_size,
            dropped_fraction: r.dropped_fraction,
        }
    }
}

/// CSV writer that emits a schema comment before the header and flushes each row.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path, schema: &str) -> Result<Self> {
        let mut file = File::create(path).map_err(io_err(path))?;
        writeln!(file, "{schema}").map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        })
    }

    pub fn write<S: Serialize>(&mut self, row: &S) -> Result<()> {
        self.writer.serialize(row).map_err(csv_err(&self.path))?;
        self.writer.flush().map_err(io_err(&self.path))
    }
}

/// Read rows written by [`CsvLog`], checking the schema line.
pub fn read_log<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    if first.trim_end() != schema {
        return Err(format_err(path, format!("expected `{schema}`, found `{}`", first.trim_end())));
    }
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_log(path, METRICS_SCHEMA)
}

pub fn read_steps(path: &Path) -> Result<Vec<StepRow>> {
    read_log(path, STEPS_SCHEMA)
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use focusdrop::checkpoint::load_checkpoint;
use focusdrop::config::{load_data_spec, ExperimentConfig};
use focusdrop::export::{export_heatmap, load_image_tensor};
use focusdrop::run::{run_experiment, sweep, SweepParam};
use focusdrop_core::analysis::{cam, reference_channel_histogram};
use focusdrop_core::data::Dataset;
use focusdrop_core::train::evaluate;

#[derive(Parser)]
#[command(name = "focusdrop", version, about = "Train and analyse CNNs regularized with FocusedDropout")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment from a TOML config.
    Train {
        config: PathBuf,
        /// Output root (defaults to $FOCUSDROP_OUTPUT_ROOT, then ./runs).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Test-split accuracy of a checkpoint on a dataset (config or data table file).
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// One run per value of a hyperparameter.
    Sweep {
        config: PathBuf,
        /// e.g. participation_rate=0,0.05,0.1 or gamma=0.3:0.6,0.9 or mwd=5e-4,1e-3
        #[arg(long)]
        param: String,
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Class activation map of an image, written as PGM and CSV.
    Cam {
        checkpoint: PathBuf,
        image: PathBuf,
        class: usize,
        /// Output path prefix; `.pgm` and `.csv` are appended.
        #[arg(long, default_value = "cam")]
        out: PathBuf,
    },
    /// Reference-channel histogram over correctly classified test images.
    Refhist {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value = "refhist.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, output_root } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = run_experiment(&cfg, output_root.as_deref())?;
            for e in &s.epochs {
                println!(
                    "epoch {:>3}  lr {:<8} loss {:.4}  train {:.4}  test {:.4}  active {}/{}",
                    e.epoch, e.lr, e.train_loss, e.train_acc, e.test_acc, e.active_batches, e.total_batches
                );
            }
            println!("best test accuracy {:.4} at epoch {} ({})", s.best_test_acc, s.best_epoch, s.dir.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            batch_size,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let test = test_split(&dataset, &ckpt.normalization)?;
            check_classes(&test, ckpt.model.spec().num_classes)?;
            let ev = evaluate(&ckpt.model, &test, batch_size)?;
            println!("accuracy {:.4} ({}/{})", ev.accuracy, ev.correct, ev.total);
        }
        Command::Sweep {
            config,
            param,
            output_root,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let param = SweepParam::parse(&param)?;
            let (dir, rows) = sweep(&cfg, &param, output_root.as_deref())?;
            for r in &rows {
                println!(
                    "{}={:<10} best {:.4}  dropped {}",
                    r.param,
                    r.value,
                    r.best_test_acc,
                    r.dropped_fraction.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into())
                );
            }
            println!("summary: {}", dir.join("sweep.csv").display());
        }
        Command::Cam {
            checkpoint,
            image,
            class,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let x = load_image_tensor(&image, ckpt.model.spec().input_size, &ckpt.normalization)?;
            let map = cam(&ckpt.model, &x, class)?;
            let (pgm, csv) = (with_ext(&out, "pgm"), with_ext(&out, "csv"));
            export_heatmap(&map, &pgm, &csv)?;
            println!("raw range [{}, {}] -> {} and {}", map.raw_min, map.raw_max, pgm.display(), csv.display());
        }
        Command::Refhist {
            checkpoint,
            dataset,
            out,
            batch_size,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let test = test_split(&dataset, &ckpt.normalization)?;
            check_classes(&test, ckpt.model.spec().num_classes)?;
            let hist = reference_channel_histogram(&ckpt.model, &test, batch_size)?;
            let mut w = csv::Writer::from_path(&out).with_context(|| out.display().to_string())?;
            w.write_record(["class", "channel", "count"])?;
            for (class, counts) in hist.counts.iter().enumerate() {
                for (ch, n) in counts.iter().enumerate() {
                    w.write_record([class.to_string(), ch.to_string(), n.to_string()])?;
                }
            }
            w.flush()?;
            for class in 0..hist.num_classes() {
                let share = hist.top1_share(class).map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
                println!("class {class:>3}: {} correct, top-1 channel share {share}", hist.correct_per_class[class]);
            }
            println!("histogram: {}", out.display());
        }
    }
    Ok(())
}

fn test_split(path: &Path, norm: &focusdrop_core::data::Normalization) -> Result<Dataset> {
    let spec = load_data_spec(path)?;
    let (_, test) = spec.load()?;
    Ok(test.with_normalization(norm.clone())?)
}

fn check_classes(data: &Dataset, classes: usize) -> Result<()> {
    if data.num_classes() != classes {
        bail!("dataset has {} classes, checkpoint has {classes}", data.num_classes());
    }
    Ok(())
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

//! CIFAR-10/100 binary ingestion and dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use focusdrop_core::data::{parse_cifar_records, CifarVariant, Dataset, Split};

use crate::error::{format_err, io_err, Result};
use crate::kv::{join_list, KvFile};

pub const TRAIN_COUNT: usize = 50_000;
pub const TEST_COUNT: usize = 10_000;

/// Binary file names of each split, relative to the dataset directory.
pub fn split_files(variant: CifarVariant) -> (Vec<String>, Vec<String>) {
    match variant {
        CifarVariant::Cifar10 => (
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            vec!["test_batch.bin".to_string()],
        ),
        CifarVariant::Cifar100 => (vec!["train.bin".to_string()], vec!["test.bin".to_string()]),
    }
}

/// `dir` itself, or the directory the official archive extracts to.
fn resolve_dir(dir: &Path, variant: CifarVariant) -> PathBuf {
    let (train, _) = split_files(variant);
    if dir.join(&train[0]).exists() {
        return dir.to_path_buf();
    }
    let nested = dir.join(match variant {
        CifarVariant::Cifar10 => "cifar-10-batches-bin",
        CifarVariant::Cifar100 => "cifar-100-binary",
    });
    if nested.join(&train[0]).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Load both splits with the canonical 50,000/10,000 record counts. The test
/// split carries the training split's normalization.
pub fn load_cifar(dir: &Path, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    let dir = resolve_dir(dir, variant);
    let (train, test) = split_files(variant);
    let train: Vec<PathBuf> = train.iter().map(|f| dir.join(f)).collect();
    let test: Vec<PathBuf> = test.iter().map(|f| dir.join(f)).collect();
    load_cifar_files(&train, &test, variant, Some((TRAIN_COUNT, TEST_COUNT)))
}

/// Load explicit files; `expected` enforces record counts per split.
pub fn load_cifar_files(
    train: &[PathBuf],
    test: &[PathBuf],
    variant: CifarVariant,
    expected: Option<(usize, usize)>,
) -> Result<(Dataset, Dataset)> {
    let train_ds = load_split(train, variant, Split::Train, expected.map(|e| e.0))?;
    let test_ds = load_split(test, variant, Split::Test, expected.map(|e| e.1))?
        .with_normalization(train_ds.normalization().clone())?;
    Ok((train_ds, test_ds))
}

fn load_split(files: &[PathBuf], variant: CifarVariant, split: Split, expected: Option<usize>) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let (p, l) = parse_cifar_records(&bytes, variant, 0).map_err(|e| format_err(path, e.to_string()))?;
        pixels.extend(p);
        labels.extend(l);
    }
    if let Some(n) = expected {
        if labels.len() != n {
            let what = files.first().map(PathBuf::as_path).unwrap_or(Path::new("."));
            return Err(format_err(what, format!("{split:?} split has {} records, expected {n}", labels.len())));
        }
    }
    Ok(Dataset::new(pixels, labels, (3, 32, 32), variant.classes(), split)?)
}

/// Plain-text description of a dataset pair, stored next to run outputs.
pub fn write_dataset_manifest(path: &Path, source: &str, train: &Dataset, test: &Dataset, seed: Option<u64>) -> Result<()> {
    let (c, h, w) = train.image_shape();
    let mut kv = KvFile::default();
    kv.push("source", source)
        .push("train_count", train.len())
        .push("test_count", test.len())
        .push("num_classes", train.num_classes())
        .push("image_shape", join_list(&[c, h, w]))
        .push("norm_mean", join_list(&train.normalization().mean))
        .push("norm_std", join_list(&train.normalization().std));
    if let Some(s) = seed {
        kv.push("seed", s);
    }
    kv.write(path, "focusdrop dataset manifest")
}

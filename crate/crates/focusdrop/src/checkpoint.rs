//! Checkpoint directories: `manifest.txt` (model spec, normalization,
//! tensor names and shapes) and `tensors.bin` (the snapshots, in manifest
//! order).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use focusdrop_core::data::Normalization;
use focusdrop_core::nn::{build_model, Model, ModelSpec};
use focusdrop_core::Tensor;

use crate::error::{format_err, io_err, Result};
use crate::kv::{join_list, parse_list, KvFile};
use crate::snapshot::{read_tensor, write_tensor};

pub const FORMAT: &str = "focusdrop-checkpoint-1";
pub const MANIFEST: &str = "manifest.txt";
pub const TENSORS: &str = "tensors.bin";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub normalization: Normalization,
    pub epoch: usize,
    pub test_acc: f64,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &Model<f32>,
    normalization: &Normalization,
    epoch: usize,
    test_acc: f64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let spec = model.spec();
    let tensors = model.named_tensors();
    let mut kv = KvFile::default();
    kv.push("format", FORMAT)
        .push("architecture", &spec.architecture)
        .push("stage_widths", join_list(&spec.stage_widths))
        .push("depth", spec.depth)
        .push("num_classes", spec.num_classes)
        .push("in_channels", spec.in_channels)
        .push("input_size", spec.input_size)
        .push("norm_mean", join_list(&normalization.mean))
        .push("norm_std", join_list(&normalization.std))
        .push("epoch", epoch)
        .push("test_acc", test_acc);
    for (name, t) in &tensors {
        kv.push("tensor", format!("{name} {}", join_list(t.shape())));
    }
    let bin = dir.join(TENSORS);
    let file = File::create(&bin).map_err(io_err(&bin))?;
    let mut w = BufWriter::new(file);
    for (_, t) in &tensors {
        write_tensor(&mut w, t).map_err(io_err(&bin))?;
    }
    w.flush().map_err(io_err(&bin))?;
    kv.write(&dir.join(MANIFEST), "focusdrop checkpoint")
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join(MANIFEST);
    let kv = KvFile::read(&mpath)?;
    if kv.require("format", &mpath)? != FORMAT {
        return Err(format_err(&mpath, "unknown checkpoint format"));
    }
    let spec = ModelSpec {
        architecture: kv.require("architecture", &mpath)?.to_string(),
        stage_widths: parse_list(kv.require("stage_widths", &mpath)?, "stage_widths", &mpath)?,
        depth: kv.parse_required("depth", &mpath)?,
        num_classes: kv.parse_required("num_classes", &mpath)?,
        in_channels: kv.parse_required("in_channels", &mpath)?,
        input_size: kv.parse_required("input_size", &mpath)?,
    };
    let normalization = Normalization {
        mean: parse_list(kv.require("norm_mean", &mpath)?, "norm_mean", &mpath)?,
        std: parse_list(kv.require("norm_std", &mpath)?, "norm_std", &mpath)?,
    };
    let listed: Vec<(String, Vec<usize>)> = kv
        .get_all("tensor")
        .map(|line| {
            let (name, dims) = line
                .split_once(' ')
                .ok_or_else(|| format_err(&mpath, format!("bad tensor line `{line}`")))?;
            Ok((name.to_string(), parse_list(dims, "tensor", &mpath)?))
        })
        .collect::<Result<_>>()?;

    let bin: PathBuf = dir.join(TENSORS);
    let mut r = BufReader::new(File::open(&bin).map_err(io_err(&bin))?);
    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::with_capacity(listed.len());
    for (name, shape) in listed {
        let t = read_tensor(&mut r).map_err(io_err(&bin))?;
        if t.shape() != shape.as_slice() {
            return Err(format_err(&bin, format!("tensor `{name}` has shape {:?}, manifest says {shape:?}", t.shape())));
        }
        tensors.push((name, t));
    }
    let mut model = build_model::<f32>(&spec, 0)?;
    model.load_named_tensors(&tensors)?;
    Ok(Checkpoint {
        model,
        normalization,
        epoch: kv.parse_required("epoch", &mpath)?,
        test_acc: kv.parse_required("test_acc", &mpath)?,
    })
}

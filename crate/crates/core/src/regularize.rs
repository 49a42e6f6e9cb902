//! Regularizers that can be placed after a network stage: FocusedDropout,
//! its opposite ablation, and the random-drop baselines (standard dropout,
//! SpatialDropout, DropBlock).
//!
//! Every regularizer is expressed as a multiplicative mask that broadcasts
//! against the NCHW activations, which gives one code path for plain tensors
//! and for the tape. All of them are the exact identity in
//! [`DropoutMode::Inference`].

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{invalid, Result};
use crate::focus::{draw_gammas, focus_masks, invert_mask, DropoutMode, FocusMask, GammaRange};
use crate::rng::SampleStreams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum RegularizerKind {
    #[default]
    None,
    /// Unit-wise inverted dropout.
    Standard { p: f64 },
    /// Whole-channel inverted dropout.
    Spatial { p: f64 },
    DropBlock { block_size: usize, keep_prob: f64 },
    Focused {
        #[cfg_attr(feature = "serde", serde(default))]
        gamma: GammaRange,
    },
    /// Drops the focused area and keeps everything else.
    Opposite {
        #[cfg_attr(feature = "serde", serde(default))]
        gamma: GammaRange,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegularizerSpec {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub kind: RegularizerKind,
    /// Stage names such as `stage1` or `penultimate`; empty selects the
    /// kind's default placement.
    #[cfg_attr(feature = "serde", serde(default))]
    pub insertion_points: Vec<String>,
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind) -> Self {
        Self {
            kind,
            insertion_points: Vec::new(),
        }
    }

    pub fn at(mut self, point: &str) -> Self {
        self.insertion_points.push(point.to_string());
        self
    }

    /// Explicit points, or DropBlock after the first two stages and
    /// everything else after the penultimate stage.
    pub fn resolved_points(&self) -> Vec<String> {
        if !self.insertion_points.is_empty() {
            return self.insertion_points.clone();
        }
        match self.kind {
            RegularizerKind::None => Vec::new(),
            RegularizerKind::DropBlock { .. } => vec!["stage1".to_string(), "stage2".to_string()],
            _ => vec!["penultimate".to_string()],
        }
    }
}

/// A sampled mask ready to broadcast against the activations it was drawn for.
#[derive(Debug, Clone)]
pub struct DropMask<T> {
    pub tensor: Tensor<T>,
    /// Per sample: zero entries of the mask over all its entries.
    pub dropped_fractions: Vec<f64>,
    /// Focus masks with metadata (Focused and Opposite only).
    pub focus: Vec<FocusMask<T>>,
}

impl RegularizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::Standard { .. } => "standard",
            RegularizerKind::Spatial { .. } => "spatial",
            RegularizerKind::DropBlock { .. } => "dropblock",
            RegularizerKind::Focused { .. } => "focused",
            RegularizerKind::Opposite { .. } => "opposite",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RegularizerKind::Standard { p } | RegularizerKind::Spatial { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(invalid!("{}: drop probability {p} must be in [0, 1)", self.name()));
                }
            }
            RegularizerKind::DropBlock { block_size, keep_prob } => {
                if block_size == 0 {
                    return Err(invalid!("dropblock: block_size must be at least 1"));
                }
                if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                    return Err(invalid!("dropblock: keep_prob {keep_prob} must be in (0, 1]"));
                }
            }
            RegularizerKind::Focused { gamma } | RegularizerKind::Opposite { gamma } => {
                GammaRange::new(gamma.lo(), gamma.hi())?;
            }
            RegularizerKind::None => {}
        }
        Ok(())
    }

    /// Draw a training-time mask for `batch`; `None` when this kind never
    /// changes its input.
    pub fn sample_mask<T: Scalar, R: Rng + ?Sized>(&self, batch: &Tensor<T>, rng: &mut R) -> Result<Option<DropMask<T>>> {
        self.validate()?;
        let (n, c, h, w) = batch.nchw(self.name())?;
        let streams = SampleStreams::draw(rng);
        let mask = match *self {
            RegularizerKind::None => return Ok(None),
            RegularizerKind::Standard { p } => {
                if p == 0.0 {
                    return Ok(None);
                }
                bernoulli_mask(n, &[n, c, h, w], p, &streams)?
            }
            RegularizerKind::Spatial { p } => {
                if p == 0.0 {
                    return Ok(None);
                }
                bernoulli_mask(n, &[n, c, 1, 1], p, &streams)?
            }
            RegularizerKind::DropBlock { block_size, keep_prob } => {
                if block_size > h || block_size > w {
                    return Err(invalid!("dropblock: block {block_size} larger than {h}x{w} feature map"));
                }
                if keep_prob >= 1.0 {
                    return Ok(None);
                }
                dropblock_mask(n, h, w, block_size, keep_prob, &streams)?
            }
            RegularizerKind::Focused { gamma } | RegularizerKind::Opposite { gamma } => {
                let gammas = draw_gammas(n, &gamma, &streams);
                let mut masks = focus_masks(batch, &gammas)?;
                if matches!(self, RegularizerKind::Opposite { .. }) {
                    masks = masks.iter().map(invert_mask).collect();
                }
                let dropped_fractions = masks
                    .iter()
                    .map(|m| m.dropped() as f64 / m.bits.len() as f64)
                    .collect();
                DropMask {
                    tensor: crate::focus::masks_to_tensor(&masks)?,
                    dropped_fractions,
                    focus: masks,
                }
            }
        };
        Ok(Some(mask))
    }

    pub fn apply<T: Scalar, R: Rng + ?Sized>(&self, batch: &Tensor<T>, mode: DropoutMode, rng: &mut R) -> Result<Tensor<T>> {
        batch.nchw(self.name())?;
        if mode == DropoutMode::Inference {
            return Ok(batch.clone());
        }
        match self.sample_mask(batch, rng)? {
            Some(mask) => batch.broadcast_mul(&mask.tensor),
            None => Ok(batch.clone()),
        }
    }

    /// Tape version of [`apply`](Self::apply); the mask enters as a constant
    /// so gradients through dropped units are exactly zero.
    pub fn apply_on_tape<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<(Var, Option<DropMask<T>>)> {
        tape.value(input).nchw(self.name())?;
        if mode == DropoutMode::Inference {
            return Ok((input, None));
        }
        match self.sample_mask(tape.value(input), rng)? {
            Some(mask) => {
                let m = tape.constant(mask.tensor.clone());
                Ok((tape.mul(input, m)?, Some(mask)))
            }
            None => Ok((input, None)),
        }
    }
}

/// Inverted-dropout mask: each entry is zero with probability `p`, otherwise
/// `1 / (1 - p)`. The leading axis of `shape` is the sample axis.
fn bernoulli_mask<T: Scalar>(n: usize, shape: &[usize], p: f64, streams: &SampleStreams) -> Result<DropMask<T>> {
    let per_sample: usize = shape[1..].iter().product();
    let keep = T::cast(1.0 / (1.0 - p));
    let mut data = Vec::with_capacity(n * per_sample);
    let mut dropped_fractions = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.sample(i);
        let mut dropped = 0usize;
        for _ in 0..per_sample {
            if rng.random::<f64>() < p {
                dropped += 1;
                data.push(T::zero());
            } else {
                data.push(keep);
            }
        }
        dropped_fractions.push(dropped as f64 / per_sample as f64);
    }
    Ok(DropMask {
        tensor: Tensor::new(shape, data)?,
        dropped_fractions,
        focus: Vec::new(),
    })
}

/// Seed rate so that the expected dropped fraction is about `1 - keep_prob`.
pub fn dropblock_seed_rate(h: usize, w: usize, block_size: usize, keep_prob: f64) -> f64 {
    let valid = ((h - block_size + 1) * (w - block_size + 1)) as f64;
    (1.0 - keep_prob) / (block_size * block_size) as f64 * (h * w) as f64 / valid
}

fn dropblock_mask<T: Scalar>(
    n: usize,
    h: usize,
    w: usize,
    block_size: usize,
    keep_prob: f64,
    streams: &SampleStreams,
) -> Result<DropMask<T>> {
    let rate = dropblock_seed_rate(h, w, block_size, keep_prob);
    let mut data = Vec::with_capacity(n * h * w);
    let mut dropped_fractions = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = streams.sample(i);
        let mut keep = vec![true; h * w];
        for y in 0..=h - block_size {
            for x in 0..=w - block_size {
                if rng.random::<f64>() < rate {
                    for by in y..y + block_size {
                        keep[by * w + x..by * w + x + block_size].fill(false);
                    }
                }
            }
        }
        let kept = keep.iter().filter(|&&k| k).count();
        let scale = if kept == 0 {
            T::zero()
        } else {
            T::cast((h * w) as f64 / kept as f64)
        };
        data.extend(keep.iter().map(|&k| if k { scale } else { T::zero() }));
        dropped_fractions.push((h * w - kept) as f64 / (h * w) as f64);
    }
    Ok(DropMask {
        tensor: Tensor::new(&[n, 1, h, w], data)?,
        dropped_fractions,
        focus: Vec::new(),
    })
}

pub fn standard_dropout<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, p: f64, mode: DropoutMode, rng: &mut R) -> Result<Tensor<T>> {
    RegularizerKind::Standard { p }.apply(batch, mode, rng)
}

pub fn spatial_dropout<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, p: f64, mode: DropoutMode, rng: &mut R) -> Result<Tensor<T>> {
    RegularizerKind::Spatial { p }.apply(batch, mode, rng)
}

pub fn dropblock<T: Scalar, R: Rng + ?Sized>(
    batch: &Tensor<T>,
    block_size: usize,
    keep_prob: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    RegularizerKind::DropBlock { block_size, keep_prob }.apply(batch, mode, rng)
}

pub fn opposite_dropout<T: Scalar, R: Rng + ?Sized>(
    batch: &Tensor<T>,
    gamma: &GammaRange,
    mode: DropoutMode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    RegularizerKind::Opposite { gamma: *gamma }.apply(batch, mode, rng)
}

//! FocusedDropout.
//!
//! For each sample the channel with the highest mean activation becomes the
//! reference channel. Positions on that channel whose activation strictly
//! exceeds `γ · peak` form the focused area; a binary mask marking that area
//! multiplies every channel of the sample, so only spatially co-located
//! units survive. At inference the layer is the identity, and no rescaling
//! is applied at either time.
//!
//! Conventions:
//! * ties in the channel argmax and in the peak search go to the lowest
//!   linear index (row-major for positions);
//! * when the peak activation is `≤ 0` (e.g. an all-zero post-ReLU stack)
//!   the mask is all ones and the sample passes through unchanged;
//! * `γ` is drawn per sample, from a stream derived from the sample index.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SampleStreams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DropoutMode {
    #[default]
    Train,
    Inference,
}

/// Closed interval `[lo, hi] ⊂ (0, 1)` from which `γ` is drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "[f64; 2]", into = "[f64; 2]"))]
pub struct GammaRange {
    lo: f64,
    hi: f64,
}

impl GammaRange {
    /// The range used throughout the reported experiments.
    pub const DEFAULT: GammaRange = GammaRange { lo: 0.3, hi: 0.6 };
    /// The range written in the algorithm listing.
    pub const LISTING: GammaRange = GammaRange { lo: 0.6, hi: 0.9 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let inside = |v: f64| v > 0.0 && v < 1.0;
        if !(inside(lo) && inside(hi) && lo <= hi) {
            return Err(crate::error::invalid!(
                "gamma range [{lo}, {hi}] must satisfy 0 < lo <= hi < 1"
            ));
        }
        Ok(Self { lo, hi })
    }

    pub fn fixed(value: f64) -> Result<Self> {
        Self::new(value, value)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, gamma: f64) -> bool {
        self.lo <= gamma && gamma <= self.hi
    }
}

impl Default for GammaRange {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[f64; 2]> for GammaRange {
    type Error = Error;
    fn try_from([lo, hi]: [f64; 2]) -> Result<Self> {
        Self::new(lo, hi)
    }
}

impl From<GammaRange> for [f64; 2] {
    fn from(r: GammaRange) -> Self {
        [r.lo, r.hi]
    }
}

/// One sample's activations `(channels, height, width)`, borrowed from an
/// NCHW batch.
#[derive(Debug, Clone, Copy)]
pub struct FeatureStack<'a, T> {
    values: &'a [T],
    channels: usize,
    height: usize,
    width: usize,
}

impl<'a, T: Scalar> FeatureStack<'a, T> {
    pub fn new(values: &'a [T], channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || values.len() != channels * height * width {
            return Err(Error::DataLength {
                shape: vec![channels, height, width],
                len: values.len(),
            });
        }
        Ok(Self {
            values,
            channels,
            height,
            width,
        })
    }

    /// Sample `index` of an NCHW batch.
    pub fn from_batch(batch: &'a Tensor<T>, index: usize) -> Result<Self> {
        let (n, c, h, w) = batch.nchw("feature stack")?;
        if index >= n {
            return Err(crate::error::invalid!("sample {index} out of range for batch of {n}"));
        }
        Self::new(batch.sample(index), c, h, w)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self, i: usize) -> &'a [T] {
        let plane = self.height * self.width;
        &self.values[i * plane..(i + 1) * plane]
    }
}

/// Per-channel mean activations `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights<T>(pub Vec<T>);

impl<T> ChannelWeights<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

pub fn channel_mean_activations<T: Scalar>(stack: &FeatureStack<'_, T>) -> ChannelWeights<T> {
    let area = T::cast((stack.height * stack.width) as f64);
    ChannelWeights(
        (0..stack.channels)
            .map(|i| stack.channel(i).iter().copied().sum::<T>() / area)
            .collect(),
    )
}

/// Index of the largest weight; the lowest index wins ties.
pub fn select_reference_channel<T: Scalar>(weights: &ChannelWeights<T>) -> usize {
    let mut best = 0;
    for (i, &w) in weights.0.iter().enumerate().skip(1) {
        if w > weights.0[best] {
            best = i;
        }
    }
    best
}

/// `((row, col), value)` of the channel maximum; first in row-major order wins ties.
pub fn peak_unit<T: Scalar>(channel: &[T], width: usize) -> ((usize, usize), T) {
    let mut best = 0;
    for (i, &v) in channel.iter().enumerate().skip(1) {
        if v > channel[best] {
            best = i;
        }
    }
    ((best / width, best % width), channel[best])
}

pub fn sample_gamma<R: Rng + ?Sized>(range: &GammaRange, rng: &mut R) -> f64 {
    if range.lo == range.hi {
        return range.lo;
    }
    rng.random_range(range.lo..=range.hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusMask<T> {
    pub height: usize,
    pub width: usize,
    /// Row-major; `true` means the position is retained.
    pub bits: Vec<bool>,
    pub gamma: T,
    pub threshold: T,
    pub ref_channel: usize,
    pub peak_pos: (usize, usize),
    pub peak_value: T,
}

impl<T: Scalar> FocusMask<T> {
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn retained(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn dropped(&self) -> usize {
        self.bits.len() - self.retained()
    }

    /// Peak `≤ 0`: the all-ones pass-through mask.
    pub fn is_degenerate(&self) -> bool {
        self.peak_value <= T::zero()
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.bits.iter().map(|&b| if b { T::one() } else { T::zero() })
    }
}

pub fn build_focus_mask<T: Scalar>(stack: &FeatureStack<'_, T>, gamma: T) -> FocusMask<T> {
    let weights = channel_mean_activations(stack);
    let k = select_reference_channel(&weights);
    let reference = stack.channel(k);
    let (peak_pos, peak_value) = peak_unit(reference, stack.width);
    let threshold = gamma * peak_value;
    let bits = if peak_value <= T::zero() {
        vec![true; reference.len()]
    } else {
        reference.iter().map(|&v| v > threshold).collect()
    };
    FocusMask {
        height: stack.height,
        width: stack.width,
        bits,
        gamma,
        threshold,
        ref_channel: k,
        peak_pos,
        peak_value,
    }
}

/// Flip every bit; metadata is carried over unchanged. A degenerate
/// mask stays the all-ones pass-through.
pub fn invert_mask<T: Scalar>(mask: &FocusMask<T>) -> FocusMask<T> {
    if mask.is_degenerate() {
        return mask.clone();
    }
    FocusMask {
        bits: mask.bits.iter().map(|b| !b).collect(),
        ..mask.clone()
    }
}

/// One `γ` per sample, drawn from per-sample streams under `streams`.
pub fn draw_gammas(count: usize, range: &GammaRange, streams: &SampleStreams) -> Vec<f64> {
    (0..count)
        .map(|i| sample_gamma(range, &mut streams.sample(i)))
        .collect()
}

/// Focus masks for every sample of an NCHW batch with explicit `γ` values.
pub fn focus_masks<T: Scalar>(batch: &Tensor<T>, gammas: &[f64]) -> Result<Vec<FocusMask<T>>> {
    let (n, ..) = batch.nchw("focused_dropout")?;
    if gammas.len() != n {
        return Err(Error::ShapeMismatch {
            op: "focused_dropout gammas",
            left: batch.shape().to_vec(),
            right: vec![gammas.len()],
        });
    }
    (0..n)
        .map(|i| Ok(build_focus_mask(&FeatureStack::from_batch(batch, i)?, T::cast(gammas[i]))))
        .collect()
}

/// Stack per-sample masks into an `(N, 1, H, W)` tensor for broadcasting.
pub fn masks_to_tensor<T: Scalar>(masks: &[FocusMask<T>]) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| crate::error::invalid!("no masks to stack"))?;
    let (h, w) = (first.height, first.width);
    let data = masks.iter().flat_map(|m| m.values()).collect();
    Tensor::new(&[masks.len(), 1, h, w], data)
}

/// `C ⊙ m` per sample.
pub fn apply_masks<T: Scalar>(batch: &Tensor<T>, masks: &[FocusMask<T>]) -> Result<Tensor<T>> {
    batch.broadcast_mul(&masks_to_tensor(masks)?)
}

/// The FocusedDropout layer on a plain tensor.
pub fn apply_focused_dropout<T: Scalar, R: Rng + ?Sized>(
    batch: &Tensor<T>,
    mode: DropoutMode,
    range: &GammaRange,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let (n, ..) = batch.nchw("focused_dropout")?;
    if mode == DropoutMode::Inference {
        return Ok(batch.clone());
    }
    let gammas = draw_gammas(n, range, &SampleStreams::draw(rng));
    apply_masks(batch, &focus_masks(batch, &gammas)?)
}

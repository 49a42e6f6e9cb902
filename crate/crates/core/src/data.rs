//! Datasets, augmentation and batching.
//!
//! Pixels are stored as bytes in CHW order per image (the CIFAR record
//! layout) and exposed as `[0, 1]` floats; per-channel normalization is
//! computed once on the training split and carried by every split derived
//! from it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::rng::{ids, stream, SampleStreams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

/// Per-channel mean and standard deviation on the `[0, 1]` pixel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u16>,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    split: Split,
    normalization: Normalization,
}

impl Dataset {
    /// Wrap raw images; normalization statistics are computed from them.
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u16>,
        (channels, height, width): (usize, usize, usize),
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let image = channels * height * width;
        if image == 0 || pixels.len() != labels.len() * image {
            return Err(invalid!(
                "dataset: {} pixel bytes do not hold {} images of {channels}x{height}x{width}",
                pixels.len(),
                labels.len()
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(invalid!("dataset: label {bad} out of range for {num_classes} classes"));
        }
        let mut ds = Self {
            pixels,
            labels,
            channels,
            height,
            width,
            num_classes,
            split,
            normalization: Normalization::identity(channels),
        };
        ds.normalization = ds.compute_normalization();
        Ok(ds)
    }

    /// Build from `[0, 1]` floats (quantized to 8 bits); out-of-range values are rejected.
    pub fn from_unit_floats(
        values: &[f32],
        labels: Vec<u16>,
        dims: (usize, usize, usize),
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("pixel {i} has value {v} outside [0, 1]"));
        }
        let pixels = values.iter().map(|&v| num_traits::Float::round(v * 255.0) as u8).collect();
        Self::new(pixels, labels, dims, num_classes, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Replace the stored statistics, e.g. with the training split's.
    pub fn with_normalization(mut self, norm: Normalization) -> Result<Self> {
        if norm.mean.len() != self.channels || norm.std.len() != self.channels {
            return Err(invalid!("normalization has wrong channel count"));
        }
        self.normalization = norm;
        Ok(self)
    }

    fn compute_normalization(&self) -> Normalization {
        let plane = self.height * self.width;
        let image = self.channels * plane;
        let count = (self.len() * plane) as f64;
        let mut mean = vec![0.0f64; self.channels];
        let mut sq = vec![0.0f64; self.channels];
        for img in self.pixels.chunks(image) {
            for (c, ch) in img.chunks(plane).enumerate() {
                for &p in ch {
                    let v = p as f64 / 255.0;
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let mut std = vec![1.0; self.channels];
        for c in 0..self.channels {
            mean[c] /= count;
            let var = sq[c] / count - mean[c] * mean[c];
            let s = num_traits::Float::sqrt(var.max(0.0));
            if s > 1e-12 {
                std[c] = s;
            }
        }
        Normalization { mean, std }
    }

    /// Image `i` on the `[0, 1]` scale.
    pub fn unit_image(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let image = self.channels * self.height * self.width;
        self.pixels[i * image..(i + 1) * image]
            .iter()
            .map(|&p| p as f64 / 255.0)
    }

    /// Assemble the images at `indices` as an NCHW batch: raw `[0, 1]`
    /// pixels, optionally augmented, then normalized.
    pub fn batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        augment_with: Option<(&AugmentPolicy, &mut R)>,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(invalid!("empty batch"));
        }
        let (c, h, w) = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            if i >= self.len() {
                return Err(invalid!("index {i} out of range for {} images", self.len()));
            }
            data.extend(self.unit_image(i).map(T::cast));
        }
        let mut batch = Tensor::new(&[indices.len(), c, h, w], data)?;
        if let Some((policy, rng)) = augment_with {
            batch = augment(&batch, policy, rng)?;
        }
        let plane = h * w;
        for img in batch.data_mut().chunks_mut(c * plane) {
            for (ch, vals) in img.chunks_mut(plane).enumerate() {
                let m = T::cast(self.normalization.mean[ch]);
                let s = T::cast(self.normalization.std[ch]);
                for v in vals {
                    *v = (*v - m) / s;
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        Ok((batch, labels))
    }

    /// Keep only the first `n` images of each class (in storage order).
    pub fn take_per_class(&self, n: usize) -> Result<Self> {
        let image = self.channels * self.height * self.width;
        let mut seen = vec![0usize; self.num_classes];
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if seen[l as usize] < n {
                seen[l as usize] += 1;
                labels.push(l);
                pixels.extend_from_slice(&self.pixels[i * image..(i + 1) * image]);
            }
        }
        let ds = Self::new(pixels, labels, self.image_shape(), self.num_classes, self.split)?;
        ds.with_normalization(self.normalization.clone())
    }
}

/// A shuffled visiting order covering every index exactly once.
pub fn epoch_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentPolicy {
    /// Probability of a horizontal flip per image.
    pub flip_prob: f64,
    /// Zero padding on each side before cropping back to the input size.
    pub crop_pad: usize,
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy {
        flip_prob: 0.0,
        crop_pad: 0,
    };

    /// Flip with probability ½ and pad-4 random crops.
    pub const CIFAR: AugmentPolicy = AugmentPolicy {
        flip_prob: 0.5,
        crop_pad: 4,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(invalid!("augment: flip probability {} outside [0, 1]", self.flip_prob));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.flip_prob == 0.0 && self.crop_pad == 0
    }
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::CIFAR
    }
}

/// Top-left corner of the crop window inside the padded image, uniform
/// over `(2·pad + 1)²` positions.
pub fn sample_crop_offset<R: Rng + ?Sized>(pad: usize, rng: &mut R) -> (usize, usize) {
    if pad == 0 {
        return (0, 0);
    }
    (rng.random_range(0..=2 * pad), rng.random_range(0..=2 * pad))
}

/// Random flip and crop applied independently per image, each image using
/// its own derived stream.
pub fn augment<T: Scalar, R: Rng + ?Sized>(batch: &Tensor<T>, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor<T>> {
    policy.validate()?;
    let (n, c, h, w) = batch.nchw("augment")?;
    if policy.is_identity() {
        return Ok(batch.clone());
    }
    let streams = SampleStreams::draw(rng);
    let mut out = batch.clone();
    let pad = policy.crop_pad;
    let plane = h * w;
    for i in 0..n {
        let mut r = streams.sample(i);
        let flip = policy.flip_prob > 0.0 && r.random::<f64>() < policy.flip_prob;
        let (oy, ox) = sample_crop_offset(pad, &mut r);
        let src = batch.sample(i);
        let dst = &mut out.data_mut()[i * c * plane..(i + 1) * c * plane];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    // Position in the padded image, then back to source coordinates.
                    let py = (y + oy) as isize - pad as isize;
                    let px = (x + ox) as isize - pad as isize;
                    let v = if py >= 0 && px >= 0 && (py as usize) < h && (px as usize) < w {
                        let sx = if flip { w - 1 - px as usize } else { px as usize };
                        src[ch * plane + py as usize * w + sx]
                    } else {
                        T::zero()
                    };
                    dst[ch * plane + y * w + x] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Class-conditional shapes on noisy backgrounds.
///
/// Class `c` draws shape `c % 6` (horizontal bar, vertical bar, disc, plus,
/// diagonal bar, ring) at a random position, size and color; classes 6..12
/// repeat the shapes in a cool instead of warm palette. Background level and
/// per-pixel Gaussian noise vary per image. Labels cycle `0, 1, .., classes-1`
/// so every class has exactly `n_per_class` images.
pub fn make_synthetic(classes: usize, n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    synthetic_split(classes, n_per_class, size, seed, Split::Train)
}

pub fn synthetic_split(classes: usize, n_per_class: usize, size: usize, seed: u64, split: Split) -> Result<Dataset> {
    if size < 8 {
        return Err(invalid!("synthetic: image size {size} must be at least 8"));
    }
    if !(2..=12).contains(&classes) {
        return Err(invalid!("synthetic: {classes} classes not supported (2..=12)"));
    }
    if n_per_class == 0 {
        return Err(invalid!("synthetic: need at least one image per class"));
    }
    let id = match split {
        Split::Train => ids::SYNTHETIC_TRAIN,
        Split::Test => ids::SYNTHETIC_TEST,
    };
    let mut rng = stream(seed, id);
    let noise = Normal::new(0.0, 0.08).expect("positive std");
    let total = classes * n_per_class;
    let plane = size * size;
    let mut pixels = Vec::with_capacity(total * 3 * plane);
    let mut labels = Vec::with_capacity(total);
    let s = size as f64;
    for i in 0..total {
        let class = i % classes;
        let shape = class % 6;
        let color: [f64; 3] = if class < 6 {
            [rng.random_range(0.7..1.0), rng.random_range(0.35..1.0), rng.random_range(0.0..0.45)]
        } else {
            [rng.random_range(0.0..0.45), rng.random_range(0.35..1.0), rng.random_range(0.7..1.0)]
        };
        let bg = rng.random_range(0.05..0.35);
        let cy = rng.random_range(0.3 * s..0.7 * s);
        let cx = rng.random_range(0.3 * s..0.7 * s);
        let half_len = rng.random_range(0.25 * s..0.38 * s);
        let half_thick = (s / 16.0).max(0.75) * rng.random_range(0.9..1.4);
        let radius = rng.random_range(0.18 * s..0.28 * s);
        let mut img = vec![0.0f64; 3 * plane];
        for y in 0..size {
            for x in 0..size {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                let hbar = dy.abs() <= half_thick && dx.abs() <= half_len;
                let vbar = dx.abs() <= half_thick && dy.abs() <= half_len;
                let d = num_traits::Float::sqrt(dy * dy + dx * dx);
                let inside = match shape {
                    0 => hbar,
                    1 => vbar,
                    2 => d <= radius,
                    3 => (dy.abs() <= half_thick && dx.abs() <= 0.75 * half_len)
                        || (dx.abs() <= half_thick && dy.abs() <= 0.75 * half_len),
                    4 => {
                        let across = (dy - dx).abs() / core::f64::consts::SQRT_2;
                        let along = (dy + dx).abs() / core::f64::consts::SQRT_2;
                        across <= half_thick && along <= half_len
                    }
                    _ => (d - radius).abs() <= half_thick,
                };
                for c in 0..3 {
                    let base = if inside { color[c] } else { bg };
                    img[c * plane + y * size + x] = base + noise.sample(&mut rng);
                }
            }
        }
        pixels.extend(
            img.iter()
                .map(|v| num_traits::Float::round(v.clamp(0.0, 1.0) * 255.0) as u8),
        );
        labels.push(class as u16);
    }
    Dataset::new(pixels, labels, (3, size, size), classes, split)
}

/// Train and test splits from independent streams of `seed`; the test split
/// carries the training split's normalization.
pub fn synthetic_pair(
    classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let train = synthetic_split(classes, train_per_class, size, seed, Split::Train)?;
    let test = synthetic_split(classes, test_per_class, size, seed, Split::Test)?
        .with_normalization(train.normalization().clone())?;
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CifarVariant {
    #[cfg_attr(feature = "serde", serde(rename = "cifar10"))]
    Cifar10,
    /// Fine labels are used; the coarse label byte is skipped.
    #[cfg_attr(feature = "serde", serde(rename = "cifar100"))]
    Cifar100,
}

impl CifarVariant {
    pub const IMAGE_BYTES: usize = 3 * 32 * 32;

    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_bytes(self) -> usize {
        self.label_bytes() + Self::IMAGE_BYTES
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Decode concatenated CIFAR binary records. `base_offset` is added to
/// reported byte offsets so errors point into the original file.
pub fn parse_cifar_records(bytes: &[u8], variant: CifarVariant, base_offset: usize) -> Result<(Vec<u8>, Vec<u16>)> {
    let rec = variant.record_bytes();
    let whole = bytes.len() / rec * rec;
    if whole != bytes.len() {
        return Err(Error::MalformedRecord {
            offset: base_offset + whole,
            reason: format!(
                "truncated record: {} trailing bytes, records are {rec} bytes",
                bytes.len() - whole
            ),
        });
    }
    let mut pixels = Vec::with_capacity(bytes.len() / rec * CifarVariant::IMAGE_BYTES);
    let mut labels = Vec::with_capacity(bytes.len() / rec);
    for (k, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[variant.label_bytes() - 1] as usize;
        if label >= variant.classes() {
            return Err(Error::MalformedRecord {
                offset: base_offset + k * rec,
                reason: format!("label {label} out of range for {} classes", variant.classes()),
            });
        }
        labels.push(label as u16);
        pixels.extend_from_slice(&record[variant.label_bytes()..]);
    }
    Ok((pixels, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = make_synthetic(3, 20, 16, 7).unwrap();
        let b = make_synthetic(3, 20, 16, 7).unwrap();
        assert_eq!(a, b);
        for c in 0..3u16 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 20);
        }
        assert_ne!(a, make_synthetic(3, 20, 16, 8).unwrap());
    }

    #[test]
    fn synthetic_rejects_small_images() {
        assert!(make_synthetic(3, 5, 7, 0).is_err());
    }

    #[test]
    fn identity_policy_leaves_batch() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4, 4], |i| i as f32);
        assert_eq!(augment(&x, &AugmentPolicy::NONE, &mut stream(0, 0)).unwrap(), x);
    }

    #[test]
    fn forced_flip_is_involution() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 4, 5], |i| i as f32);
        let flip = AugmentPolicy {
            flip_prob: 1.0,
            crop_pad: 0,
        };
        let once = augment(&x, &flip, &mut stream(0, 0)).unwrap();
        assert_ne!(once, x);
        assert_eq!(&once.data()[0..5], &[4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(augment(&once, &flip, &mut stream(1, 0)).unwrap(), x);
    }

    #[test]
    fn crop_keeps_shape_and_pads_with_zero() {
        let x = Tensor::<f32>::ones(&[8, 1, 4, 4]);
        let p = AugmentPolicy {
            flip_prob: 0.0,
            crop_pad: 2,
        };
        let y = augment(&x, &p, &mut stream(3, 0)).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(y.data().contains(&0.0));
    }

    #[test]
    fn epoch_covers_every_index_once() {
        let mut order = epoch_order(100, &mut stream(2, 0));
        assert_ne!(order, (0..100).collect::<Vec<_>>());
        order.sort_unstable();
        assert_eq!(order, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn batch_is_normalized() {
        let ds = make_synthetic(3, 30, 8, 1).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let (x, labels) = ds.batch::<f64, rand_chacha::ChaCha8Rng>(&idx, None).unwrap();
        assert_eq!(labels.len(), 90);
        let (n, c, h, w) = x.nchw("t").unwrap();
        for ch in 0..c {
            let mut s = 0.0;
            let mut sq = 0.0;
            for i in 0..n {
                let plane = &x.sample(i)[ch * h * w..(ch + 1) * h * w];
                s += plane.iter().sum::<f64>();
                sq += plane.iter().map(|v| v * v).sum::<f64>();
            }
            let m = s / (n * h * w) as f64;
            assert!(m.abs() < 1e-9);
            assert!((sq / (n * h * w) as f64 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_floats_rejected() {
        assert!(Dataset::from_unit_floats(&[0.5, 1.2, 0.0], vec![0], (3, 1, 1), 2, Split::Train).is_err());
        assert!(Dataset::from_unit_floats(&[0.5, 1.0, 0.0], vec![0], (3, 1, 1), 2, Split::Train).is_ok());
    }

    #[test]
    fn cifar_record_decoding() {
        let mut bytes = vec![3u8];
        bytes.extend((0..3072).map(|i| (i % 251) as u8));
        bytes.push(9);
        bytes.extend(vec![0u8; 3072]);
        let (px, labels) = parse_cifar_records(&bytes, CifarVariant::Cifar10, 0).unwrap();
        assert_eq!(labels, vec![3, 9]);
        assert_eq!(px[1000], (1000 % 251) as u8);
        let err = parse_cifar_records(&bytes[..5000], CifarVariant::Cifar10, 0).unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { offset: 3073, .. }), "{err:?}");
        let mut bad = bytes.clone();
        bad[3073] = 10;
        assert!(matches!(
            parse_cifar_records(&bad, CifarVariant::Cifar10, 100).unwrap_err(),
            Error::MalformedRecord { offset: 3173, .. }
        ));
    }
}

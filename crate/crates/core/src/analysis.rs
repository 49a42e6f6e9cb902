//! Mask statistics, class activation maps and reference-channel histograms.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::focus::{channel_mean_activations, select_reference_channel, FeatureStack, FocusMask};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::argmax_rows;

/// `(dropped_fraction, retained_fraction)` of a mask.
pub fn keeping_ratio<T: Scalar>(mask: &FocusMask<T>) -> (f64, f64) {
    split_fraction(mask.dropped(), mask.height * mask.width)
}

fn split_fraction(dropped: usize, total: usize) -> (f64, f64) {
    let d = dropped as f64 / total as f64;
    (d, (total - dropped) as f64 / total as f64)
}

/// Mean mask statistics over a set of per-sample masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepStats {
    /// Mean share of zero mask entries (the quantity plotted as keeping ratio).
    pub dropped_fraction: f64,
    pub retained_fraction: f64,
    pub masks: usize,
}

impl KeepStats {
    pub fn from_dropped(fractions: &[f64]) -> Option<Self> {
        let mut acc = KeepAccumulator::default();
        acc.extend(fractions);
        acc.finish()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KeepAccumulator {
    sum: f64,
    count: usize,
}

impl KeepAccumulator {
    pub fn push(&mut self, dropped_fraction: f64) {
        self.sum += dropped_fraction;
        self.count += 1;
    }

    pub fn extend(&mut self, fractions: &[f64]) {
        for &f in fractions {
            self.push(f);
        }
    }

    pub fn merge(&mut self, other: &KeepAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Option<KeepStats> {
        (self.count > 0).then(|| {
            let d = self.sum / self.count as f64;
            KeepStats {
                dropped_fraction: d,
                retained_fraction: 1.0 - d,
                masks: self.count,
            }
        })
    }
}

/// A class activation map at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub class: usize,
    pub height: usize,
    pub width: usize,
    /// Min-max normalized values in `[0, 1]`, row-major.
    pub values: Vec<f64>,
    /// Range of the upsampled map before normalization.
    pub raw_min: f64,
    pub raw_max: f64,
}

impl CamMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Min-max normalize `raw`; a zero range maps to all zeros.
    pub fn from_raw(class: usize, height: usize, width: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(invalid!("heatmap of {} values is not {height}x{width}", raw.len()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("heatmap has non-finite values"));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let values = if range > 0.0 {
            raw.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self {
            class,
            height,
            width,
            values,
            raw_min: lo,
            raw_max: hi,
        })
    }

    /// 8-bit gray levels, `round_half_even(v * 255)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize8(v)).collect()
    }
}

/// Map `[0, 1]` to `0..=255`, rounding halves to even.
pub fn quantize8(v: f64) -> u8 {
    round_half_even(v.clamp(0.0, 1.0) * 255.0) as u8
}

fn round_half_even(x: f64) -> f64 {
    let r = Float::round(x);
    if (x - Float::trunc(x)).abs() == 0.5 {
        2.0 * Float::round(x / 2.0)
    } else {
        r
    }
}

/// Bilinear resize with half-pixel centers; source coordinates are clamped
/// to the grid.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |dst: usize, inn: usize, out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * inn as f64 / out as f64 - 0.5).clamp(0.0, (inn - 1) as f64);
        let i0 = Float::floor(s) as usize;
        let i1 = (i0 + 1).min(inn - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Classifier-weighted sum of `(C, h, w)` feature maps, upsampled to
/// `out_h x out_w` and normalized.
pub fn cam_from_features<T: Scalar>(
    features: &FeatureStack<'_, T>,
    class_weights: &[T],
    class: usize,
    (out_h, out_w): (usize, usize),
) -> Result<CamMap> {
    let (c, h, w) = (features.channels(), features.height(), features.width());
    if class_weights.len() != c {
        return Err(invalid!("{} class weights for {c} feature channels", class_weights.len()));
    }
    let mut raw = vec![0.0f64; h * w];
    for (ch, &wt) in class_weights.iter().enumerate() {
        let wt = wt.as_f64();
        for (r, &f) in raw.iter_mut().zip(features.channel(ch)) {
            *r += wt * f.as_f64();
        }
    }
    let up = upsample_bilinear(&raw, h, w, out_h, out_w);
    CamMap::from_raw(class, out_h, out_w, &up)
}

/// Class activation map of `image` (`(C, H, W)` or `(1, C, H, W)`, already
/// normalized) for `class`. Requires a global-average-pooling linear head.
pub fn cam<T: Scalar>(model: &Model<T>, image: &Tensor<T>, class: usize) -> Result<CamMap> {
    let (weight, _) = model
        .gap_linear_head()
        .ok_or_else(|| invalid!("{} has no global-average-pooling linear head", model.spec().architecture))?;
    let k = weight.shape()[0];
    if class >= k {
        return Err(invalid!("class {class} out of range for {k} classes"));
    }
    let image = match image.rank() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.clone().reshape(&s)?
        }
        _ => image.clone(),
    };
    let (n, _, h, w) = image.nchw("cam")?;
    if n != 1 {
        return Err(invalid!("cam takes a single image, got a batch of {n}"));
    }
    let mut tape = Tape::new();
    let out = model.forward_inference(&mut tape, &image)?;
    let feats = tape.value(out.features);
    let stack = FeatureStack::from_batch(feats, 0)?;
    let c = stack.channels();
    cam_from_features(&stack, &weight.data()[class * c..(class + 1) * c], class, (h, w))
}

/// Per class, how often each final-feature channel had the highest mean
/// activation among correctly classified images.
#[derive(Debug, Clone, PartialEq)]
pub struct RefChannelHistogram {
    pub channels: usize,
    /// `counts[class][channel]`.
    pub counts: Vec<Vec<u64>>,
    pub correct_per_class: Vec<u64>,
}

impl RefChannelHistogram {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total_correct(&self) -> u64 {
        self.correct_per_class.iter().sum()
    }

    /// Share of the most frequent channel among a class's correct images.
    pub fn top1_share(&self, class: usize) -> Option<f64> {
        let total = self.correct_per_class[class];
        (total > 0).then(|| *self.counts[class].iter().max().expect("channels > 0") as f64 / total as f64)
    }
}

/// Build the histogram over `data` in inference mode.
pub fn reference_channel_histogram<T: Scalar>(
    model: &Model<T>,
    data: &Dataset,
    batch_size: usize,
) -> Result<RefChannelHistogram> {
    if batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let classes = data.num_classes();
    let mut counts: Vec<Vec<u64>> = vec![Vec::new(); classes];
    let mut correct_per_class = vec![0u64; classes];
    let mut channels = 0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for idx in indices.chunks(batch_size) {
        let (x, labels) = data.batch::<T, rand_chacha::ChaCha8Rng>(idx, None)?;
        let mut tape = Tape::new();
        let out = model.forward_inference(&mut tape, &x)?;
        let preds = argmax_rows(tape.value(out.logits));
        let feats = tape.value(out.features);
        for (i, (&p, &l)) in preds.iter().zip(&labels).enumerate() {
            if p != l {
                continue;
            }
            let stack = FeatureStack::from_batch(feats, i)?;
            if channels == 0 {
                channels = stack.channels();
                counts = vec![vec![0; channels]; classes];
            }
            let k = select_reference_channel(&channel_mean_activations(&stack));
            counts[l][k] += 1;
            correct_per_class[l] += 1;
        }
    }
    if channels == 0 {
        channels = *model.spec().stage_widths.last().expect("stages");
        counts = vec![vec![0; channels]; classes];
    }
    Ok(RefChannelHistogram {
        channels,
        counts,
        correct_per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::focus::build_focus_mask;

    #[test]
    fn two_by_two_mask_ratio() {
        // Reference channel [[0,0],[1,1]] with threshold below 1 keeps the bottom row.
        let v = [0.0, 0.0, 1.0, 1.0];
        let stack = FeatureStack::new(&v, 1, 2, 2).unwrap();
        let m = build_focus_mask(&stack, 0.5);
        assert_eq!(keeping_ratio(&m), (0.5, 0.5));
    }

    #[test]
    fn epoch_mean() {
        let k = KeepStats::from_dropped(&[0.5, 0.25, 0.75]).unwrap();
        assert_eq!(k.dropped_fraction, 0.5);
        assert_eq!(k.retained_fraction, 0.5);
        assert!(KeepStats::from_dropped(&[]).is_none());
    }

    #[test]
    fn rounding_rule() {
        let m = CamMap::from_raw(0, 2, 2, &[0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(m.to_gray8(), vec![0, 255, 128, 64]);
        let flat = CamMap::from_raw(0, 2, 2, &[3.0; 4]).unwrap();
        assert_eq!(flat.to_gray8(), vec![0; 4]);
    }

    #[test]
    fn upsample_identity_and_constant() {
        let src = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(upsample_bilinear(&src, 2, 2, 2, 2), src.to_vec());
        assert!(upsample_bilinear(&[5.0; 4], 2, 2, 7, 3).iter().all(|&v| v == 5.0));
        // Half-pixel centers: 2 -> 4 gives weights 0.25/0.75 inside, clamped at edges.
        assert_eq!(upsample_bilinear(&[0.0, 4.0], 1, 2, 1, 4), vec![0.0, 1.0, 3.0, 4.0]);
    }
}

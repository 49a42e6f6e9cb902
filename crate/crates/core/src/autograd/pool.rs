use alloc::vec;

use super::{Op, Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Max pooling without padding; output size is `floor((H - k) / s) + 1`.
    /// Ties go to the first position in row-major order.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("max_pool2d")?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return Err(crate::error::invalid!(
                "max_pool2d: window {kernel} stride {stride} does not fit {h}x{w}"
            ));
        }
        let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let j = base + (oy * stride + ky) * w + ox * stride + kx;
                            if x.data()[j] > x.data()[best] {
                                best = j;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = x.data()[best];
                    argmax[o] = best;
                }
            }
        }
        let out = Tensor::new(&[n, c, oh, ow], out)?;
        self.push(out, Op::MaxPool { input, argmax }, &[input], "max_pool2d")
    }

    /// `(N, C, H, W) → (N, C)`: the per-channel spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("global_avg_pool")?;
        let area = T::cast((h * w) as f64);
        let data = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / area)
            .collect();
        let out = Tensor::new(&[n, c], data)?;
        self.push(out, Op::GlobalAvgPool(input), &[input], "global_avg_pool")
    }

    /// Parameter-free residual shortcut: spatial subsampling by `stride`
    /// followed by zero channel padding up to `out_channels`, split evenly
    /// before and after the existing channels.
    pub fn shortcut(&mut self, input: Var, stride: usize, out_channels: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("shortcut")?;
        if out_channels < c || stride == 0 {
            return Err(crate::error::invalid!(
                "shortcut: cannot map {c} channels to {out_channels} with stride {stride}"
            ));
        }
        let pad_before = (out_channels - c) / 2;
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let mut out = Tensor::zeros(&[n, out_channels, oh, ow]);
        for i in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let src = ((i * c + ch) * h + oy * stride) * w + ox * stride;
                        let dst = ((i * out_channels + ch + pad_before) * oh + oy) * ow + ox;
                        out.data_mut()[dst] = x.data()[src];
                    }
                }
            }
        }
        self.push(
            out,
            Op::Shortcut {
                input,
                stride,
                pad_before,
            },
            &[input],
            "shortcut",
        )
    }
}

pub(super) fn gap_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = x.nchw("global_avg_pool").expect("checked in forward");
    let area = T::cast((h * w) as f64);
    let mut gx = Tensor::zeros(x.shape());
    for (plane, &g) in gx.data_mut().chunks_mut(h * w).zip(grad.data()) {
        plane.fill(g / area);
    }
    gx
}

pub(super) fn shortcut_backward<T: Scalar>(
    x: &Tensor<T>,
    out: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    pad_before: usize,
) -> Tensor<T> {
    let (n, c, h, w) = x.nchw("shortcut").expect("checked in forward");
    let (_, oc, oh, ow) = out.nchw("shortcut").expect("checked in forward");
    let mut gx = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = ((i * c + ch) * h + oy * stride) * w + ox * stride;
                    let dst = ((i * oc + ch + pad_before) * oh + oy) * ow + ox;
                    gx.data_mut()[src] += grad.data()[dst];
                }
            }
        }
    }
    gx
}

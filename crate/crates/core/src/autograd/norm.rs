use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running statistics of one batch-norm layer.
///
/// Starts at zero mean / unit variance, so inference before any training
/// step is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::cast(0.1),
            eps: T::cast(1e-5),
        }
    }

    pub fn with_momentum(mut self, momentum: T) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

impl<T: Scalar> Tape<T> {
    /// Per-channel normalization of an NCHW tensor. With `batch_stats` the
    /// current batch's statistics are used and folded into `state`;
    /// otherwise the running statistics are applied as a fixed affine map.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("batch_norm2d")?;
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.value(v).shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: if what == "gamma" { "batch_norm2d gamma" } else { "batch_norm2d beta" },
                    left: x.shape().to_vec(),
                    right: self.value(v).shape().to_vec(),
                });
            }
        }
        if state.channels() != c {
            return Err(crate::error::invalid!(
                "batch_norm2d: state tracks {} channels, input has {c}",
                state.channels()
            ));
        }
        let plane = h * w;
        let count = n * plane;
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        if batch_stats {
            let m = T::cast(count as f64);
            for ch in 0..c {
                let mut sum = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * plane;
                    sum += x.data()[off..off + plane].iter().copied().sum::<T>();
                }
                let mean = sum / m;
                let mut sq = T::zero();
                for i in 0..n {
                    let off = (i * c + ch) * plane;
                    for &v in &x.data()[off..off + plane] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / m;
                means[ch] = mean;
                inv_std[ch] = T::one() / (var + state.eps).sqrt();
                let unbiased = if count > 1 { sq / T::cast((count - 1) as f64) } else { var };
                let mo = state.momentum;
                state.running_mean[ch] = (T::one() - mo) * state.running_mean[ch] + mo * mean;
                state.running_var[ch] = (T::one() - mo) * state.running_var[ch] + mo * unbiased;
            }
        } else {
            for ch in 0..c {
                means[ch] = state.running_mean[ch];
                inv_std[ch] = T::one() / (state.running_var[ch] + state.eps).sqrt();
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                for j in off..off + plane {
                    let xh = (x.data()[j] - means[ch]) * inv_std[ch];
                    xhat[j] = xh;
                    out[j] = g[ch] * xh + b[ch];
                }
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[input, gamma, beta],
            "batch_norm2d",
        )
    }
}

pub(super) fn batch_norm_backward<T: Scalar>(
    gamma: &Tensor<T>,
    grad: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = grad.nchw("batch_norm2d").expect("rank checked in forward");
    let plane = h * w;
    let m = T::cast((n * plane) as f64);
    let dy = grad.data();
    let mut gx = Tensor::zeros(grad.shape());
    let mut gg = Tensor::zeros(&[c]);
    let mut gb = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                sum_dy += dy[j];
                sum_dy_xhat += dy[j] * xhat[j];
            }
        }
        gg.data_mut()[ch] = sum_dy_xhat;
        gb.data_mut()[ch] = sum_dy;
        let scale = gamma.data()[ch] * inv_std[ch];
        for i in 0..n {
            let off = (i * c + ch) * plane;
            for j in off..off + plane {
                gx.data_mut()[j] = if batch_stats {
                    scale * (dy[j] - sum_dy / m - xhat[j] * sum_dy_xhat / m)
                } else {
                    scale * dy[j]
                };
            }
        }
    }
    (gx, gg, gb)
}

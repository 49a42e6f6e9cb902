//! 2-D cross-correlation via im2col.
//!
//! Column buffers are rebuilt per sample in the backward pass instead of
//! being kept on the tape; for 32×32 ResNets the saved columns would
//! dominate memory.

use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (c, h, w) = match *input {
            [_, c, h, w] => (c, h, w),
            _ => {
                return Err(Error::BadShape {
                    op: "conv2d",
                    shape: input.to_vec(),
                    expected: "rank 4 input (N, C, H, W)",
                })
            }
        };
        let (o, kc, k) = match *kernel {
            [o, kc, kh, kw] if kh == kw => (o, kc, kh),
            _ => {
                return Err(Error::BadShape {
                    op: "conv2d",
                    shape: kernel.to_vec(),
                    expected: "square kernel (O, I, K, K)",
                })
            }
        };
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: input.to_vec(),
                right: kernel.to_vec(),
            });
        }
        if stride == 0 {
            return Err(crate::error::invalid!("conv2d: stride must be positive"));
        }
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if ph < k || pw < k {
            return Err(crate::error::invalid!(
                "conv2d: non-positive output size for input {input:?}, kernel {k}, padding {padding}"
            ));
        }
        Ok(Self {
            in_channels: c,
            in_h: h,
            in_w: w,
            out_channels: o,
            kernel: k,
            stride,
            padding,
            out_h: (ph - k) / stride + 1,
            out_w: (pw - k) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ncols = self.col_cols();
        for c in 0..self.in_channels {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kx) as isize - p;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w
                            {
                                plane[iy as usize * self.in_w + ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let ncols = self.col_cols();
        for c in 0..self.in_channels {
            let plane = &mut dx[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix as usize >= self.in_w {
                                continue;
                            }
                            plane[iy as usize * self.in_w + ix as usize] += src[oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of an NCHW `input` with an OIKK `kernel`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(kernel);
        let geom = Conv2dGeometry::new(x.shape(), wt.shape(), stride, padding)?;
        let n = x.shape()[0];
        let (rows, ncols) = (geom.col_rows(), geom.col_cols());
        let in_stride = geom.in_channels * geom.in_h * geom.in_w;
        let out_stride = geom.out_channels * ncols;
        let mut out = vec![T::zero(); n * out_stride];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [geom.out_channels] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: bv.shape().to_vec(),
                    right: vec![geom.out_channels],
                });
            }
            for sample in out.chunks_mut(out_stride) {
                for (plane, &bo) in sample.chunks_mut(ncols).zip(bv.data()) {
                    plane.fill(bo);
                }
            }
        }
        let mut cols = vec![T::zero(); rows * ncols];
        for i in 0..n {
            geom.im2col(&x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
            gemm(
                geom.out_channels,
                ncols,
                rows,
                wt.data(),
                false,
                &cols,
                false,
                &mut out[i * out_stride..(i + 1) * out_stride],
            );
        }
        let out = Tensor::new(&[n, geom.out_channels, geom.out_h, geom.out_w], out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
            "conv2d",
        )
    }
}

pub(super) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(super) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    grad: &Tensor<T>,
    geom: &Conv2dGeometry,
    want_input: bool,
) -> ConvGrads<T> {
    let n = x.shape()[0];
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let in_stride = geom.in_channels * geom.in_h * geom.in_w;
    let out_stride = geom.out_channels * ncols;
    let mut gk = Tensor::zeros(wt.shape());
    let mut gb = Tensor::zeros(&[geom.out_channels]);
    let mut gx = want_input.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); rows * ncols];
    let mut dcols: Vec<T> = if want_input { vec![T::zero(); rows * ncols] } else { Vec::new() };
    for i in 0..n {
        let dy = &grad.data()[i * out_stride..(i + 1) * out_stride];
        for (acc, plane) in gb.data_mut().iter_mut().zip(dy.chunks(ncols)) {
            *acc += plane.iter().copied().sum::<T>();
        }
        geom.im2col(&x.data()[i * in_stride..(i + 1) * in_stride], &mut cols);
        gemm(geom.out_channels, rows, ncols, dy, false, &cols, true, gk.data_mut());
        if let Some(gx) = gx.as_mut() {
            dcols.fill(T::zero());
            gemm(rows, ncols, geom.out_channels, wt.data(), true, dy, false, &mut dcols);
            geom.col2im(&dcols, &mut gx.data_mut()[i * in_stride..(i + 1) * in_stride]);
        }
    }
    ConvGrads {
        input: gx,
        kernel: gk,
        bias: gb,
    }
}

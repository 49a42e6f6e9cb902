use alloc::vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_zip, gemm, reduce_broadcast, Tensor};

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_zip(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Elementwise product under broadcasting; multiplying by a constant
    /// `{0, 1}` mask also zeroes the gradient at masked positions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = broadcast_zip(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: sa.to_vec(),
                    right: sb.to_vec(),
                })
            }
        };
        let mut out = vec![T::zero(); m * n];
        gemm(m, n, k, self.value(a).data(), false, self.value(b).data(), false, &mut out);
        let out = Tensor::new(&[m, n], out)?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / T::cast(v.len() as f64));
        self.push(out, Op::Mean(a), &[a], "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    /// `input (N, in) · weightᵀ (out, in) + bias (out)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (si, sw) = (self.value(input).shape(), self.value(weight).shape());
        let (n, fin, fout) = match (si, sw) {
            ([n, fin], [fout, fin2]) if fin == fin2 => (*n, *fin, *fout),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    left: si.to_vec(),
                    right: sw.to_vec(),
                })
            }
        };
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    left: bv.shape().to_vec(),
                    right: vec![fout],
                });
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            n,
            fout,
            fin,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
        );
        let out = Tensor::new(&[n, fout], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(out, Op::Linear { input, weight, bias }, &inputs, "linear")
    }
}

pub(super) fn add_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, grad: &Tensor<T>) -> [Tensor<T>; 2] {
    [reduce_broadcast(grad, a.shape()), reduce_broadcast(grad, b.shape())]
}

#[allow(clippy::type_complexity)]
pub(super) fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
    want_a: bool,
    want_b: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let ga = if want_a {
        Some(reduce_broadcast(&broadcast_zip(grad, b, "mul", |g, y| g * y)?, a.shape()))
    } else {
        None
    };
    let gb = if want_b {
        Some(reduce_broadcast(&broadcast_zip(grad, a, "mul", |g, x| g * x)?, b.shape()))
    } else {
        None
    };
    Ok((ga, gb))
}

pub(super) fn relu_backward<T: Scalar>(x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub(super) fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut ga = Tensor::zeros(a.shape());
    gemm(m, k, n, grad.data(), false, b.data(), true, ga.data_mut());
    let mut gb = Tensor::zeros(b.shape());
    gemm(k, n, m, a.data(), true, grad.data(), false, gb.data_mut());
    (ga, gb)
}

pub(super) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let mut gx = Tensor::zeros(x.shape());
    gemm(n, fin, fout, grad.data(), false, w.data(), false, gx.data_mut());
    let mut gw = Tensor::zeros(w.shape());
    gemm(fout, fin, n, grad.data(), true, x.data(), false, gw.data_mut());
    let mut gb = Tensor::zeros(&[fout]);
    for row in grad.data().chunks(fout) {
        for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    (gx, gw, gb)
}

use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax computed with the max-shift for stability.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

impl<T: Scalar> Tape<T> {
    /// Mean softmax cross-entropy of `(N, K)` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (n, k) = match *x.shape() {
            [n, k] => (n, k),
            _ => {
                return Err(Error::BadShape {
                    op: "softmax_cross_entropy",
                    shape: x.shape().to_vec(),
                    expected: "rank 2 (N, classes)",
                })
            }
        };
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy labels",
                left: x.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(crate::error::invalid!(
                "softmax_cross_entropy: label {bad} out of range for {k} classes"
            ));
        }
        let probs = softmax_rows(x.data(), k);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let row = &x.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - row[l];
        }
        let out = Tensor::scalar(loss / T::cast(n as f64));
        self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
            "softmax_cross_entropy",
        )
    }
}

pub(super) fn softmax_ce_backward<T: Scalar>(shape: &[usize], probs: &[T], labels: &[usize], g: T) -> Tensor<T> {
    let (n, k) = (shape[0], shape[1]);
    let scale = g / T::cast(n as f64);
    let mut out = probs.to_vec();
    for (i, &l) in labels.iter().enumerate() {
        out[i * k + l] -= T::one();
    }
    for v in &mut out {
        *v *= scale;
    }
    Tensor::new(shape, out).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        let l = tape.softmax_cross_entropy(x, &[0, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(tape.softmax_cross_entropy(x, &[3]).is_err());
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::new(&[1, 2], vec![1000.0, -1000.0]).unwrap());
        let l = tape.softmax_cross_entropy(x, &[1]).unwrap();
        assert!((tape.value(l).data()[0] - 2000.0).abs() < 1e-2);
        tape.backward(l).unwrap();
        assert!(tape.grad(x).unwrap().is_finite());
    }
}

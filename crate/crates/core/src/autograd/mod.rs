//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! are appended in execution order and [`Tape::backward`] walks them in exact
//! reverse order, accumulating gradients additively into each input.
//!
//! The tape is single-owner: it is `Send` and may move between workers, but
//! is never shared mutably.

mod conv;
mod elementwise;
mod loss;
mod norm;
mod pool;

use alloc::vec::Vec;

pub use conv::Conv2dGeometry;
pub use norm::BatchNormState;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: Conv2dGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    Shortcut {
        input: Var,
        stride: usize,
        pad_before: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input. Only leaves with `requires_grad` collect gradients
    /// that callers care about; intermediate nodes get them as a by-product.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Backpropagate from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::BadShape {
                op: "backward",
                shape: seed_shape,
                expected: "a single-element loss",
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(&seed_shape));

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.as_ref() else {
                continue;
            };
            let contributions = backward_op(before, &node.op, &node.value, grad)?;
            for (var, g) in contributions {
                let target = &mut before[var.0];
                if !target.requires_grad {
                    continue;
                }
                match target.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => target.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

/// Gradient contributions of one node to its inputs.
fn backward_op<T: Scalar>(
    nodes: &[Node<T>],
    op: &Op<T>,
    out: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<Vec<(Var, Tensor<T>)>> {
    let val = |v: &Var| &nodes[v.0].value;
    let wants = |v: &Var| nodes[v.0].requires_grad;
    Ok(match op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => elementwise::add_backward(val(a), val(b), grad)
            .into_iter()
            .zip([*a, *b])
            .map(|(g, v)| (v, g))
            .collect(),
        Op::Mul(a, b) => {
            let (ga, gb) = elementwise::mul_backward(val(a), val(b), grad, wants(a), wants(b))?;
            let mut out = Vec::new();
            if let Some(g) = ga {
                out.push((*a, g));
            }
            if let Some(g) = gb {
                out.push((*b, g));
            }
            out
        }
        Op::Scale(a, s) => alloc::vec![(*a, grad.map(|g| g * *s))],
        Op::Relu(a) => alloc::vec![(*a, elementwise::relu_backward(val(a), grad))],
        Op::MatMul(a, b) => {
            let (ga, gb) = elementwise::matmul_backward(val(a), val(b), grad);
            alloc::vec![(*a, ga), (*b, gb)]
        }
        Op::Sum(a) => alloc::vec![(*a, Tensor::full(val(a).shape(), grad.data()[0]))],
        Op::Mean(a) => {
            let n = T::cast(val(a).len() as f64);
            alloc::vec![(*a, Tensor::full(val(a).shape(), grad.data()[0] / n))]
        }
        Op::Reshape(a) => alloc::vec![(*a, grad.clone().reshape(val(a).shape())?)],
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
        } => {
            let g = conv::conv2d_backward(val(input), val(kernel), grad, geom, wants(input));
            let mut out = alloc::vec![(*kernel, g.kernel)];
            if let Some(gi) = g.input {
                out.push((*input, gi));
            }
            if let Some(b) = bias {
                out.push((*b, g.bias));
            }
            out
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let g = norm::batch_norm_backward(val(gamma), grad, xhat, inv_std, *batch_stats);
            alloc::vec![(*input, g.0), (*gamma, g.1), (*beta, g.2)]
        }
        Op::MaxPool { input, argmax } => {
            let mut gi = Tensor::zeros_like(val(input));
            for (&src, &g) in argmax.iter().zip(grad.data()) {
                gi.data_mut()[src] += g;
            }
            alloc::vec![(*input, gi)]
        }
        Op::GlobalAvgPool(a) => alloc::vec![(*a, pool::gap_backward(val(a), grad))],
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (gi, gw, gb) = elementwise::linear_backward(val(input), val(weight), grad);
            let mut out = alloc::vec![(*input, gi), (*weight, gw)];
            if let Some(b) = bias {
                out.push((*b, gb));
            }
            out
        }
        Op::SoftmaxCrossEntropy {
            logits,
            probs,
            labels,
        } => alloc::vec![(
            *logits,
            loss::softmax_ce_backward(val(logits).shape(), probs, labels, grad.data()[0])
        )],
        Op::Shortcut {
            input,
            stride,
            pad_before,
        } => alloc::vec![(
            *input,
            pool::shortcut_backward(val(input), out, grad, *stride, *pad_before)
        )],
    })
}

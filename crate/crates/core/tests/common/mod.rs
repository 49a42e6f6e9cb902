#![allow(dead_code)]

use focusdrop_core::{Result, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
/// Relative error denominator floor, so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU kinks are never within the FD step.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Distinct values at least 0.01 apart, so max-pool winners never swap.
pub fn distinct(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(v.as_mut_slice(), rng);
    Tensor::new(shape, v).unwrap()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `sum(f(inputs) * r)` for a fixed random `r`.
pub fn grad_check(
    inputs: &[Tensor<f64>],
    seed: u64,
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let weights = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars).unwrap();
        let shape = t.value(out).shape().to_vec();
        randn(&mut rng(seed), &shape)
    };
    let loss_of = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars).unwrap();
        let w = t.constant(weights.clone());
        let p = t.mul(out, w).unwrap();
        let s = t.sum(p).unwrap();
        t.value(s).data()[0]
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = f(&mut t, &vars).unwrap();
    let w = t.constant(weights.clone());
    let p = t.mul(out, w).unwrap();
    let s = t.sum(p).unwrap();
    t.backward(s).unwrap();

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = t.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros_like(&inputs[k]));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_EPS;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * FD_EPS);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

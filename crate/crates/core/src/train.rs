//! Training loop: SGD with momentum, step learning-rate schedule, and
//! per-batch regularizer participation with magnified weight decay.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::analysis::{KeepAccumulator, KeepStats};
use crate::autograd::Tape;
use crate::data::{epoch_order, AugmentPolicy, Dataset};
use crate::error::{invalid, Error, Result};
use crate::nn::{Model, Param, Pass};
use crate::regularize::{RegularizerKind, RegularizerSpec};
use crate::rng::{ids, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How active batches are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Sampling {
    /// Each batch independently active with probability `rate`.
    #[default]
    Bernoulli,
    /// Exactly `round(rate * n)` active batches per epoch, uniformly placed.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Active batches apply the regularizer and the magnified weight decay.
    #[default]
    Standard,
    /// Active batches only switch to the magnified weight decay.
    RandomlyMwd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Seeds {
    /// Epoch order and augmentation.
    pub data: u64,
    /// Parameter initialization.
    pub init: u64,
    /// Batch plan and regularizer masks.
    pub regularizer: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            init: 1,
            regularizer: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub base_weight_decay: f64,
    /// Epoch indices (0-based) at which the learning rate is multiplied by `lr_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub regularizer: RegularizerSpec,
    pub participation_rate: f64,
    /// Weight decay used on regularizer-active batches.
    pub mwd_weight_decay: f64,
    pub sampling: Sampling,
    pub variant: Variant,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            eval_batch_size: 256,
            base_lr: 0.1,
            momentum: 0.9,
            base_weight_decay: 5e-4,
            lr_milestones: Vec::new(),
            lr_factor: 0.1,
            regularizer: RegularizerSpec::default(),
            participation_rate: 0.1,
            mwd_weight_decay: 1e-3,
            sampling: Sampling::Bernoulli,
            variant: Variant::Standard,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(invalid!("epochs and batch sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.participation_rate) {
            return Err(invalid!("participation_rate {} outside [0, 1]", self.participation_rate));
        }
        if !(self.base_weight_decay >= 0.0) || !(self.mwd_weight_decay >= self.base_weight_decay) {
            return Err(invalid!(
                "weight decays must satisfy 0 <= base ({}) <= mwd ({})",
                self.base_weight_decay,
                self.mwd_weight_decay
            ));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(invalid!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return Err(invalid!("lr_factor must be positive, got {}", self.lr_factor));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("lr_milestones {:?} must be strictly increasing", self.lr_milestones));
        }
        self.regularizer.kind.validate()
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule {
            base: self.base_lr,
            milestones: self.lr_milestones.clone(),
            factor: self.lr_factor,
        }
    }
}

/// The weight-decay-only ablation of `config`: same batch selection, no mask.
pub fn randomly_mwd_mode(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        variant: Variant::RandomlyMwd,
        ..config.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub active: Vec<bool>,
    pub weight_decay: Vec<f64>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Decide which of `num_batches` batches are regularizer-active.
pub fn plan_batches<R: Rng + ?Sized>(
    num_batches: usize,
    rate: f64,
    sampling: Sampling,
    (base_wd, mwd): (f64, f64),
    rng: &mut R,
) -> Result<BatchPlan> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid!("participation rate {rate} outside [0, 1]"));
    }
    let active = match sampling {
        Sampling::Bernoulli => (0..num_batches).map(|_| rng.random::<f64>() < rate).collect(),
        Sampling::Exact => {
            let k = num_traits::Float::round(rate * num_batches as f64) as usize;
            let mut active = vec![false; num_batches];
            for i in sample(rng, num_batches, k.min(num_batches)) {
                active[i] = true;
            }
            active
        }
    };
    let weight_decay = active.iter().map(|&a| if a { mwd } else { base_wd }).collect();
    Ok(BatchPlan { active, weight_decay })
}

/// Piecewise-constant learning rate: `base * factor^(milestones <= epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl StepSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        let mut lr = self.base;
        for _ in 0..passed {
            lr *= self.factor;
        }
        lr
    }
}

/// SGD with momentum; the L2 term is added to the gradient before the
/// momentum update.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum: T::cast(momentum),
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// `v <- m*v + g + wd*p; p <- p - lr*v` for every parameter.
    pub fn step(&mut self, params: &mut [Param<T>], grads: &[Tensor<T>], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(invalid!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { param: p.name.clone() });
            }
        }
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        }
        let (lr, wd) = (T::cast(lr), T::cast(weight_decay));
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

/// One optimizer step, as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step index across epochs.
    pub step: usize,
    pub active: bool,
    /// Whether a regularizer mask was applied (false under the randomly-MWD variant).
    pub masked: bool,
    pub weight_decay: f64,
    pub lr: f64,
    pub loss: f64,
    pub batch_size: usize,
    /// Mean dropped fraction over the masks of this step.
    pub dropped_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub active_batches: usize,
    pub total_batches: usize,
    /// Mask statistics over the epoch; `None` when no mask was applied.
    pub keep: Option<KeepStats>,
}

/// Receives progress from [`train`]; errors abort training.
pub trait TrainObserver<T: Scalar> {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord, _model: &Model<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_test_acc: f64,
    pub best_epoch: usize,
}

/// Train `model` in place and evaluate on `test` after every epoch.
///
/// Data order, augmentation, batch plan and regularizer masks each draw from
/// their own stream, so inactive batches see exactly the computation of an
/// unregularized run.
pub fn train<T: Scalar, O: TrainObserver<T> + ?Sized>(
    model: &mut Model<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    augment: &AugmentPolicy,
    observer: &mut O,
) -> Result<TrainSummary> {
    config.validate()?;
    augment.validate()?;
    if train_set.is_empty() {
        return Err(invalid!("empty training set"));
    }
    model.set_regularizer(&config.regularizer)?;
    let has_reg = config.regularizer.kind != RegularizerKind::None;
    // With no regularizer and the standard variant, no batch is active.
    let rate = if has_reg || config.variant == Variant::RandomlyMwd {
        config.participation_rate
    } else {
        0.0
    };
    let masking = has_reg && config.variant == Variant::Standard;

    let mut order_rng = stream(config.seeds.data, ids::DATA_ORDER);
    let mut aug_rng = stream(config.seeds.data, ids::AUGMENT);
    let mut plan_rng = stream(config.seeds.regularizer, ids::BATCH_PLAN);
    let mut reg_rng = stream(config.seeds.regularizer, ids::REGULARIZER);
    let schedule = config.schedule();
    let mut sgd = Sgd::<T>::new(config.momentum);
    let num_batches = train_set.len().div_ceil(config.batch_size);

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch);
        let order = epoch_order(train_set.len(), &mut order_rng);
        let plan = plan_batches(
            num_batches,
            rate,
            config.sampling,
            (config.base_weight_decay, config.mwd_weight_decay),
            &mut plan_rng,
        )?;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut keep = KeepAccumulator::default();
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = train_set.batch::<T, _>(idx, Some((augment, &mut aug_rng)))?;
            let active = plan.active[b];
            let masked = active && masking;
            let mut tape = Tape::new();
            let pass = if masked {
                Pass::regularized(&mut reg_rng)
            } else {
                Pass::train()
            };
            let out = model.forward(&mut tape, &x, pass)?;
            let loss = tape.softmax_cross_entropy(out.logits, &labels)?;
            tape.backward(loss)?;
            let loss_value = tape.value(loss).data()[0].as_f64();
            correct += count_correct(tape.value(out.logits), &labels);
            let grads: Vec<Tensor<T>> = out
                .params
                .iter()
                .zip(model.params())
                .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros_like(&p.value)))
                .collect();
            drop(tape);
            let wd = plan.weight_decay[b];
            sgd.step(model.params_mut(), &grads, lr, wd)?;

            let mut step_keep = KeepAccumulator::default();
            for (_, m) in &out.masks {
                step_keep.extend(&m.dropped_fractions);
            }
            keep.merge(&step_keep);
            loss_sum += loss_value * idx.len() as f64;
            observer.on_step(&StepRecord {
                epoch,
                step,
                active,
                masked,
                weight_decay: wd,
                lr,
                loss: loss_value,
                batch_size: idx.len(),
                dropped_fraction: step_keep.finish().map(|k| k.dropped_fraction),
            })?;
            step += 1;
        }
        let test_acc = evaluate(model, test_set, config.eval_batch_size)?.accuracy;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            test_acc,
            active_batches: plan.active_count(),
            total_batches: num_batches,
            keep: keep.finish(),
        };
        observer.on_epoch(&record, model)?;
        epochs.push(record);
    }
    let (best_epoch, best_test_acc) = epochs
        .iter()
        .map(|e| (e.epoch, e.test_acc))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok(TrainSummary {
        epochs,
        best_test_acc,
        best_epoch,
    })
}

/// Index of the largest entry of each row; the first wins ties.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = *logits.shape().last().expect("rank >= 1");
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Inference-mode accuracy over the whole dataset, in storage order.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for idx in indices.chunks(batch_size) {
        let (x, _) = data.batch::<T, rand_chacha::ChaCha8Rng>(idx, None)?;
        predictions.extend(argmax_rows(&model.predict(&x)?));
    }
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(&p, &l)| p == l as usize)
        .count();
    let total = data.len();
    Ok(Evaluation {
        correct,
        total,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        predictions,
    })
}

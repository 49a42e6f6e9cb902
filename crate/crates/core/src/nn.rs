//! Small CNN families used to exercise the regularizers.
//!
//! * `tiny-cnn`: three conv-bn-relu stages (8/16/32 wide by default), pooled
//!   after the first stage and before the last, GAP + linear head. Trains on
//!   16×16 inputs in seconds.
//! * `resnet`: CIFAR-style ResNet, `depth = 6n + 2` for three stages
//!   (16/32/64 wide), parameter-free shortcuts (stride-2 subsampling plus
//!   zero channel padding). Depth 20 has 269,722 parameters.
//! * `vgg-small`: `depth` conv-bn-relu layers per stage, 2×2 max pool after
//!   each stage, flatten + linear head (no GAP, so CAM is unavailable).
//!
//! Stages are named `stage1..stageN`; `penultimate` resolves to the
//! second-to-last stage.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::autograd::{BatchNormState, Tape, Var};
use crate::error::{invalid, Error, Result};
pub use crate::focus::DropoutMode as Mode;
use crate::regularize::{DropMask, RegularizerKind, RegularizerSpec};
use crate::rng::{ids, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KNOWN_ARCHITECTURES: &[&str] = &["tiny-cnn", "resnet", "vgg-small"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    TinyCnn,
    ResNet,
    VggSmall,
}

impl Architecture {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tiny-cnn" => Ok(Self::TinyCnn),
            "resnet" => Ok(Self::ResNet),
            "vgg-small" => Ok(Self::VggSmall),
            _ => Err(Error::UnknownArchitecture {
                name: name.to_string(),
                known: KNOWN_ARCHITECTURES,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub architecture: String,
    pub stage_widths: Vec<usize>,
    /// ResNet: total depth `2·stages·n + 2`. VGG: conv layers per stage.
    /// Ignored by `tiny-cnn`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub depth: usize,
    pub num_classes: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_in_channels"))]
    pub in_channels: usize,
    /// Input side length; only the VGG flatten head depends on it.
    #[cfg_attr(feature = "serde", serde(default = "default_input_size"))]
    pub input_size: usize,
}

#[cfg(feature = "serde")]
fn default_in_channels() -> usize {
    3
}

#[cfg(feature = "serde")]
fn default_input_size() -> usize {
    32
}

impl ModelSpec {
    pub fn tiny_cnn(num_classes: usize) -> Self {
        Self {
            architecture: "tiny-cnn".into(),
            stage_widths: vec![8, 16, 32],
            depth: 0,
            num_classes,
            in_channels: 3,
            input_size: 16,
        }
    }

    pub fn resnet(depth: usize, num_classes: usize) -> Self {
        Self {
            architecture: "resnet".into(),
            stage_widths: vec![16, 32, 64],
            depth,
            num_classes,
            in_channels: 3,
            input_size: 32,
        }
    }

    pub fn vgg_small(num_classes: usize) -> Self {
        Self {
            architecture: "vgg-small".into(),
            stage_widths: vec![16, 32, 64],
            depth: 2,
            num_classes,
            in_channels: 3,
            input_size: 32,
        }
    }

    pub fn stage_names(&self) -> Vec<String> {
        (1..=self.stage_widths.len()).map(|i| format!("stage{i}")).collect()
    }

    /// Stage index (0-based) for a named insertion point.
    pub fn resolve_point(&self, name: &str) -> Result<usize> {
        let stages = self.stage_widths.len();
        let found = match name {
            "penultimate" if stages >= 2 => Some(stages - 2),
            _ => name
                .strip_prefix("stage")
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&k| k >= 1 && k <= stages)
                .map(|k| k - 1),
        };
        found.ok_or_else(|| {
            let mut available = self.stage_names();
            if stages >= 2 {
                available.push("penultimate".into());
            }
            Error::UnknownInsertionPoint {
                name: name.to_string(),
                available,
            }
        })
    }

    fn validate(&self) -> Result<Architecture> {
        let arch = Architecture::parse(&self.architecture)?;
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(invalid!("model: stage widths must be non-empty and positive"));
        }
        if self.num_classes < 2 || self.in_channels == 0 {
            return Err(invalid!("model: need at least 2 classes and 1 input channel"));
        }
        match arch {
            Architecture::ResNet => {
                let per = 2 * self.stage_widths.len();
                if self.depth < per + 2 || (self.depth - 2) % per != 0 {
                    return Err(invalid!(
                        "resnet: depth {} must be {per}·n + 2 for {} stages",
                        self.depth,
                        self.stage_widths.len()
                    ));
                }
                if self.stage_widths.windows(2).any(|w| w[1] < w[0]) {
                    return Err(invalid!("resnet: stage widths must be non-decreasing"));
                }
            }
            Architecture::VggSmall => {
                if self.depth == 0 {
                    return Err(invalid!("vgg-small: depth (convs per stage) must be positive"));
                }
                if self.input_size >> self.stage_widths.len() == 0 {
                    return Err(invalid!("vgg-small: input {} too small for {} pools", self.input_size, self.stage_widths.len()));
                }
            }
            Architecture::TinyCnn => {}
        }
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone)]
struct Block {
    first: ConvBn,
    second: ConvBn,
    stride: usize,
    out_channels: usize,
}

#[derive(Debug, Clone)]
enum Plan {
    Tiny(Vec<ConvBn>),
    ResNet { stem: ConvBn, stages: Vec<Vec<Block>> },
    Vgg(Vec<Vec<ConvBn>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    GapLinear,
    FlattenLinear,
}

/// Per-call options for [`Model::forward`].
pub struct Pass<'r> {
    pub mode: Mode,
    /// Whether the inserted regularizer fires on this batch (train mode only).
    pub regularizer_active: bool,
    pub rng: Option<&'r mut dyn RngCore>,
}

impl<'r> Pass<'r> {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            regularizer_active: false,
            rng: None,
        }
    }

    pub fn inference() -> Self {
        Self {
            mode: Mode::Inference,
            regularizer_active: false,
            rng: None,
        }
    }

    pub fn regularized(rng: &'r mut dyn RngCore) -> Self {
        Self {
            mode: Mode::Train,
            regularizer_active: true,
            rng: Some(rng),
        }
    }
}

#[derive(Debug)]
pub struct ForwardOutput<T> {
    pub logits: Var,
    /// Leaf variables, one per parameter, in [`Model::params`] order.
    pub params: Vec<Var>,
    /// Output of every stage, after any regularizer placed there.
    pub stages: Vec<Var>,
    /// Stage outputs before the regularizer (equal to `stages` elsewhere).
    pub stage_inputs: Vec<Var>,
    /// Final conv feature maps feeding the head.
    pub features: Var,
    pub masks: Vec<(usize, DropMask<T>)>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    params: Vec<Param<T>>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormState<T>>,
    plan: Plan,
    head: Head,
    fc: (usize, usize),
    regularizer: Option<(RegularizerKind, Vec<usize>)>,
}

struct Builder<'a, T: Scalar> {
    params: Vec<Param<T>>,
    bn_names: Vec<String>,
    bn: Vec<BatchNormState<T>>,
    rng: &'a mut dyn RngCore,
}

impl<T: Scalar> Builder<'_, T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> ConvBn {
        let fan_in = (cin * 9) as f64;
        let normal = Normal::new(0.0, num_traits::Float::sqrt(2.0 / fan_in)).expect("positive std");
        let w = Tensor::from_fn(&[cout, cin, 3, 3], |_| T::cast(normal.sample(&mut *self.rng)));
        let conv = self.push(format!("{name}.conv.weight"), w);
        let gamma = self.push(format!("{name}.bn.weight"), Tensor::ones(&[cout]));
        let beta = self.push(format!("{name}.bn.bias"), Tensor::zeros(&[cout]));
        self.bn_names.push(format!("{name}.bn"));
        self.bn.push(BatchNormState::new(cout));
        ConvBn {
            conv,
            gamma,
            beta,
            bn: self.bn.len() - 1,
            stride,
            pad: 1,
        }
    }

    fn linear(&mut self, fin: usize, fout: usize) -> (usize, usize) {
        let bound = 1.0 / num_traits::Float::sqrt(fin as f64);
        let w = Tensor::from_fn(&[fout, fin], |_| T::cast(self.rng.random_range(-bound..bound)));
        let b = Tensor::from_fn(&[fout], |_| T::cast(self.rng.random_range(-bound..bound)));
        (self.push("fc.weight".into(), w), self.push("fc.bias".into(), b))
    }
}

/// Construct and initialize a model; initialization draws from the `init`
/// stream of `seed`.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let arch = spec.validate()?;
    let mut rng = stream(seed, ids::INIT);
    let mut b = Builder {
        params: Vec::new(),
        bn_names: Vec::new(),
        bn: Vec::new(),
        rng: &mut rng,
    };
    let widths = &spec.stage_widths;
    let last = *widths.last().expect("validated non-empty");
    let (plan, head, fc) = match arch {
        Architecture::TinyCnn => {
            let mut cin = spec.in_channels;
            let mut stages = Vec::new();
            for (i, &w) in widths.iter().enumerate() {
                stages.push(b.conv_bn(&format!("stage{}", i + 1), cin, w, 1));
                cin = w;
            }
            let fc = b.linear(last, spec.num_classes);
            (Plan::Tiny(stages), Head::GapLinear, fc)
        }
        Architecture::ResNet => {
            let n = (spec.depth - 2) / (2 * widths.len());
            let stem = b.conv_bn("stem", spec.in_channels, widths[0], 1);
            let mut cin = widths[0];
            let mut stages = Vec::new();
            for (s, &w) in widths.iter().enumerate() {
                let mut blocks = Vec::new();
                for j in 0..n {
                    let stride = if s > 0 && j == 0 { 2 } else { 1 };
                    let name = format!("stage{}.block{j}", s + 1);
                    let first = b.conv_bn(&format!("{name}.1"), cin, w, stride);
                    let second = b.conv_bn(&format!("{name}.2"), w, w, 1);
                    blocks.push(Block {
                        first,
                        second,
                        stride,
                        out_channels: w,
                    });
                    cin = w;
                }
                stages.push(blocks);
            }
            let fc = b.linear(last, spec.num_classes);
            (Plan::ResNet { stem, stages }, Head::GapLinear, fc)
        }
        Architecture::VggSmall => {
            let mut cin = spec.in_channels;
            let mut stages = Vec::new();
            for (s, &w) in widths.iter().enumerate() {
                let convs = (0..spec.depth)
                    .map(|j| {
                        let c = b.conv_bn(&format!("stage{}.conv{j}", s + 1), cin, w, 1);
                        cin = w;
                        c
                    })
                    .collect();
                stages.push(convs);
            }
            let side = spec.input_size >> widths.len();
            let fc = b.linear(last * side * side, spec.num_classes);
            (Plan::Vgg(stages), Head::FlattenLinear, fc)
        }
    };
    Ok(Model {
        spec: spec.clone(),
        params: b.params,
        bn_names: b.bn_names,
        bn: b.bn,
        plan,
        head,
        fc,
        regularizer: None,
    })
}

/// Route the named stage outputs through `reg` whenever a pass marks the
/// regularizer active.
pub fn insert_regularizer<T: Scalar>(mut model: Model<T>, reg: &RegularizerSpec) -> Result<Model<T>> {
    model.set_regularizer(reg)?;
    Ok(model)
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn batch_norm_states(&self) -> impl Iterator<Item = (&str, &BatchNormState<T>)> {
        self.bn_names.iter().map(String::as_str).zip(&self.bn)
    }

    pub fn set_regularizer(&mut self, reg: &RegularizerSpec) -> Result<()> {
        reg.kind.validate()?;
        if reg.kind == RegularizerKind::None {
            self.regularizer = None;
            return Ok(());
        }
        let mut points = reg
            .resolved_points()
            .iter()
            .map(|p| self.spec.resolve_point(p))
            .collect::<Result<Vec<_>>>()?;
        points.sort_unstable();
        points.dedup();
        self.regularizer = Some((reg.kind, points));
        Ok(())
    }

    pub fn regularizer(&self) -> Option<(&RegularizerKind, &[usize])> {
        self.regularizer.as_ref().map(|(k, p)| (k, p.as_slice()))
    }

    /// Classifier weights `(num_classes, channels)` and bias when the head is
    /// global average pooling followed by a linear layer.
    pub fn gap_linear_head(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        (self.head == Head::GapLinear).then(|| (&self.params[self.fc.0].value, &self.params[self.fc.1].value))
    }

    /// Parameters followed by batch-norm running statistics, by name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> =
            self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (name, st) in self.batch_norm_states() {
            let c = st.channels();
            out.push((format!("{name}.running_mean"), Tensor::new(&[c], st.running_mean.clone()).expect("len c")));
            out.push((format!("{name}.running_var"), Tensor::new(&[c], st.running_var.clone()).expect("len c")));
        }
        out
    }

    /// Inverse of [`named_tensors`](Self::named_tensors); every name and
    /// shape must match.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(invalid!("checkpoint has {} tensors, model expects {}", tensors.len(), expected.len()));
        }
        for ((name, want), (got_name, got)) in expected.iter().zip(tensors) {
            if name != got_name || want.shape() != got.shape() {
                return Err(invalid!(
                    "checkpoint tensor `{got_name}` {:?} does not match `{name}` {:?}",
                    got.shape(),
                    want.shape()
                ));
            }
        }
        let np = self.params.len();
        for (p, (_, t)) in self.params.iter_mut().zip(tensors) {
            p.value = t.clone();
        }
        for (i, st) in self.bn.iter_mut().enumerate() {
            st.running_mean = tensors[np + 2 * i].1.data().to_vec();
            st.running_var = tensors[np + 2 * i + 1].1.data().to_vec();
        }
        Ok(())
    }

    /// Forward pass; train mode updates batch-norm running statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: &Tensor<T>, pass: Pass<'_>) -> Result<ForwardOutput<T>> {
        let mut bn = core::mem::take(&mut self.bn);
        let out = self.forward_with(&mut bn, tape, input, pass);
        self.bn = bn;
        out
    }

    /// Inference-mode forward that leaves the model untouched.
    pub fn forward_inference(&self, tape: &mut Tape<T>, input: &Tensor<T>) -> Result<ForwardOutput<T>> {
        let mut bn = self.bn.clone();
        self.forward_with(&mut bn, tape, input, Pass::inference())
    }

    /// Inference logits `(N, num_classes)`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward_inference(&mut tape, input)?;
        Ok(tape.value(out.logits).clone())
    }

    fn forward_with(
        &self,
        bn: &mut [BatchNormState<T>],
        tape: &mut Tape<T>,
        input: &Tensor<T>,
        mut pass: Pass<'_>,
    ) -> Result<ForwardOutput<T>> {
        let (_, c, h, w) = input.nchw("model input")?;
        if c != self.spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "model input channels",
                left: input.shape().to_vec(),
                right: vec![self.spec.in_channels],
            });
        }
        if self.head == Head::FlattenLinear && (h != self.spec.input_size || w != self.spec.input_size) {
            return Err(invalid!(
                "vgg-small expects {0}x{0} inputs, got {h}x{w}",
                self.spec.input_size
            ));
        }
        let batch_stats = pass.mode == Mode::Train;
        let pv: Vec<Var> = self.params.iter().map(|p| tape.param(p.value.clone())).collect();
        let mut x = tape.constant(input.clone());
        let mut stages = Vec::new();
        let mut stage_inputs = Vec::new();
        let mut masks = Vec::new();

        let mut ctx = Ctx {
            tape,
            pv: &pv,
            bn,
            batch_stats,
        };
        let nstages = self.spec.stage_widths.len();
        for s in 0..nstages {
            x = match &self.plan {
                Plan::Tiny(convs) => {
                    if s == nstages - 1 && s > 0 {
                        x = ctx.tape.max_pool2d(x, 2, 2)?;
                    }
                    let mut y = ctx.conv_bn(&convs[s], x, true)?;
                    if s == 0 {
                        y = ctx.tape.max_pool2d(y, 2, 2)?;
                    }
                    y
                }
                Plan::ResNet { stem, stages } => {
                    if s == 0 {
                        x = ctx.conv_bn(stem, x, true)?;
                    }
                    for block in &stages[s] {
                        x = ctx.block(block, x)?;
                    }
                    x
                }
                Plan::Vgg(convs) => {
                    for cb in &convs[s] {
                        x = ctx.conv_bn(cb, x, true)?;
                    }
                    ctx.tape.max_pool2d(x, 2, 2)?
                }
            };
            stage_inputs.push(x);
            if let Some((kind, points)) = &self.regularizer {
                if points.contains(&s) && pass.mode == Mode::Train && pass.regularizer_active {
                    let rng = pass
                        .rng
                        .as_mut()
                        .ok_or_else(|| invalid!("active regularizer needs a random stream"))?;
                    let (y, mask) = kind.apply_on_tape(ctx.tape, x, Mode::Train, &mut **rng)?;
                    if let Some(m) = mask {
                        masks.push((s, m));
                    }
                    x = y;
                }
            }
            stages.push(x);
        }
        let features = x;
        let tape = ctx.tape;
        let pooled = match self.head {
            Head::GapLinear => tape.global_avg_pool(x)?,
            Head::FlattenLinear => {
                let shape = tape.value(x).shape().to_vec();
                tape.reshape(x, &[shape[0], shape[1] * shape[2] * shape[3]])?
            }
        };
        let logits = tape.linear(pooled, pv[self.fc.0], Some(pv[self.fc.1]))?;
        Ok(ForwardOutput {
            logits,
            params: pv,
            stages,
            stage_inputs,
            features,
            masks,
        })
    }
}

struct Ctx<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    pv: &'a [Var],
    bn: &'a mut [BatchNormState<T>],
    batch_stats: bool,
}

impl<T: Scalar> Ctx<'_, T> {
    fn conv_bn(&mut self, cb: &ConvBn, x: Var, relu: bool) -> Result<Var> {
        let y = self.tape.conv2d(x, self.pv[cb.conv], None, cb.stride, cb.pad)?;
        let y = self.tape.batch_norm2d(
            y,
            self.pv[cb.gamma],
            self.pv[cb.beta],
            &mut self.bn[cb.bn],
            self.batch_stats,
        )?;
        if relu {
            self.tape.relu(y)
        } else {
            Ok(y)
        }
    }

    fn block(&mut self, block: &Block, x: Var) -> Result<Var> {
        let y = self.conv_bn(&block.first, x, true)?;
        let y = self.conv_bn(&block.second, y, false)?;
        let cin = self.tape.value(x).shape()[1];
        let skip = if block.stride != 1 || cin != block.out_channels {
            self.tape.shortcut(x, block.stride, block.out_channels)?
        } else {
            x
        };
        let sum = self.tape.add(y, skip)?;
        self.tape.relu(sum)
    }
}

//! ResNet-18 with one attention block per basic block, placed after the
//! second batch norm and before the residual addition.
//!
//! Parameter names follow `conv1`, `bn1`, `layer{1..4}.block{1,2}.{conv1,bn1,
//! conv2,bn2,attn,shortcut.conv,shortcut.bn}`, `fc`; see the README for the
//! full list.

use serde::{Deserialize, Serialize};

use crate::attention::{make_attention, Attention, AttentionKind, AttentionSpec, DEFAULT_REDUCTION};
use crate::error::{Error, Result};
use crate::kernels::PoolKind;
use crate::nn::{seeded_rng, BatchNorm2d, Conv2d, Linear, Mode, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

pub const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const BLOCKS_PER_STAGE: usize = 2;
pub const NUM_CLASSES: usize = 2;
/// Smallest input side for which no spatial extent collapses before the head.
pub const MIN_INPUT_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub attention: AttentionKind,
    pub reduction: usize,
    /// Divides every channel width; 1 is the standard network.
    pub width_divisor: usize,
    pub cbam_shared_mlp: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(AttentionKind::None)
    }
}

impl ModelSpec {
    pub fn new(attention: AttentionKind) -> Self {
        Self { attention, reduction: DEFAULT_REDUCTION, width_divisor: 1, cbam_shared_mlp: true }
    }

    pub fn with_width_divisor(mut self, k: usize) -> Self {
        self.width_divisor = k;
        self
    }

    pub fn widths(&self) -> [usize; 4] {
        STAGE_WIDTHS.map(|w| (w / self.width_divisor.max(1)).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_divisor == 0 {
            return Err(Error::Config("model.width_divisor must be at least 1".into()));
        }
        if self.reduction == 0 {
            return Err(Error::Config("model.reduction must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Shortcut<T: Real = f64> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Clone, Debug)]
pub struct BasicBlock<T: Real = f64> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub attention: Attention<T>,
    pub shortcut: Option<Shortcut<T>>,
}

impl<T: Real> BasicBlock<T> {
    fn new(
        rng: &mut Rng,
        attn_rng: &mut Rng,
        spec: &ModelSpec,
        inputs: usize,
        outputs: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(rng, inputs, outputs, 3, stride, 1, false);
        let conv2 = Conv2d::new(rng, outputs, outputs, 3, 1, 1, false);
        let shortcut = (stride != 1 || inputs != outputs).then(|| Shortcut {
            conv: Conv2d::new(rng, inputs, outputs, 1, stride, 0, false),
            bn: BatchNorm2d::new(outputs),
        });
        let attn_spec = AttentionSpec {
            kind: spec.attention,
            reduction: spec.reduction,
            channels: outputs,
            cbam_shared_mlp: spec.cbam_shared_mlp,
        };
        Ok(Self {
            conv1,
            bn1: BatchNorm2d::new(outputs),
            conv2,
            bn2: BatchNorm2d::new(outputs),
            attention: make_attention(&attn_spec, attn_rng)?,
            shortcut,
        })
    }

    /// `relu(attention(bn2(conv2(relu(bn1(conv1(x)))))) + shortcut(x))`
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        if mode == Mode::Eval {
            return self.forward_eval(tape, x);
        }
        let out = self.bn1.forward(tape, self.conv1.forward(tape, x)?, mode)?.relu();
        let out = self.bn2.forward(tape, self.conv2.forward(tape, out)?, mode)?;
        let out = self.attention.forward(tape, out)?;
        let skip = match &mut self.shortcut {
            Some(s) => s.bn.forward(tape, s.conv.forward(tape, x)?, mode)?,
            None => x,
        };
        Ok(out.add(skip)?.relu())
    }

    pub fn forward_eval<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.bn1.forward_eval(tape, self.conv1.forward(tape, x)?)?.relu();
        let out = self.bn2.forward_eval(tape, self.conv2.forward(tape, out)?)?;
        let out = self.attention.forward(tape, out)?;
        let skip = match &self.shortcut {
            Some(s) => s.bn.forward_eval(tape, s.conv.forward(tape, x)?)?,
            None => x,
        };
        Ok(out.add(skip)?.relu())
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.attention.visit(&join(prefix, "attn"), f);
        if let Some(s) = &self.shortcut {
            s.conv.visit(&join(prefix, "shortcut.conv"), f);
            s.bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        self.attention.visit_mut(&join(prefix, "attn"), f);
        if let Some(s) = &mut self.shortcut {
            s.conv.visit_mut(&join(prefix, "shortcut.conv"), f);
            s.bn.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResNet<T: Real = f64> {
    pub spec: ModelSpec,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    /// Four stages of two blocks each.
    pub stages: Vec<Vec<BasicBlock<T>>>,
    pub fc: Linear<T>,
}

/// Offset between the backbone and attention random streams, so that
/// adding attention never changes the backbone's initial weights.
const ATTENTION_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn build_resnet18<T: Real>(spec: &ModelSpec, seed: u64) -> Result<ResNet<T>> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let mut attn_rng = seeded_rng(seed ^ ATTENTION_STREAM);
    let widths = spec.widths();
    let conv1 = Conv2d::new(&mut rng, 3, widths[0], 7, 2, 3, false);
    let bn1 = BatchNorm2d::new(widths[0]);
    let mut stages = Vec::with_capacity(4);
    let mut inputs = widths[0];
    for (s, &w) in widths.iter().enumerate() {
        let mut blocks = Vec::with_capacity(BLOCKS_PER_STAGE);
        for b in 0..BLOCKS_PER_STAGE {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            blocks.push(BasicBlock::new(&mut rng, &mut attn_rng, spec, inputs, w, stride)?);
            inputs = w;
        }
        stages.push(blocks);
    }
    let fc = Linear::new(&mut rng, widths[3], NUM_CLASSES);
    Ok(ResNet { spec: *spec, conv1, bn1, stages, fc })
}

/// Intermediate results of an eval-mode pass.
pub struct Trace<'t, T: Real = f64> {
    /// After stem convolution, batch norm, ReLU and max pooling.
    pub stem: Var<'t, T>,
    /// Output of each stage; the last one feeds the pooling head.
    pub stages: Vec<Var<'t, T>>,
    pub logits: Var<'t, T>,
}

impl<T: Real> ResNet<T> {
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::dim(format!("model expects N×3×H×W images, got {shape:?}")));
        }
        if shape[2] < MIN_INPUT_SIDE || shape[3] < MIN_INPUT_SIDE {
            return Err(Error::dim(format!(
                "input {}×{} is smaller than the minimum {MIN_INPUT_SIDE}×{MIN_INPUT_SIDE}",
                shape[2], shape[3]
            )));
        }
        Ok(())
    }

    fn head<'t>(&self, tape: &'t Tape<T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = features.shape()[0];
        let pooled = features.global_pool(PoolKind::Avg)?.reshape(&[n, self.spec.widths()[3]])?;
        self.fc.forward(tape, pooled)
    }

    /// N×2 logits. Train mode uses batch statistics and updates running stats.
    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        if mode == Mode::Eval {
            return self.forward_eval(tape, x);
        }
        self.check_input(&x.shape())?;
        let out = self.bn1.forward(tape, self.conv1.forward(tape, x)?, mode)?.relu();
        let mut out = out.pool2d(PoolKind::Max, 3, 2, 1)?;
        for block in self.stages.iter_mut().flatten() {
            out = block.forward(tape, out, mode)?;
        }
        self.head(tape, out)
    }

    pub fn trace<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Trace<'t, T>> {
        self.check_input(&x.shape())?;
        let out = self.bn1.forward_eval(tape, self.conv1.forward(tape, x)?)?.relu();
        let stem = out.pool2d(PoolKind::Max, 3, 2, 1)?;
        let mut out = stem;
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in stage {
                out = block.forward_eval(tape, out)?;
            }
            stages.push(out);
        }
        let logits = self.head(tape, out)?;
        Ok(Trace { stem, stages, logits })
    }

    /// Pure: running statistics are read, never written.
    pub fn forward_eval<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(tape, x)?.logits)
    }

    /// Eval-mode pass exposing the final block's output for attribution.
    pub fn last_conv_features<'t>(&self, tape: &'t Tape<T>, batch: &Tensor<T>) -> Result<FeatureProbe<'t, T>> {
        let trace = self.trace(tape, tape.constant(batch.clone()))?;
        Ok(FeatureProbe {
            tape,
            features: *trace.stages.last().expect("four stages"),
            logits: trace.logits,
            grads: None,
        })
    }
}

impl<T: Real> Module<T> for ResNet<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                block.visit(&join(prefix, &format!("layer{}.block{}", s + 1, b + 1)), f);
            }
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("layer{}.block{}", s + 1, b + 1)), f);
            }
        }
        self.fc.visit_mut(&join(prefix, "fc"), f);
    }
}

/// Last-stage features of an eval pass and, once [`FeatureProbe::backward_from`]
/// has run, the gradient of a chosen logit with respect to them.
pub struct FeatureProbe<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    features: Var<'t, T>,
    logits: Var<'t, T>,
    grads: Option<Gradients<T>>,
}

impl<'t, T: Real> FeatureProbe<'t, T> {
    pub fn features(&self) -> Tensor<T> {
        self.features.value()
    }

    pub fn logits(&self) -> Tensor<T> {
        self.logits.value()
    }

    pub fn logits_var(&self) -> Var<'t, T> {
        self.logits
    }

    pub fn features_var(&self) -> Var<'t, T> {
        self.features
    }

    /// Differentiates the sum over the batch of logit `class`.
    pub fn backward_from(&mut self, class: usize) -> Result<()> {
        let n = self.logits.shape()[0];
        let target = self.logits.pick(&vec![class; n])?.sum();
        self.backward_from_scalar(target)
    }

    /// Differentiates an arbitrary scalar built from [`FeatureProbe::logits_var`].
    pub fn backward_from_scalar(&mut self, target: Var<'t, T>) -> Result<()> {
        self.grads = Some(self.tape.backward(target)?);
        Ok(())
    }

    pub fn gradient(&self) -> Result<Tensor<T>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::contract("feature gradient requested before backward"))?;
        Ok(grads.wrt(self.features)?.clone())
    }
}

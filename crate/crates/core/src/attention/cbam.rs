use crate::attention::check_channels;
use crate::error::Result;
use crate::kernels::PoolKind;
use crate::nn::{Conv2d, Mlp2, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const SPATIAL_KERNEL: usize = 7;

/// Convolutional block attention: a channel gate from average- and
/// max-pooled descriptors, then a 7×7 spatial gate from channel-pooled maps.
#[derive(Clone, Debug)]
pub struct CbamModule<T: Real = f64> {
    pub channel_mlp: Mlp2<T>,
    /// Separate MLP for the max descriptor; `None` means the MLP is shared.
    pub max_mlp: Option<Mlp2<T>>,
    pub spatial_conv: Conv2d<T>,
    /// Forces both gates to 1. Diagnostic switch for checking the wiring.
    pub bypass: bool,
}

impl<T: Real> CbamModule<T> {
    pub fn new(rng: &mut Rng, channels: usize, reduction: usize, shared_mlp: bool) -> Self {
        let channel_mlp = Mlp2::new(rng, channels, reduction);
        let max_mlp = (!shared_mlp).then(|| Mlp2::new(rng, channels, reduction));
        let pad = SPATIAL_KERNEL / 2;
        Self {
            channel_mlp,
            max_mlp,
            spatial_conv: Conv2d::new(rng, 2, 1, SPATIAL_KERNEL, 1, pad, true),
            bypass: false,
        }
    }

    fn ones_like<'t>(tape: &'t Tape<T>, shape: &[usize]) -> Result<Var<'t, T>> {
        Ok(tape.constant(Tensor::ones(shape)?))
    }

    /// N×C×1×1 gate `σ(MLP(GAP(F)) + MLP(GMP(F)))`.
    pub fn channel_gate<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        check_channels("CBAM", self.channel_mlp.channels(), &s)?;
        if self.bypass {
            return Self::ones_like(tape, &[s[0], s[1], 1, 1]);
        }
        let avg = self.channel_mlp.forward(tape, f.global_pool(PoolKind::Avg)?)?;
        let max_mlp = self.max_mlp.as_ref().unwrap_or(&self.channel_mlp);
        let max = max_mlp.forward(tape, f.global_pool(PoolKind::Max)?)?;
        Ok(avg.add(max)?.sigmoid())
    }

    /// N×1×H×W gate `σ(Conv7×7([avg_c(F), max_c(F)]))`.
    pub fn spatial_gate<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        check_channels("CBAM", self.channel_mlp.channels(), &s)?;
        if self.bypass {
            return Self::ones_like(tape, &[s[0], 1, s[2], s[3]]);
        }
        let avg = f.spatial_pool(PoolKind::Avg)?;
        let max = f.spatial_pool(PoolKind::Max)?;
        let pooled = tape.concat(&[avg, max], 1)?;
        Ok(self.spatial_conv.forward(tape, pooled)?.sigmoid())
    }

    pub fn channel<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        f.mul(self.channel_gate(tape, f)?)
    }

    pub fn spatial<'t>(&self, tape: &'t Tape<T>, f_ch: Var<'t, T>) -> Result<Var<'t, T>> {
        f_ch.mul(self.spatial_gate(tape, f_ch)?)
    }

    /// Channel attention strictly before spatial attention.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let f_ch = self.channel(tape, f)?;
        self.spatial(tape, f_ch)
    }
}

impl<T: Real> Module<T> for CbamModule<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.channel_mlp.visit(&join(prefix, "mlp"), f);
        if let Some(m) = &self.max_mlp {
            m.visit(&join(prefix, "mlp_max"), f);
        }
        self.spatial_conv.visit(&join(prefix, "spatial"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.channel_mlp.visit_mut(&join(prefix, "mlp"), f);
        if let Some(m) = &mut self.max_mlp {
            m.visit_mut(&join(prefix, "mlp_max"), f);
        }
        self.spatial_conv.visit_mut(&join(prefix, "spatial"), f);
    }
}

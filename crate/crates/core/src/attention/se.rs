use crate::attention::check_channels;
use crate::error::Result;
use crate::kernels::PoolKind;
use crate::nn::{Mlp2, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Squeeze-and-excitation: a per-channel gate computed from the
/// globally averaged descriptor, `F * σ(MLP(GAP(F)))`.
#[derive(Clone, Debug)]
pub struct SeModule<T: Real = f64> {
    pub mlp: Mlp2<T>,
}

impl<T: Real> SeModule<T> {
    pub fn new(rng: &mut Rng, channels: usize, reduction: usize) -> Self {
        Self { mlp: Mlp2::new(rng, channels, reduction) }
    }

    /// The N×C×1×1 channel gate `a_ch`.
    pub fn gate<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        check_channels("SE", self.mlp.channels(), &f.shape())?;
        Ok(self.mlp.forward(tape, f.global_pool(PoolKind::Avg)?)?.sigmoid())
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        f.mul(self.gate(tape, f)?)
    }
}

impl<T: Real> Module<T> for SeModule<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.mlp.fc1.visit(&join(prefix, "fc1"), f);
        self.mlp.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.mlp.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.mlp.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

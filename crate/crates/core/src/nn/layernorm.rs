use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Normalization over the last axis followed by a learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm<T: Real = f64> {
    pub scale: Param<T>,
    pub shift: Param<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Param::new(Tensor::ones(&[width]).expect("positive extent")),
            shift: Param::new(Tensor::zeros(&[width]).expect("positive extent")),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> crate::Result<Var<'t, T>> {
        x.layer_norm(T::of(LN_EPS))
            .mul(tape.param(&self.scale))?
            .add(tape.param(&self.shift))
    }
}

impl<T: Real> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.scale);
        f(join(prefix, "bias"), &self.shift);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.scale);
        f(join(prefix, "bias"), &mut self.shift);
    }
}

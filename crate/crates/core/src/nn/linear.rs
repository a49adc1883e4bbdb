use crate::error::Result;
use crate::nn::init::{he_normal, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fully-connected layer, `y = x Wᵀ + b` with `W` stored out×in.
#[derive(Clone, Debug)]
pub struct Linear<T: Real = f64> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(rng: &mut Rng, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::new(he_normal(rng, &[outputs, inputs], inputs)),
            bias: Param::new(Tensor::zeros(&[outputs]).expect("positive extent")),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value().shape()[0]
    }

    /// `x` is N×in.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = tape.param(&self.weight).transpose()?;
        x.matmul(w)?.add(tape.param(&self.bias))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

use crate::error::Result;
use crate::nn::init::{he_normal, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2d<T: Real = f64> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    /// Square `kernel`, He-initialized weights, zero bias when `bias` is set.
    pub fn new(
        rng: &mut Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: Param::new(he_normal(rng, &[out_channels, in_channels, kernel, kernel], fan_in)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_channels]).expect("positive extent"))),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    /// Sets weight and bias to zero.
    pub fn zero(&mut self) {
        self.weight.value_mut().iter_mut().for_each(|v| *v = T::zero());
        if let Some(b) = self.bias.as_mut() {
            b.value_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        x.conv2d(w, b, self.stride, self.padding)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

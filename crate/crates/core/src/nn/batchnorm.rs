use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization for N×C×H×W maps.
///
/// Train mode standardizes with the batch's statistics and folds them into
/// the running estimates (variance unbiased, as in the usual convention);
/// eval mode is the fixed affine map given by the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Real = f64> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let ones = Tensor::ones(&[channels]).expect("positive extent");
        let zeros = Tensor::zeros(&[channels]).expect("positive extent");
        Self {
            scale: Param::new(ones.clone()),
            shift: Param::new(zeros.clone()),
            running_mean: Param::buffer(zeros),
            running_var: Param::buffer(ones),
            momentum: T::of(BN_MOMENTUM),
            eps: T::of(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.value().len()
    }

    fn check(&self, x: &Var<'_, T>) -> Result<Vec<usize>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::dim(format!(
                "batch norm over {} channels got input {s:?}",
                self.channels()
            )));
        }
        Ok(s)
    }

    fn per_channel<'t>(&self, tape: &'t Tape<T>, p: &Param<T>) -> Result<Var<'t, T>> {
        tape.param(p).reshape(&[1, self.channels(), 1, 1])
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape<T>, x: Var<'t, T>, mode: Mode) -> Result<Var<'t, T>> {
        if mode == Mode::Eval {
            return self.forward_eval(tape, x);
        }
        let s = self.check(&x)?;
        let (xhat, mean, var) = x.channel_standardize(self.eps)?;
        let count = s[0] * s[2] * s[3];
        let unbias = if count > 1 {
            T::of(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        let m = self.momentum;
        for (r, &b) in self.running_mean.value_mut().iter_mut().zip(&mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.value_mut().iter_mut().zip(&var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
        xhat.mul(self.per_channel(tape, &self.scale)?)?
            .add(self.per_channel(tape, &self.shift)?)
    }

    pub fn forward_eval<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = self.channels();
        self.check(&x)?;
        let inv: Vec<T> = self
            .running_var
            .value()
            .data()
            .iter()
            .map(|&v| T::one() / (v + self.eps).sqrt())
            .collect();
        let neg_mean: Vec<T> = self.running_mean.value().data().iter().map(|&m| -m).collect();
        let inv = tape.constant(Tensor::new(&[1, c, 1, 1], inv)?);
        let neg_mean = tape.constant(Tensor::new(&[1, c, 1, 1], neg_mean)?);
        let gain = self.per_channel(tape, &self.scale)?.mul(inv)?;
        let offset = self.per_channel(tape, &self.shift)?.add(gain.mul(neg_mean)?)?;
        x.mul(gain)?.add(offset)
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        f(join(prefix, "weight"), &self.scale);
        f(join(prefix, "bias"), &self.shift);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.scale);
        f(join(prefix, "bias"), &mut self.shift);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

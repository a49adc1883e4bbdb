use crate::error::{Error, Result};
use crate::nn::init::Rng;
use crate::nn::Linear;
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Bottleneck width for `channels` reduced by `ratio`, never below one.
pub fn hidden_extent(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

/// `fc2(relu(fc1(f)))` on N×C×1×1 pooled descriptors. No output gate.
#[derive(Clone, Debug)]
pub struct Mlp2<T: Real = f64> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Mlp2<T> {
    pub fn new(rng: &mut Rng, channels: usize, ratio: usize) -> Self {
        let hidden = hidden_extent(channels, ratio);
        Self {
            fc1: Linear::new(rng, channels, hidden),
            fc2: Linear::new(rng, hidden, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn hidden(&self) -> usize {
        self.fc1.outputs()
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        if s.len() != 4 || s[1] != self.channels() || s[2] != 1 || s[3] != 1 {
            return Err(Error::dim(format!(
                "MLP over {} channels expects N×{}×1×1, got {s:?}",
                self.channels(),
                self.channels()
            )));
        }
        let h = self.fc1.forward(tape, f.reshape(&[s[0], s[1]])?)?.relu();
        self.fc2.forward(tape, h)?.reshape(&s)
    }
}

impl<T: Real> Module<T> for Mlp2<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

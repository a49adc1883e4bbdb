use crate::attention::check_channels;
use crate::error::Result;
use crate::nn::{hidden_extent, Conv2d, LayerNorm, Rng};
use crate::param::{join, Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Global context block: softmax-weighted pooling over all positions
/// into one context vector, a bottleneck transform, and a broadcast add back
/// onto every position.
#[derive(Clone, Debug)]
pub struct GcModule<T: Real = f64> {
    /// 1×1 conv C → 1 producing one attention logit per position.
    pub mask_conv: Conv2d<T>,
    pub transform_in: Conv2d<T>,
    pub transform_norm: LayerNorm<T>,
    /// Zero-initialized, so the block starts as the identity.
    pub transform_out: Conv2d<T>,
}

impl<T: Real> GcModule<T> {
    pub fn new(rng: &mut Rng, channels: usize, reduction: usize) -> Self {
        let hidden = hidden_extent(channels, reduction);
        let mask_conv = Conv2d::new(rng, channels, 1, 1, 1, 0, true);
        let transform_in = Conv2d::new(rng, channels, hidden, 1, 1, 0, true);
        let mut transform_out = Conv2d::new(rng, hidden, channels, 1, 1, 0, true);
        transform_out.zero();
        Self {
            mask_conv,
            transform_in,
            transform_norm: LayerNorm::new(hidden),
            transform_out,
        }
    }

    pub fn channels(&self) -> usize {
        self.mask_conv.in_channels()
    }

    pub fn hidden(&self) -> usize {
        self.transform_in.out_channels()
    }

    /// N×1×(H·W) softmax weights over positions.
    pub fn aggregation_weights<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        check_channels("GC", self.channels(), &s)?;
        let logits = self.mask_conv.forward(tape, f)?;
        logits.reshape(&[s[0], 1, s[2] * s[3]])?.softmax(2)
    }

    /// N×C×1×1 context vector: `Σ_pos weight_pos · F[:, pos]`.
    pub fn context<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = f.shape();
        let weights = self.aggregation_weights(tape, f)?;
        let flat = f.reshape(&[s[0], s[1], s[2] * s[3]])?;
        flat.mul(weights)?.sum_axis(2)?.reshape(&[s[0], s[1], 1, 1])
    }

    /// conv C→C/r, layer norm over C/r, ReLU, conv C/r→C.
    pub fn transform<'t>(&self, tape: &'t Tape<T>, ctx: Var<'t, T>) -> Result<Var<'t, T>> {
        let n = ctx.shape()[0];
        let h = self.hidden();
        let t = self.transform_in.forward(tape, ctx)?.reshape(&[n, h])?;
        let t = self.transform_norm.forward(tape, t)?.relu().reshape(&[n, h, 1, 1])?;
        self.transform_out.forward(tape, t)
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        let ctx = self.context(tape, f)?;
        f.add(self.transform(tape, ctx)?)
    }
}

impl<T: Real> Module<T> for GcModule<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        self.mask_conv.visit(&join(prefix, "mask"), f);
        self.transform_in.visit(&join(prefix, "transform.conv1"), f);
        self.transform_norm.visit(&join(prefix, "transform.ln"), f);
        self.transform_out.visit(&join(prefix, "transform.conv2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.mask_conv.visit_mut(&join(prefix, "mask"), f);
        self.transform_in.visit_mut(&join(prefix, "transform.conv1"), f);
        self.transform_norm.visit_mut(&join(prefix, "transform.ln"), f);
        self.transform_out.visit_mut(&join(prefix, "transform.conv2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;
    use crate::tensor::Tensor;

    #[test]
    fn weights_sum_to_one() {
        let m = GcModule::<f64>::new(&mut seeded_rng(3), 6, 2);
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 6, 3, 4], |i| ((i[0] + i[1] * 5 + i[2] * 3 + i[3]) as f64).sin()).unwrap();
        let w = m.aggregation_weights(&tape, tape.constant(x)).unwrap().value();
        for row in w.data().chunks(12) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_position_context_is_the_column() {
        let m = GcModule::<f64>::new(&mut seeded_rng(3), 4, 2);
        let tape = Tape::new();
        let x = Tensor::from_f64(&[1, 4, 1, 1], &[1.0, -2.0, 3.0, 0.5]).unwrap();
        let ctx = m.context(&tape, tape.constant(x.clone())).unwrap().value();
        assert_eq!(ctx.data(), x.data());
    }
}

//! Loop-based re-implementations of the attention blocks. They read the
//! parameters straight from the module and share no code with the tape.

use attnbench::attention::{make_attention, Attention, AttentionKind, AttentionSpec, CbamModule, GcModule, SeModule};
use attnbench::nn::{Conv2d, Linear, Mlp2, Rng};
use attnbench::{Tape, Tensor};
use rand::Rng as _;

use super::{randomize, uniform};

struct Map<'a> {
    data: &'a [f64],
    c: usize,
    h: usize,
    w: usize,
}

impl Map<'_> {
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }
}

fn dims(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn linear(l: &Linear, v: &[f64]) -> Vec<f64> {
    let w = l.weight.value().data();
    let b = l.bias.value().data();
    let (outs, ins) = (l.outputs(), l.inputs());
    (0..outs)
        .map(|o| b[o] + (0..ins).map(|i| w[o * ins + i] * v[i]).sum::<f64>())
        .collect()
}

fn mlp(m: &Mlp2, v: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(&m.fc1, v).into_iter().map(|z| z.max(0.0)).collect();
    linear(&m.fc2, &h)
}

/// 1×1 convolution on a single vector.
fn pointwise(conv: &Conv2d, v: &[f64]) -> Vec<f64> {
    let w = conv.weight.value().data();
    let outs = w.len() / v.len();
    let b = conv.bias.as_ref().map(|b| b.value().data().to_vec()).unwrap_or(vec![0.0; outs]);
    (0..outs)
        .map(|o| b[o] + (0..v.len()).map(|i| w[o * v.len() + i] * v[i]).sum::<f64>())
        .collect()
}

pub fn se(m: &SeModule, x: &Tensor) -> Vec<f64> {
    let (n, c, h, w) = dims(x);
    let f = Map { data: x.data(), c, h, w };
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let gap: Vec<f64> = (0..c)
            .map(|ch| {
                let mut s = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        s += f.at(b, ch, y, xx);
                    }
                }
                s / (h * w) as f64
            })
            .collect();
        let gate: Vec<f64> = mlp(&m.mlp, &gap).into_iter().map(sigmoid).collect();
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[((b * c + ch) * h + y) * w + xx] = f.at(b, ch, y, xx) * gate[ch];
                }
            }
        }
    }
    out
}

pub fn cbam(m: &CbamModule, x: &Tensor) -> Vec<f64> {
    let (n, c, h, w) = dims(x);
    let f = Map { data: x.data(), c, h, w };
    let k = m.spatial_conv.weight.value().shape()[2];
    let pad = k / 2;
    let sw = m.spatial_conv.weight.value().data();
    let sb = m.spatial_conv.bias.as_ref().unwrap().value().data()[0];
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let mut avg = vec![0.0; c];
        let mut max = vec![f64::NEG_INFINITY; c];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = f.at(b, ch, y, xx);
                    avg[ch] += v / (h * w) as f64;
                    max[ch] = max[ch].max(v);
                }
            }
        }
        let a = mlp(&m.channel_mlp, &avg);
        let mx = mlp(m.max_mlp.as_ref().unwrap_or(&m.channel_mlp), &max);
        let gate: Vec<f64> = (0..c).map(|ch| sigmoid(a[ch] + mx[ch])).collect();

        let mut refined = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    refined[(ch * h + y) * w + xx] = f.at(b, ch, y, xx) * gate[ch];
                }
            }
        }
        // Channel-pooled maps: index 0 mean, index 1 max.
        let mut pooled = vec![[0.0, f64::NEG_INFINITY]; h * w];
        for pos in 0..h * w {
            for ch in 0..c {
                let v = refined[ch * h * w + pos];
                pooled[pos][0] += v / c as f64;
                pooled[pos][1] = pooled[pos][1].max(v);
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut z = sb;
                for map in 0..2 {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = (y + ky, xx + kx);
                            if iy < pad || ix < pad || iy - pad >= h || ix - pad >= w {
                                continue;
                            }
                            z += sw[(map * k + ky) * k + kx] * pooled[(iy - pad) * w + ix - pad][map];
                        }
                    }
                }
                let s = sigmoid(z);
                for ch in 0..c {
                    out[((b * c + ch) * h + y) * w + xx] = refined[(ch * h + y) * w + xx] * s;
                }
            }
        }
    }
    out
}

pub fn gc(m: &GcModule, x: &Tensor) -> Vec<f64> {
    let (n, c, h, w) = dims(x);
    let f = Map { data: x.data(), c, h, w };
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        let column = |pos: usize| -> Vec<f64> { (0..c).map(|ch| f.at(b, ch, pos / w, pos % w)).collect() };
        let logits: Vec<f64> = (0..hw).map(|pos| pointwise(&m.mask_conv, &column(pos))[0]).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut ctx = vec![0.0; c];
        for pos in 0..hw {
            for (ch, v) in column(pos).into_iter().enumerate() {
                ctx[ch] += exps[pos] / total * v;
            }
        }
        let t = pointwise(&m.transform_in, &ctx);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64;
        let scale = m.transform_norm.scale.value().data();
        let shift = m.transform_norm.shift.value().data();
        let t: Vec<f64> = t
            .iter()
            .enumerate()
            .map(|(i, v)| ((v - mean) / (var + 1e-5).sqrt() * scale[i] + shift[i]).max(0.0))
            .collect();
        let y = pointwise(&m.transform_out, &t);
        for ch in 0..c {
            for pos in 0..hw {
                out[(b * c + ch) * hw + pos] = f.at(b, ch, pos / w, pos % w) + y[ch];
            }
        }
    }
    out
}

fn tiny_shape(r: &mut Rng) -> Vec<usize> {
    vec![r.random_range(1..=2), r.random_range(1..=8), r.random_range(1..=5), r.random_range(1..=5)]
}

/// Largest |tape − oracle| over `trials` random parameterizations of `kind`.
pub fn oracle_disagreement(kind: AttentionKind, trials: usize, seed: u64) -> f64 {
    let mut r = super::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let s = tiny_shape(&mut r);
        let reduction = r.random_range(1..=4);
        let shared = r.random_bool(0.5);
        let spec = AttentionSpec { kind, reduction, channels: s[1], cbam_shared_mlp: shared };
        let mut m: Attention = make_attention(&spec, &mut r).unwrap();
        randomize(&mut m, &mut r);
        let x = uniform(&mut r, &s, -2.0, 2.0);
        let tape = Tape::new();
        let got = m.forward(&tape, tape.constant(x.clone())).unwrap().value();
        let want = match &m {
            Attention::Se(m) => se(m, &x),
            Attention::Cbam(m) => cbam(m, &x),
            Attention::Gc(m) => gc(m, &x),
            Attention::Identity => x.data().to_vec(),
        };
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Number of random shapes (C in 2..=32, H, W in 1..=8) for which the
/// output shape differs from the input shape or the forward fails.
pub fn contract_failures(kind: AttentionKind, shapes: usize, seed: u64) -> usize {
    let mut r = super::rng(seed);
    (0..shapes)
        .filter(|_| {
            let s = vec![r.random_range(1..=2), r.random_range(2..=32), r.random_range(1..=8), r.random_range(1..=8)];
            let spec = AttentionSpec::new(kind, s[1]).with_reduction(r.random_range(1..=16));
            let m: Attention = make_attention(&spec, &mut r).unwrap();
            let x = uniform(&mut r, &s, -1.0, 1.0);
            let tape = Tape::new();
            !matches!(m.forward(&tape, tape.constant(x)), Ok(y) if y.shape() == s)
        })
        .count()
}

/// Largest |gc(f) − f| for freshly built GC blocks.
pub fn fresh_gc_deviation(inputs: usize, seed: u64) -> f64 {
    let mut r = super::rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..inputs {
        let s = vec![r.random_range(1..=2), r.random_range(2..=32), r.random_range(1..=8), r.random_range(1..=8)];
        let m: Attention = make_attention(&AttentionSpec::new(AttentionKind::Gc, s[1]), &mut r).unwrap();
        let x = uniform(&mut r, &s, -3.0, 3.0);
        let tape = Tape::new();
        let y = m.forward(&tape, tape.constant(x.clone())).unwrap().value();
        worst = worst.max(y.max_abs_diff(&x).unwrap());
    }
    worst
}

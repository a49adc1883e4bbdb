//! Randomized finite-difference suites, one per primitive and per module.

use attnbench::attention::{CbamModule, GcModule, SeModule};
use attnbench::gradcheck::{check_inputs, check_module, Check};
use attnbench::nn::{BatchNorm2d, Conv2d, LayerNorm, Linear, Mlp2, Rng};
use attnbench::{Activation, CombineKind, Module, PoolKind, Result, Tape, Tensor, Var};
use rand::Rng as _;

use super::{off_zero, randomize, rng, spaced, uniform};

pub const TOLERANCE: f64 = 1e-4;
pub const MAX_ELEMENTS: usize = 200;

#[derive(Debug)]
pub struct Suite {
    pub name: String,
    pub trials: usize,
    pub worst: f64,
    /// Shapes and tensor name of the worst trial.
    pub worst_case: String,
}

impl Suite {
    pub fn passed(&self) -> bool {
        self.trials > 0 && self.worst < TOLERANCE
    }
}

type Program = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

fn worst(checks: &[Check]) -> (f64, String) {
    checks
        .iter()
        .map(|c| (c.rel_error(), c.name.clone()))
        .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
}

fn suite(name: &str, trials: usize, seed: u64, gen: impl Fn(&mut Rng) -> (Vec<Tensor>, Program)) -> Suite {
    let mut r = rng(seed);
    let (mut w, mut case) = (0.0f64, String::new());
    for t in 0..trials {
        let (inputs, program) = gen(&mut r);
        assert!(inputs.iter().map(Tensor::len).sum::<usize>() <= 3 * MAX_ELEMENTS);
        let checks = check_inputs(&inputs, seed ^ t as u64, |tape, vars| program(tape, vars))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        let (e, which) = worst(&checks);
        if e > w {
            let shapes: Vec<_> = inputs.iter().map(|x| x.shape().to_vec()).collect();
            (w, case) = (e, format!("trial {t}, {which} of {shapes:?}"));
        }
    }
    Suite { name: name.to_string(), trials, worst: w, worst_case: case }
}

/// N×C×H×W with at most `MAX_ELEMENTS` elements.
fn shape4(r: &mut Rng, c_max: usize, side_max: usize) -> Vec<usize> {
    loop {
        let s = vec![
            r.random_range(1..=2),
            r.random_range(1..=c_max),
            r.random_range(1..=side_max),
            r.random_range(1..=side_max),
        ];
        if s.iter().product::<usize>() <= MAX_ELEMENTS {
            return s;
        }
    }
}

fn shape_any(r: &mut Rng) -> Vec<usize> {
    loop {
        let rank = r.random_range(1..=4);
        let s: Vec<usize> = (0..rank).map(|_| r.random_range(1..=5)).collect();
        if s.iter().product::<usize>() <= MAX_ELEMENTS {
            return s;
        }
    }
}

fn boxed(f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static) -> Program {
    Box::new(f)
}

pub fn primitive_suites(trials: usize, seed: u64) -> Vec<Suite> {
    let mut out = Vec::new();
    let mut seed = seed;
    let mut next = || {
        seed = seed.wrapping_add(0x1000);
        seed
    };

    out.push(suite("relu", trials, next(), |r| {
        {
            let s = shape_any(r);
            (vec![off_zero(r, &s)], boxed(|_, v| Ok(v[0].elementwise(Activation::Relu))))
        }
    }));
    out.push(suite("sigmoid", trials, next(), |r| {
        {
            let s = shape_any(r);
            (vec![uniform(r, &s, -3.0, 3.0)], boxed(|_, v| Ok(v[0].sigmoid())))
        }
    }));
    out.push(suite("scale", trials, next(), |r| {
        let c = r.random_range(-2.0..2.0);
        {
            let s = shape_any(r);
            (vec![uniform(r, &s, -1.0, 1.0)], boxed(move |_, v| Ok(v[0].scale(c))))
        }
    }));
    out.push(suite("matmul", trials, next(), |r| {
        let (m, k, n) = (r.random_range(1..=6), r.random_range(1..=6), r.random_range(1..=6));
        let a = uniform(r, &[m, k], -1.0, 1.0);
        let b = uniform(r, &[k, n], -1.0, 1.0);
        (vec![a, b], boxed(|_, v| v[0].matmul(v[1])))
    }));
    out.push(suite("transpose", trials, next(), |r| {
        let s = [r.random_range(1..=8), r.random_range(1..=8)];
        (vec![uniform(r, &s, -1.0, 1.0)], boxed(|_, v| v[0].transpose()))
    }));
    out.push(suite("conv2d", trials, next(), |r| {
        let (n, c, h, w) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(3..=6), r.random_range(3..=6));
        let k = r.random_range(1..=3);
        let out_c = r.random_range(1..=3);
        let stride = r.random_range(1..=2);
        let pad = r.random_range(0..=1);
        let x = uniform(r, &[n, c, h, w], -1.0, 1.0);
        let wt = uniform(r, &[out_c, c, k, k], -1.0, 1.0);
        if r.random_bool(0.5) {
            let b = uniform(r, &[out_c], -1.0, 1.0);
            (vec![x, wt, b], boxed(move |_, v| v[0].conv2d(v[1], Some(v[2]), stride, pad)))
        } else {
            (vec![x, wt], boxed(move |_, v| v[0].conv2d(v[1], None, stride, pad)))
        }
    }));
    for kind in [PoolKind::Max, PoolKind::Avg] {
        let name = format!("pool2d_{kind:?}").to_lowercase();
        out.push(suite(&name, trials, next(), move |r| {
            let window = r.random_range(2..=3);
            let stride = r.random_range(1..=2);
            let pad = r.random_range(0..=window / 2);
            let mut s = shape4(r, 3, 5);
            s[2] = s[2].max(window);
            s[3] = s[3].max(window);
            (vec![spaced(r, &s)], boxed(move |_, v| v[0].pool2d(kind, window, stride, pad)))
        }));
        let name = format!("global_pool_{kind:?}").to_lowercase();
        out.push(suite(&name, trials, next(), move |r| {
            {
            let s = shape4(r, 4, 5);
            (vec![spaced(r, &s)], boxed(move |_, v| v[0].global_pool(kind)))
        }
        }));
        let name = format!("spatial_pool_{kind:?}").to_lowercase();
        out.push(suite(&name, trials, next(), move |r| {
            {
            let s = shape4(r, 4, 5);
            (vec![spaced(r, &s)], boxed(move |_, v| v[0].spatial_pool(kind)))
        }
        }));
    }
    out.push(suite("sum_axis", trials, next(), |r| {
        let s = shape_any(r);
        let axis = r.random_range(0..s.len());
        (vec![uniform(r, &s, -1.0, 1.0)], boxed(move |_, v| v[0].sum_axis(axis)))
    }));
    out.push(suite("sum", trials, next(), |r| {
        {
            let s = shape_any(r);
            (vec![uniform(r, &s, -1.0, 1.0)], boxed(|_, v| Ok(v[0].sum())))
        }
    }));
    out.push(suite("mean", trials, next(), |r| {
        {
            let s = shape_any(r);
            (vec![uniform(r, &s, -1.0, 1.0)], boxed(|_, v| Ok(v[0].mean())))
        }
    }));
    for log in [false, true] {
        let name = if log { "log_softmax" } else { "softmax" };
        out.push(suite(name, trials, next(), move |r| {
            let s = shape_any(r);
            let axis = r.random_range(0..s.len());
            let x = uniform(r, &s, -2.0, 2.0);
            if log {
                (vec![x], boxed(move |_, v| v[0].log_softmax(axis)))
            } else {
                (vec![x], boxed(move |_, v| v[0].softmax(axis)))
            }
        }));
    }
    for kind in [CombineKind::Add, CombineKind::Mul] {
        let name = format!("combine_{kind:?}").to_lowercase();
        out.push(suite(&name, trials, next(), move |r| {
            let rank = r.random_range(1..=4);
            let full: Vec<usize> = (0..rank).map(|_| r.random_range(1..=3)).collect();
            let squash = |r: &mut Rng, s: &[usize]| -> Vec<usize> {
                let drop = r.random_range(0..s.len());
                s[drop..].iter().map(|&e| if r.random_bool(0.4) { 1 } else { e }).collect()
            };
            let a = squash(r, &full);
            let b = squash(r, &full);
            let (a, b) = (uniform(r, &a, -1.0, 1.0), uniform(r, &b, -1.0, 1.0));
            (vec![a, b], boxed(move |_, v| v[0].combine(kind, v[1])))
        }));
    }
    out.push(suite("layer_norm", trials, next(), |r| {
        let mut s = shape_any(r);
        *s.last_mut().unwrap() = s.last().unwrap().max(&2).to_owned();
        (vec![spaced(r, &s)], boxed(|_, v| Ok(v[0].layer_norm(1e-5))))
    }));
    out.push(suite("channel_standardize", trials, next(), |r| {
        let mut s = shape4(r, 4, 4);
        s[0] = 2;
        (vec![uniform(r, &s, -1.0, 1.0)], boxed(|_, v| Ok(v[0].channel_standardize(1e-5)?.0)))
    }));
    out.push(suite("reshape", trials, next(), |r| {
        let s = shape_any(r);
        let n: usize = s.iter().product();
        (vec![uniform(r, &s, -1.0, 1.0)], boxed(move |_, v| v[0].reshape(&[1, n])))
    }));
    out.push(suite("concat", trials, next(), |r| {
        let s = shape4(r, 3, 3);
        let axis = r.random_range(0..4);
        let mut t = s.clone();
        t[axis] = r.random_range(1..=3);
        let (a, b) = (uniform(r, &s, -1.0, 1.0), uniform(r, &t, -1.0, 1.0));
        (vec![a, b], boxed(move |tape, v| tape.concat(&[v[0], v[1]], axis)))
    }));
    out.push(suite("pick", trials, next(), |r| {
        let (n, k) = (r.random_range(1..=6), r.random_range(1..=5));
        let index: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        (vec![uniform(r, &[n, k], -1.0, 1.0)], boxed(move |_, v| v[0].pick(&index)))
    }));
    out
}

/// Smallest distance to a kink that a ±1e-4 perturbation cannot cross.
const MARGIN: f64 = 1e-3;

fn clear_of_zero(values: &Tensor) -> bool {
    values.data().iter().all(|v| v.abs() >= MARGIN)
}

/// Pre-activations of the MLP's ReLU for an N×C×1×1 descriptor.
fn mlp_hidden<'t>(m: &Mlp2, tape: &'t Tape, pooled: Var<'t>) -> Tensor {
    let s = pooled.shape();
    m.fc1.forward(tape, pooled.reshape(&[s[0], s[1]]).unwrap()).unwrap().value()
}

/// Top two entries along axis 1 of an N×C×H×W map differ by at least `MARGIN`.
fn channel_max_clear(t: &Tensor) -> bool {
    let s = t.shape();
    let hw = s[2] * s[3];
    (0..s[0] * hw).all(|i| {
        let (n, pos) = (i / hw, i % hw);
        let mut v: Vec<f64> = (0..s[1]).map(|c| t.data()[(n * s[1] + c) * hw + pos]).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v.len() < 2 || v[0] - v[1] >= MARGIN
    })
}

fn always(_: &impl Module<f64>, _: &Tensor) -> bool {
    true
}

fn mlp_smooth(m: &Mlp2, x: &Tensor) -> bool {
    let tape = Tape::new();
    clear_of_zero(&mlp_hidden(m, &tape, tape.constant(x.clone())))
}

fn se_smooth(m: &SeModule, x: &Tensor) -> bool {
    let tape = Tape::new();
    let f = tape.constant(x.clone());
    clear_of_zero(&mlp_hidden(&m.mlp, &tape, f.global_pool(PoolKind::Avg).unwrap()))
}

fn cbam_smooth(m: &CbamModule, x: &Tensor) -> bool {
    let tape = Tape::new();
    let f = tape.constant(x.clone());
    let max_mlp = m.max_mlp.as_ref().unwrap_or(&m.channel_mlp);
    clear_of_zero(&mlp_hidden(&m.channel_mlp, &tape, f.global_pool(PoolKind::Avg).unwrap()))
        && clear_of_zero(&mlp_hidden(max_mlp, &tape, f.global_pool(PoolKind::Max).unwrap()))
        && channel_max_clear(&m.channel(&tape, f).unwrap().value())
}

fn gc_smooth(m: &GcModule, x: &Tensor) -> bool {
    let tape = Tape::new();
    let ctx = m.context(&tape, tape.constant(x.clone())).unwrap();
    let n = x.shape()[0];
    let t = m.transform_in.forward(&tape, ctx).unwrap().reshape(&[n, m.hidden()]).unwrap();
    clear_of_zero(&m.transform_norm.forward(&tape, t).unwrap().value())
}

/// Runs `trials` checks of `f`. Draws for which `smooth` is false sit within
/// `MARGIN` of a ReLU or max kink and are redrawn.
fn module_suite<M: Module<f64>>(
    name: &str,
    trials: usize,
    seed: u64,
    make: impl Fn(&mut Rng) -> (M, Tensor),
    smooth: impl Fn(&M, &Tensor) -> bool,
    f: impl for<'t> Fn(&M, &'t Tape, Var<'t>) -> Result<Var<'t>>,
) -> Suite {
    let mut r = rng(seed);
    let (mut w, mut case) = (0.0f64, String::new());
    for t in 0..trials {
        let (mut m, x) = loop {
            let (mut m, x) = make(&mut r);
            randomize(&mut m, &mut r);
            if smooth(&m, &x) {
                break (m, x);
            }
        };
        let checks = check_module(&mut m, &x, seed ^ t as u64, &f).unwrap_or_else(|e| panic!("{name}: {e}"));
        let (e, which) = worst(&checks);
        if e > w {
            (w, case) = (e, format!("trial {t}, {which} with input {:?}", x.shape()));
        }
    }
    Suite { name: name.to_string(), trials, worst: w, worst_case: case }
}

/// Parameterized layers and each full attention block.
pub fn module_suites(trials: usize, seed: u64) -> Vec<Suite> {
    let mut out = Vec::new();
    out.push(module_suite(
        "linear",
        trials,
        seed + 1,
        |r| {
            let (n, i, o) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
            (Linear::new(r, i, o), uniform(r, &[n, i], -1.0, 1.0))
        },
        always,
        |m, t, x| m.forward(t, x),
    ));
    out.push(module_suite(
        "conv2d_layer",
        trials,
        seed + 2,
        |r| {
            let c = r.random_range(1..=3);
            let (o, stride) = (r.random_range(1..=3), r.random_range(1..=2));
            let conv = Conv2d::new(r, c, o, 3, stride, 1, true);
            (conv, uniform(r, &[1, c, 4, 4], -1.0, 1.0))
        },
        always,
        |m, t, x| m.forward(t, x),
    ));
    out.push(module_suite(
        "layer_norm_layer",
        trials,
        seed + 3,
        |r| {
            let w = r.random_range(2..=6);
            let n = r.random_range(1..=3);
            (LayerNorm::new(w), spaced(r, &[n, w]))
        },
        always,
        |m, t, x| m.forward(t, x),
    ));
    out.push(module_suite(
        "batch_norm_eval",
        trials,
        seed + 4,
        |r| {
            let s = shape4(r, 4, 4);
            (BatchNorm2d::new(s[1]), uniform(r, &s, -1.0, 1.0))
        },
        always,
        |m, t, x| m.forward_eval(t, x),
    ));
    out.push(module_suite(
        "mlp2",
        trials,
        seed + 5,
        |r| {
            let c = r.random_range(2..=8);
            let ratio = r.random_range(1..=2);
            (Mlp2::new(r, c, ratio), uniform(r, &[2, c, 1, 1], -1.0, 1.0))
        },
        mlp_smooth,
        |m, t, x| m.forward(t, x),
    ));
    out.push(module_suite(
        "se",
        trials,
        seed + 6,
        |r| {
            let s = shape4(r, 8, 4);
            let ratio = r.random_range(1..=4);
            (SeModule::new(r, s[1], ratio), spaced(r, &s))
        },
        se_smooth,
        |m, t, x| m.forward(t, x),
    ));
    for shared in [true, false] {
        out.push(module_suite(
            if shared { "cbam" } else { "cbam_unshared" },
            trials,
            seed + 7 + shared as u64,
            |r| {
                let s = shape4(r, 6, 4);
                let ratio = r.random_range(1..=3);
                (CbamModule::new(r, s[1], ratio, shared), spaced(r, &s))
            },
            cbam_smooth,
            |m, t, x| m.forward(t, x),
        ));
    }
    out.push(module_suite(
        "gc",
        trials,
        seed + 9,
        |r| {
            let mut s = shape4(r, 8, 4);
            s[1] = s[1].max(4);
            (GcModule::new(r, s[1], 2), uniform(r, &s, -1.0, 1.0))
        },
        gc_smooth,
        |m, t, x| m.forward(t, x),
    ));
    out
}

//! Central finite-difference checks of tape gradients.
//!
//! The scalar checked is `sum(out ⊙ R)` for a fixed random `R`, so every
//! output element contributes with a distinct weight.

use rand::Rng as _;

use crate::error::Result;
use crate::nn::seeded_rng;
use crate::param::Module;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;

/// Denominator floor. Central differences carry roundoff near
/// `1e-16 / STEP`, so a gradient that is exactly zero (a softmax shift, say)
/// would otherwise score a relative error of one.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a − n‖ / max(‖a‖, ‖n‖, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl Check {
    pub fn rel_error(&self) -> f64 {
        relative_error(&self.analytic, &self.numeric)
    }
}

fn projection(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = seeded_rng(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn projected(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks the gradient of `f` with respect to each of `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], seed: u64, f: F) -> Result<Vec<Check>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Tensor], r: Option<&Tensor>| -> Result<(Tensor, Option<Vec<Tensor>>)> {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.input(v.clone())).collect();
        let out = f(&tape, &vars)?;
        let Some(r) = r else { return Ok((out.value(), None)) };
        let loss = out.mul(tape.constant(r.clone()))?.sum();
        let grads = tape.backward(loss)?;
        let g = vars.iter().map(|&v| grads.wrt(v).cloned()).collect::<Result<Vec<_>>>()?;
        Ok((out.value(), Some(g)))
    };
    let (out, _) = eval(inputs, None)?;
    let r = projection(out.shape(), seed)?;
    let (_, analytic) = eval(inputs, Some(&r))?;
    let analytic = analytic.expect("requested");
    let mut checks = Vec::with_capacity(inputs.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for k in 0..inputs[i].len() {
            let mut shifted = inputs.to_vec();
            let base = inputs[i].data()[k];
            shifted[i].data_mut()[k] = base + STEP;
            let plus = projected(&eval(&shifted, None)?.0, &r);
            shifted[i].data_mut()[k] = base - STEP;
            let minus = projected(&eval(&shifted, None)?.0, &r);
            numeric.push((plus - minus) / (2.0 * STEP));
        }
        checks.push(Check { name: format!("input{i}"), analytic: a.data().to_vec(), numeric });
    }
    Ok(checks)
}

/// Checks the gradient of `f` with respect to its input and to every
/// trainable parameter of `module`. Returns one check per tensor, the input
/// first.
pub fn check_module<M, F>(module: &mut M, input: &Tensor, seed: u64, f: F) -> Result<Vec<Check>>
where
    M: Module<f64>,
    F: for<'t> Fn(&M, &'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let value_of = |m: &M, x: &Tensor| -> Result<Tensor> {
        let tape = Tape::new();
        Ok(f(m, &tape, tape.constant(x.clone()))?.value())
    };
    let r = projection(value_of(module, input)?.shape(), seed)?;

    let tape = Tape::new();
    let x = tape.input(input.clone());
    let out = f(module, &tape, x)?;
    let grads = tape.backward(out.mul(tape.constant(r.clone()))?.sum())?;
    let mut checks = vec![Check {
        name: "input".into(),
        analytic: grads.wrt(x)?.data().to_vec(),
        numeric: Vec::new(),
    }];
    for (name, p) in module.named_params() {
        if p.is_trainable() {
            let analytic = match grads.param(p.id()) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; p.value().len()],
            };
            checks.push(Check { name, analytic, numeric: Vec::new() });
        }
    }

    let mut shifted = input.clone();
    for k in 0..input.len() {
        let base = input.data()[k];
        shifted.data_mut()[k] = base + STEP;
        let plus = projected(&value_of(module, &shifted)?, &r);
        shifted.data_mut()[k] = base - STEP;
        let minus = projected(&value_of(module, &shifted)?, &r);
        shifted.data_mut()[k] = base;
        checks[0].numeric.push((plus - minus) / (2.0 * STEP));
    }
    for c in checks.iter_mut().skip(1) {
        for k in 0..c.analytic.len() {
            let nudge = |m: &mut M, delta: f64| {
                m.visit_mut("", &mut |name, p| {
                    if name == c.name {
                        p.value_mut()[k] += delta;
                    }
                })
            };
            nudge(module, STEP);
            let plus = projected(&value_of(module, input)?, &r);
            nudge(module, -2.0 * STEP);
            let minus = projected(&value_of(module, input)?, &r);
            nudge(module, STEP);
            c.numeric.push((plus - minus) / (2.0 * STEP));
        }
    }
    Ok(checks)
}

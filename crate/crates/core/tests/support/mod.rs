//! Shared by the core integration tests and the acceptance target.
#![allow(dead_code)]

pub mod cam;
pub mod metrics;
pub mod oracles;
pub mod pipeline;
pub mod trials;

use attnbench::nn::{seeded_rng, Rng};
use attnbench::{Module, Tensor};
use rand::Rng as _;
use std::fs;
use std::path::Path;

pub fn rng(seed: u64) -> Rng {
    seeded_rng(seed)
}

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
}

/// Values at least 0.04 apart in random order, so max-style selections are
/// stable under a 1e-4 perturbation.
pub fn spaced(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    let data = ranks
        .iter()
        .map(|&r| (r as f64 - n as f64 / 2.0) * 0.05 + rng.random_range(0.0..0.01))
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Magnitudes in [0.05, 1) with random signs, away from the ReLU kink.
pub fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
    .unwrap()
}

/// Every trainable tensor uniform in [-1, 1]; buffers stay valid statistics.
pub fn randomize<M: Module<f64>>(m: &mut M, rng: &mut Rng) {
    m.visit_mut("", &mut |name, p| {
        let (lo, hi) = if p.is_trainable() {
            (-1.0, 1.0)
        } else if name.ends_with("running_var") {
            (0.5, 1.5)
        } else {
            (-0.5, 0.5)
        };
        for v in p.value_mut() {
            *v = rng.random_range(lo..hi);
        }
    });
}

/// A valid 1×1 grayscale PNG.
pub const PNG_1X1: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x60, 0x00, 0x00, 0x00, 0x02, 0x00, 0x01, 0x48, 0xaf, 0xa4, 0x71, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

/// `root/<class>/<index>.png` for each `(class, count)`.
pub fn class_tree(root: &Path, counts: [(&str, usize); 2]) {
    for (class, n) in counts {
        fs::create_dir_all(root.join(class)).unwrap();
        for i in 0..n {
            fs::write(root.join(class).join(format!("{i:05}.png")), PNG_1X1).unwrap();
        }
    }
}

//! Scalar Grad-CAM reference.

use attnbench::gradcam::{normalize_map, raw_map};
use rand::Rng as _;

use super::rng;

/// Weighted sum, clamp and min-max scaling written out element by element.
pub fn heatmap_oracle(features: &[f64], grads: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut weights = vec![0.0; c];
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                weights[k] += grads[(k * h + y) * w + x];
            }
        }
        weights[k] /= (h * w) as f64;
    }
    let mut map = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in 0..c {
                s += weights[k] * features[(k * h + y) * w + x];
            }
            map[y * w + x] = if s > 0.0 { s } else { 0.0 };
        }
    }
    let (mut lo, mut hi) = (map[0], map[0]);
    for &v in &map {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        map.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        map.iter_mut().for_each(|v| *v = 0.0);
    }
    map
}

/// Largest deviation from the oracle over random 2-channel 2×2 cases plus
/// random small shapes.
pub fn toy_disagreement(trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let (c, h, w) = if t % 2 == 0 { (2, 2, 2) } else { (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4)) };
        let n = c * h * w;
        let a: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut got = raw_map(&a, &g, c);
        normalize_map(&mut got);
        for (x, y) in got.iter().zip(heatmap_oracle(&a, &g, c, h, w)) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

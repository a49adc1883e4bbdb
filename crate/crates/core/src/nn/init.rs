use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Real;
use crate::tensor::Tensor;

/// The generator every initializer and shuffler draws from.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// He (Kaiming) normal initialization in fan-in mode: N(0, sqrt(2 / fan_in)).
pub fn he_normal<T: Real>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive standard deviation");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(shape, data).expect("initializer shapes are positive")
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimization settings. Defaults follow the 100-epoch protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    /// Fractions of `epochs` at which the rate is multiplied by `decay_factor`.
    pub decay_points: Vec<f64>,
    /// One training run per seed.
    pub seeds: Vec<u64>,
    /// Draw a fresh train/validation split for each seed instead of one fixed split.
    pub resplit_per_run: bool,
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr0: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_factor: 0.1,
            decay_points: vec![0.3, 0.6, 0.9],
            seeds: vec![0, 1, 2],
            resplit_per_run: false,
            hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("train.{key}: {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0", "must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be a finite non-negative number");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor", "must be in (0, 1]");
        }
        if self.decay_points.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return bad("decay_points", "each point must lie in (0, 1)");
        }
        if self.decay_points.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay_points", "must be strictly increasing");
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        Ok(())
    }

    /// Epochs at which the rate drops: `floor(p · epochs)` for each point.
    pub fn decay_epochs(&self) -> Vec<usize> {
        self.decay_points.iter().map(|p| (p * self.epochs as f64).floor() as usize).collect()
    }
}

/// `lr0 · decay_factor^(decay epochs already reached)`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.decay_epochs().into_iter().filter(|&d| epoch >= d).count();
    config.lr0 * config.decay_factor.powi(passed as i32)
}

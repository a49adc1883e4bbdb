//! Epoch-wise batching and batch assembly.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::imaging::{load_image, Normalization};
use crate::data::manifest::{DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Batch {
    /// N×3×S×S, normalized.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index groups covering `0..n` exactly once, shuffled when `shuffle_seed` is set.
pub fn batch_plan(n: usize, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Config("cannot batch an empty split".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut seeded_rng(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// The training split is reshuffled from `epoch_seed`; validation keeps manifest order.
pub fn batches(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Vec<&Sample>>> {
    let samples: Vec<&Sample> = manifest.split(split).collect();
    let seed = (split == Split::Train).then_some(epoch_seed);
    let plan = batch_plan(samples.len(), batch_size, seed)
        .map_err(|e| Error::Config(format!("{} split: {e}", split.key())))?;
    Ok(plan.into_iter().map(|idx| idx.into_iter().map(|i| samples[i]).collect()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodePolicy {
    /// Log a warning and leave the sample out of its batch.
    Skip,
    Abort,
}

#[derive(Clone, Debug)]
pub struct Loader {
    pub size: usize,
    pub norm: Normalization,
    pub on_error: DecodePolicy,
}

impl Loader {
    /// Decodes `samples` into one batch. `flip_seed` enables random
    /// horizontal flips. Returns `None` if every sample was skipped.
    pub fn load(&self, manifest: &DatasetManifest, samples: &[&Sample], flip_seed: Option<u64>) -> Result<Option<Batch>> {
        let mut flips = flip_seed.map(seeded_rng);
        let mut images = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        let mut ids = Vec::with_capacity(samples.len());
        for s in samples {
            let flip = flips.as_mut().is_some_and(|r| r.random_bool(0.5));
            let img = match load_image(&manifest.path_of(s), self.size, &self.norm) {
                Ok(img) => img,
                Err(e @ Error::Decode { .. }) if self.on_error == DecodePolicy::Skip => {
                    log::warn!("skipping {}: {e}", s.relative_path);
                    continue;
                }
                Err(e) => return Err(e),
            };
            images.push(if flip { hflip(&img) } else { img });
            labels.push(s.label);
            ids.push(s.id.clone());
        }
        if images.is_empty() {
            return Ok(None);
        }
        Ok(Some(Batch { images: Tensor::stack(&images)?, labels, ids }))
    }
}

/// Mirrors the last axis.
pub fn hflip(t: &Tensor) -> Tensor {
    let w = *t.shape().last().expect("rank ≥ 1");
    let src = t.data();
    Tensor::from_fn(t.shape(), |i| {
        let off: usize = i.iter().zip(t.shape()).fold(0, |a, (&x, &e)| a * e + x);
        src[off - i[i.len() - 1] + (w - 1 - i[i.len() - 1])]
    })
    .expect("same shape")
}

//! Corpus ingestion: scanning, stratified splitting, decoding and batching.

mod batch;
mod imaging;
mod manifest;
pub mod synthetic;

pub use batch::{batch_plan, batches, hflip, Batch, DecodePolicy, Loader};
pub use imaging::{decode_rgb, load_image, resize_bilinear, to_planes, Normalization};
pub use manifest::{scan_and_split, DatasetManifest, Sample, Split, EXTENSIONS, TRAIN_FRACTION};

use crate::error::{Error, Result};

/// Per-channel mean and standard deviation of the resized, [0, 1]-scaled
/// training images. Undecodable files are an error here regardless of policy.
pub fn training_statistics(manifest: &DatasetManifest, size: usize) -> Result<Normalization> {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    let mut count = 0usize;
    for s in manifest.split(Split::Train) {
        let img = resize_bilinear(&to_planes(&decode_rgb(&manifest.path_of(s))?), size, size)?;
        let plane = size * size;
        for (i, v) in img.data().iter().enumerate() {
            let c = i / plane;
            sum[c] += v;
            sq[c] += v * v;
        }
        count += plane;
    }
    if count == 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let n = count as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0.0; 3];
    for c in 0..3 {
        // A constant channel would divide by zero; fall back to unit scale.
        let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
        std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
    }
    Ok(Normalization { mean, std })
}

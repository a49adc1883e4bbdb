//! Small end-to-end runs on the synthetic disc-vs-blank corpus.

use std::path::Path;

use attnbench::attention::AttentionKind;
use attnbench::data::synthetic::{generate, SyntheticSpec, POSITIVE};
use attnbench::data::{scan_and_split, DatasetManifest, DecodePolicy, Loader, Normalization, TRAIN_FRACTION};
use attnbench::train::{fit, EpochRecord, TrainConfig};
use attnbench::{build_resnet18, Module, ModelSpec, ResNet};

pub fn corpus(dir: &Path, per_class: usize, side: usize) -> DatasetManifest {
    generate(dir, &SyntheticSpec { per_class, side: side as u32, seed: 7 }).unwrap();
    scan_and_split(dir, 0, TRAIN_FRACTION, Some(POSITIVE)).unwrap()
}

pub fn loader(side: usize) -> Loader {
    Loader { size: side, norm: Normalization::default(), on_error: DecodePolicy::Abort }
}

pub fn train(
    manifest: &DatasetManifest,
    side: usize,
    kind: AttentionKind,
    width_divisor: usize,
    config: &TrainConfig,
    seed: u64,
) -> (ResNet, Vec<EpochRecord>) {
    let mut model = build_resnet18::<f64>(&ModelSpec::new(kind).with_width_divisor(width_divisor), seed).unwrap();
    let log = fit(&mut model, manifest, &loader(side), config, seed, &mut |_| {}).unwrap();
    (model, log)
}

/// Every parameter and buffer value as raw bits, in visitation order.
pub fn fingerprint(model: &ResNet) -> Vec<u64> {
    model.named_params().into_iter().flat_map(|(_, p)| p.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

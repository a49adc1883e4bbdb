use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backbone::ResNet;
use crate::data::{batches, Batch, DatasetManifest, Loader, Split};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::param::Module;
use crate::scalar::Real;
use crate::tape::Tape;
use crate::train::auc::auc_roc;
use crate::train::loss::{cross_entropy, positive_probabilities};
use crate::train::schedule::{lr_at, TrainConfig};
use crate::train::sgd::Sgd;

/// SplitMix64 finalizer over `(seed, stream, index)`; gives independent,
/// reproducible seeds for shuffles, flips and resplits.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const SHUFFLE_STREAM: u64 = 1;
pub(crate) const FLIP_STREAM: u64 = 2;
pub(crate) const SPLIT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean loss over the epoch.
    pub train_loss: f64,
    pub val_auc: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,train_loss,val_auc";

pub fn write_epoch_log<W: Write>(log: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPOCH_LOG_HEADER.split(',')).map_err(csv_error)?;
    for r in log {
        w.write_record([r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string(), r.val_auc.to_string()])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Validation predictions of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    /// `softmax(logits)[1]` per sample.
    pub scores: Vec<f64>,
    pub auc: f64,
}

fn load_batch<T: Real>(loader: &Loader, manifest: &DatasetManifest, samples: &[&crate::data::Sample], flip: Option<u64>) -> Result<Option<(crate::tensor::Tensor<T>, Batch)>> {
    Ok(loader.load(manifest, samples, flip)?.map(|b| (b.images.cast::<T>(), b)))
}

/// Eval-mode predictions over one split, in manifest order.
pub fn evaluate<T: Real>(model: &ResNet<T>, manifest: &DatasetManifest, loader: &Loader, split: Split, batch_size: usize) -> Result<Evaluation> {
    let mut ev = Evaluation { ids: Vec::new(), labels: Vec::new(), scores: Vec::new(), auc: f64::NAN };
    for group in batches(manifest, split, batch_size, 0)? {
        let Some((images, batch)) = load_batch::<T>(loader, manifest, &group, None)? else { continue };
        let tape = Tape::new();
        let logits = model.forward_eval(&tape, tape.constant(images))?.value();
        ev.scores.extend(positive_probabilities(&logits));
        ev.labels.extend(batch.labels);
        ev.ids.extend(batch.ids);
    }
    ev.auc = auc_roc(&ev.scores, &ev.labels).map_err(|e| Error::Evaluation(format!("{} split: {e}", split.key())))?;
    Ok(ev)
}

/// Trains `model` in place for `config.epochs` epochs and returns one record
/// per epoch. `on_epoch` sees each record as soon as it is complete.
pub fn fit<T: Real>(
    model: &mut ResNet<T>,
    manifest: &DatasetManifest,
    loader: &Loader,
    config: &TrainConfig,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    let mut opt = Sgd::<T>::new(config.momentum, config.weight_decay);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let groups = batches(manifest, Split::Train, config.batch_size, derive_seed(seed, SHUFFLE_STREAM, epoch as u64))?;
        for (b, group) in groups.iter().enumerate() {
            let flip = config.hflip.then(|| derive_seed(seed, FLIP_STREAM, (epoch * groups.len() + b) as u64));
            let Some((images, batch)) = load_batch::<T>(loader, manifest, group, flip)? else { continue };
            let tape = Tape::new();
            let logits = model.forward(&tape, tape.constant(images), Mode::Train)?;
            let loss = cross_entropy(logits, &batch.labels)?;
            let value = loss.value().data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss: value });
            }
            let grads = tape.backward(loss)?;
            model.zero_grads();
            model.accumulate_grads(&grads);
            opt.step(model, lr);
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(Error::Ingestion(format!("epoch {epoch}: every training image failed to decode")));
        }
        let val_auc = evaluate(model, manifest, loader, Split::Validation, config.batch_size)?.auc;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / seen as f64, val_auc };
        log::info!("epoch {epoch}: lr {lr:e}, loss {:.6}, val auc {val_auc:.4}", record.train_loss);
        on_epoch(&record);
        log.push(record);
    }
    model.zero_grads();
    Ok(log)
}

use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::backbone::{build_resnet18, ModelSpec, ResNet};
use crate::data::{scan_and_split, DatasetManifest, Loader};
use crate::error::{Error, Result};
use crate::train::fit::{derive_seed, fit, EpochRecord, SPLIT_STREAM};
use crate::train::schedule::TrainConfig;

/// Everything needed to train and score each model kind once per seed.
#[derive(Clone, Debug)]
pub struct Experiment {
    /// Architecture shared by every row; its `attention` field is overridden per kind.
    pub model: ModelSpec,
    pub kinds: Vec<AttentionKind>,
    pub train: TrainConfig,
    pub loader: Loader,
    pub manifest: DatasetManifest,
}

/// Outcome of one seeded training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: AttentionKind,
    pub seed: u64,
    /// Validation AUC-ROC of the final-epoch model.
    pub val_auc: f64,
    pub epochs: Vec<EpochRecord>,
}

impl Experiment {
    /// Kinds in report order with the baseline always present.
    pub fn kinds(&self) -> Vec<AttentionKind> {
        let mut kinds = self.kinds.clone();
        kinds.push(AttentionKind::None);
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// The split used for `seed`: the fixed manifest, or a fresh draw when
    /// `resplit_per_run` is set.
    pub fn manifest_for(&self, seed: u64) -> Result<DatasetManifest> {
        if !self.train.resplit_per_run {
            return Ok(self.manifest.clone());
        }
        let m = &self.manifest;
        scan_and_split(&m.root, derive_seed(m.split_seed, SPLIT_STREAM, seed), m.fraction, Some(&m.classes[1]))
    }

    /// Trains one model. The initial weights depend on `seed` only, so every
    /// kind starts from the same backbone.
    pub fn run(&self, kind: AttentionKind, seed: u64) -> Result<(RunRecord, ResNet)> {
        let manifest = self.manifest_for(seed)?;
        let spec = ModelSpec { attention: kind, ..self.model };
        let mut model = build_resnet18::<f64>(&spec, seed)?;
        let epochs = fit(&mut model, &manifest, &self.loader, &self.train, seed, &mut |_| {})?;
        let val_auc = epochs.last().expect("at least one epoch").val_auc;
        Ok((RunRecord { kind, seed, val_auc, epochs }, model))
    }

    /// Runs every kind for every seed, in kind then seed order, handing each
    /// finished run to `on_run` before starting the next.
    pub fn run_all(&self, on_run: &mut dyn FnMut(&RunRecord, &ResNet) -> Result<()>) -> Result<Vec<EvalReport>> {
        self.train.validate()?;
        let mut runs = Vec::new();
        for kind in self.kinds() {
            for &seed in &self.train.seeds {
                let (record, model) = self.run(kind, seed)?;
                on_run(&record, &model)?;
                runs.push(record);
            }
        }
        summarize(&runs)
    }
}

/// Results of one model kind across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: AttentionKind,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub mean: f64,
    /// `mean − baseline mean`.
    pub delta: f64,
}

/// Groups runs by kind (report order) keeping seed order within each kind.
/// Fails unless the baseline is present and every kind covers the same seeds.
pub fn summarize(runs: &[RunRecord]) -> Result<Vec<EvalReport>> {
    let mut kinds: Vec<AttentionKind> = runs.iter().map(|r| r.kind).collect();
    kinds.sort();
    kinds.dedup();
    if kinds.first() != Some(&AttentionKind::None) {
        return Err(Error::Evaluation("report needs baseline runs for the delta column".into()));
    }
    let mut reports: Vec<EvalReport> = kinds
        .into_iter()
        .map(|kind| {
            let mut mine: Vec<&RunRecord> = runs.iter().filter(|r| r.kind == kind).collect();
            mine.sort_by_key(|r| r.seed);
            let aucs: Vec<f64> = mine.iter().map(|r| r.val_auc).collect();
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            EvalReport { kind, seeds: mine.iter().map(|r| r.seed).collect(), aucs, mean, delta: 0.0 }
        })
        .collect();
    let baseline = reports[0].clone();
    for r in &mut reports {
        if r.seeds != baseline.seeds {
            return Err(Error::Evaluation(format!(
                "{} ran seeds {:?} but the baseline ran {:?}",
                r.kind, r.seeds, baseline.seeds
            )));
        }
        if let Some(bad) = r.aucs.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Evaluation(format!("{}: AUC {bad} outside [0, 1]", r.kind)));
        }
        r.delta = r.mean - baseline.mean;
    }
    Ok(reports)
}

//! What each subcommand does once its configuration is validated.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use attnbench::attention::AttentionKind;
use attnbench::checkpoint;
use attnbench::data::{scan_and_split, training_statistics, DatasetManifest, Loader, Split, TRAIN_FRACTION};
use attnbench::gradcam::{make_panel, write_panel_index, Panel, PanelOptions};
use attnbench::nn::seeded_rng;
use attnbench::train::{evaluate, report, summarize, write_epoch_log, EvalReport, Evaluation, Experiment, RunRecord};
use attnbench::ResNet;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, NormalizationMode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Other(_) => 1,
        }
    }
}

impl From<attnbench::Error> for CliError {
    fn from(e: attnbench::Error) -> Self {
        match e {
            attnbench::Error::Config(m) => CliError::Config(ConfigError { key: "config".into(), message: m }),
            other => CliError::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const EPOCH_LOG: &str = "epochs.csv";

/// Persisted outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub record: RunRecord,
}

pub fn run_dir(output: &Path, kind: AttentionKind, seed: u64) -> PathBuf {
    output.join("runs").join(kind.key()).join(format!("seed-{seed}"))
}

/// Scans and splits the dataset and builds the loader, without writing anything.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(DatasetManifest, Loader)> {
    cfg.validate(true)?;
    let root = cfg.dataset.root.as_deref().expect("validated");
    let manifest = scan_and_split(root, cfg.dataset.split_seed, TRAIN_FRACTION, cfg.dataset.positive_class.as_deref())
        .map_err(|e| match e {
            attnbench::Error::Config(m) => CliError::Config(ConfigError { key: "dataset.positive_class".into(), message: m }),
            other => other.into(),
        })?;
    let norm = match cfg.dataset.normalization {
        NormalizationMode::Fixed => cfg.fixed_normalization(),
        NormalizationMode::Statistics => training_statistics(&manifest, cfg.dataset.resize)?,
    };
    let loader = Loader { size: cfg.dataset.resize, norm, on_error: cfg.dataset.on_decode_error };
    Ok((manifest, loader))
}

/// Trains every configured kind for every seed and writes, per run,
/// `runs/<kind>/seed-<s>/{run.json, epochs.csv, model.ckpt}`.
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<RunFile>> {
    let (manifest, loader) = prepare(cfg)?;
    let experiment = Experiment {
        model: cfg.model_spec(AttentionKind::None),
        kinds: cfg.model.attention.clone(),
        train: cfg.train.clone(),
        loader,
        manifest,
    };
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    fs::write(cfg.output.join("config.cfg"), cfg.serialize()).context("writing config.cfg")?;
    experiment.manifest.write_csv(&cfg.output.join("manifest.csv"))?;
    let hash = cfg.protocol_hash();
    let mut runs = Vec::new();
    for &kind in &cfg.model.attention {
        for &seed in &cfg.train.seeds {
            log::info!("training {kind} with seed {seed}");
            let (record, model) = experiment.run(kind, seed)?;
            let dir = run_dir(&cfg.output, kind, seed);
            fs::create_dir_all(&dir)?;
            write_epoch_log(&record.epochs, fs::File::create(dir.join(EPOCH_LOG))?)?;
            checkpoint::save(&model, &model.spec, &dir.join(CHECKPOINT_FILE))?;
            let file = RunFile { config_hash: hash.clone(), record };
            fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(&file).context("serializing run")? + "\n")?;
            println!("{kind} seed {seed}: validation AUC-ROC {:.4}", file.record.val_auc);
            runs.push(file);
        }
    }
    Ok(runs)
}

/// Scores a checkpoint on the validation split; optionally writes
/// `id,label,score` rows.
pub fn eval(cfg: &ExperimentConfig, checkpoint_path: &Path, scores: Option<&Path>) -> Result<Evaluation> {
    let (manifest, loader) = prepare(cfg)?;
    if !checkpoint_path.is_file() {
        return Err(ConfigError { key: "--checkpoint".into(), message: format!("`{}` not found", checkpoint_path.display()) }.into());
    }
    let model: ResNet = checkpoint::load_resnet(checkpoint_path)?;
    let ev = evaluate(&model, &manifest, &loader, Split::Validation, cfg.train.batch_size)?;
    if let Some(path) = scores {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["id", "label", "score"]).context("writing scores")?;
        for ((id, label), score) in ev.ids.iter().zip(&ev.labels).zip(&ev.scores) {
            w.write_record([id.clone(), label.to_string(), score.to_string()]).context("writing scores")?;
        }
        w.flush()?;
    }
    println!("{}: validation AUC-ROC {:.4} over {} images", model.spec.attention, ev.auc, ev.scores.len());
    Ok(ev)
}

/// Renders panels for `gradcam.samples` validation images using the
/// `gradcam.run_seed` checkpoints of every configured kind under `runs`.
pub fn gradcam(cfg: &ExperimentConfig, runs: &Path) -> Result<Vec<Panel>> {
    let (manifest, loader) = prepare(cfg)?;
    let mut models = Vec::new();
    for &kind in &cfg.model.attention {
        let path = run_dir(runs, kind, cfg.gradcam.run_seed).join(CHECKPOINT_FILE);
        if !path.is_file() {
            return Err(anyhow::anyhow!("missing checkpoint {}", path.display()).into());
        }
        let model: ResNet = checkpoint::load_resnet(&path)?;
        models.push((kind, model));
    }
    let refs: Vec<(&str, &ResNet)> = models.iter().map(|(k, m)| (k.label(), m)).collect();
    let mut pool: Vec<_> = manifest.split(Split::Validation).collect();
    pool.shuffle(&mut seeded_rng(cfg.gradcam.selection_seed));
    pool.truncate(cfg.gradcam.samples);
    let index = cfg.panels_path();
    let out = attnbench::gradcam::panel_dir(&index);
    let options = PanelOptions {
        size: cfg.dataset.resize,
        norm: loader.norm,
        target: cfg.gradcam.target,
        alpha: cfg.gradcam.alpha,
    };
    let panels = pool
        .into_iter()
        .map(|s| make_panel(&manifest, s, &refs, &options, &out))
        .collect::<attnbench::Result<Vec<_>>>()?;
    write_panel_index(&panels, &index)?;
    println!("wrote {} panels to {}", panels.len(), index.display());
    Ok(panels)
}

/// Every `run.json` under `<dir>/runs` (or `dir` itself), sorted by path.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunFile>> {
    let root = if dir.join("runs").is_dir() { dir.join("runs") } else { dir.to_path_buf() };
    let mut paths = Vec::new();
    for kind in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
        let kind = kind?.path();
        if !kind.is_dir() {
            continue;
        }
        for seed in fs::read_dir(&kind)? {
            let file = seed?.path().join(RUN_FILE);
            if file.is_file() {
                paths.push(file);
            }
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(anyhow::anyhow!("no {RUN_FILE} files under {}", root.display()).into());
    }
    paths
        .iter()
        .map(|p| -> Result<RunFile> {
            let text = fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        })
        .collect()
}

pub struct ReportOutput {
    pub reports: Vec<EvalReport>,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Merges persisted runs into `report.csv` and `report.json` in `out`.
pub fn report(runs_dir: &Path, out: &Path) -> Result<ReportOutput> {
    let files = collect_runs(runs_dir)?;
    let hash = files[0].config_hash.clone();
    if let Some(other) = files.iter().find(|f| f.config_hash != hash) {
        return Err(anyhow::anyhow!(
            "runs were trained under different settings ({} vs {}); regenerate them with one configuration",
            hash,
            other.config_hash
        )
        .into());
    }
    let records: Vec<RunRecord> = files.into_iter().map(|f| f.record).collect();
    let reports = summarize(&records)?;
    fs::create_dir_all(out)?;
    let csv = out.join("report.csv");
    let json = out.join("report.json");
    fs::write(&csv, report::to_csv(&reports)?)?;
    fs::write(&json, report::to_json(&reports, &hash)?)?;
    print!("{}", report::to_markdown(&reports));
    Ok(ReportOutput { reports, csv, json })
}

//! Experiment configuration: a plain-text file of `section.key = value`
//! lines, `#` comments, blank lines ignored. Every key has a default;
//! flags override the file. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use attnbench::attention::AttentionKind;
use attnbench::data::{DecodePolicy, Normalization};
use attnbench::gradcam::Target;
use attnbench::train::TrainConfig;
use attnbench::ModelSpec;
use sha2::{Digest, Sha256};

/// A configuration problem tied to one key. The CLI exits with status 2.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn fail<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { key: key.to_string(), message: message.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizationMode {
    /// `dataset.mean` / `dataset.std` as given.
    Fixed,
    /// Per-channel statistics of the training split.
    Statistics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub root: Option<PathBuf>,
    pub resize: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub normalization: NormalizationMode,
    pub split_seed: u64,
    /// Directory name of the positive class; the second in sorted order when unset.
    pub positive_class: Option<String>,
    pub on_decode_error: DecodePolicy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Kinds trained by `train`; also the models shown in Grad-CAM panels.
    pub attention: Vec<AttentionKind>,
    pub reduction: usize,
    pub width_divisor: usize,
    pub cbam_shared_mlp: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcamConfig {
    pub samples: usize,
    pub target: Target,
    pub alpha: f64,
    /// Training seed whose checkpoints are visualized.
    pub run_seed: u64,
    /// Seed for choosing which validation samples get panels.
    pub selection_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReviewConfig {
    pub port: u16,
    pub seed: u64,
    pub visible_probabilities: bool,
    /// Defaults to `<output.dir>/panels/panels.jsonl`.
    pub panels: Option<PathBuf>,
    /// Defaults to `<output.dir>/review/choices.jsonl`.
    pub store: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub output: PathBuf,
    pub gradcam: GradcamConfig,
    pub review: ReviewConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        Self {
            dataset: DatasetConfig {
                root: None,
                resize: 224,
                mean: [0.5; 3],
                std: [0.5; 3],
                normalization: NormalizationMode::Fixed,
                split_seed: 0,
                positive_class: None,
                on_decode_error: DecodePolicy::Skip,
            },
            model: ModelConfig {
                attention: AttentionKind::ALL.to_vec(),
                reduction: spec.reduction,
                width_divisor: spec.width_divisor,
                cbam_shared_mlp: spec.cbam_shared_mlp,
            },
            train: TrainConfig::default(),
            output: PathBuf::from("out"),
            gradcam: GradcamConfig {
                samples: 6,
                target: Target::GroundTruth,
                alpha: attnbench::gradcam::DEFAULT_ALPHA,
                run_seed: 0,
                selection_seed: 0,
            },
            review: ReviewConfig { port: 8080, seed: 0, visible_probabilities: false, panels: None, store: None },
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn integer<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().or_else(|_| fail(key, format!("expected a non-negative integer, got `{v}`")))
}

fn real(key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => fail(key, format!("expected a finite number, got `{v}`")),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => fail(key, format!("expected `true` or `false`, got `{v}`")),
    }
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(key, s.trim())).collect()
}

fn triple(key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let xs = list(key, v, real)?;
    match xs.len() {
        1 => Ok([xs[0]; 3]),
        3 => Ok([xs[0], xs[1], xs[2]]),
        _ => fail(key, format!("expected one or three comma-separated numbers, got `{v}`")),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

pub fn parse_kind(key: &str, v: &str) -> Result<AttentionKind, ConfigError> {
    AttentionKind::ALL
        .into_iter()
        .find(|k| k.key() == v)
        .map_or_else(|| fail(key, format!("unknown attention kind `{v}` (expected none, se, cbam or gc)")), Ok)
}

/// `all` or a comma-separated list; duplicates removed, report order kept.
pub fn parse_kinds(key: &str, v: &str) -> Result<Vec<AttentionKind>, ConfigError> {
    if v == "all" {
        return Ok(AttentionKind::ALL.to_vec());
    }
    let kinds: BTreeSet<AttentionKind> = list(key, v, parse_kind)?.into_iter().collect();
    if kinds.is_empty() {
        return fail(key, "at least one attention kind is required");
    }
    Ok(kinds.into_iter().collect())
}

impl ExperimentConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.dataset;
        let m = &self.model;
        let t = &self.train;
        let g = &self.gradcam;
        let r = &self.review;
        vec![
            ("dataset.root", path_or_empty(&d.root)),
            ("dataset.resize", d.resize.to_string()),
            ("dataset.mean", join(&d.mean)),
            ("dataset.std", join(&d.std)),
            ("dataset.normalization", match d.normalization {
                NormalizationMode::Fixed => "fixed".into(),
                NormalizationMode::Statistics => "statistics".into(),
            }),
            ("dataset.split_seed", d.split_seed.to_string()),
            ("dataset.positive_class", d.positive_class.clone().unwrap_or_default()),
            ("dataset.on_decode_error", match d.on_decode_error {
                DecodePolicy::Skip => "skip".into(),
                DecodePolicy::Abort => "abort".into(),
            }),
            ("model.attention", join(&m.attention.iter().map(|k| k.key()).collect::<Vec<_>>())),
            ("model.reduction", m.reduction.to_string()),
            ("model.width_divisor", m.width_divisor.to_string()),
            ("model.cbam_shared_mlp", m.cbam_shared_mlp.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr0", t.lr0.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.decay_factor", t.decay_factor.to_string()),
            ("train.decay_points", join(&t.decay_points)),
            ("train.seeds", join(&t.seeds)),
            ("train.resplit_per_run", t.resplit_per_run.to_string()),
            ("train.hflip", t.hflip.to_string()),
            ("output.dir", self.output.display().to_string()),
            ("gradcam.samples", g.samples.to_string()),
            ("gradcam.target", match g.target {
                Target::GroundTruth => "ground_truth".into(),
                Target::Predicted => "predicted".into(),
            }),
            ("gradcam.alpha", g.alpha.to_string()),
            ("gradcam.run_seed", g.run_seed.to_string()),
            ("gradcam.selection_seed", g.selection_seed.to_string()),
            ("review.port", r.port.to_string()),
            ("review.seed", r.seed.to_string()),
            ("review.visible_probabilities", r.visible_probabilities.to_string()),
            ("review.panels", path_or_empty(&r.panels)),
            ("review.store", path_or_empty(&r.store)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let k = key;
        match key {
            "dataset.root" => self.dataset.root = optional_path(v),
            "dataset.resize" => self.dataset.resize = integer(k, v)?,
            "dataset.mean" => self.dataset.mean = triple(k, v)?,
            "dataset.std" => self.dataset.std = triple(k, v)?,
            "dataset.normalization" => {
                self.dataset.normalization = match v {
                    "fixed" => NormalizationMode::Fixed,
                    "statistics" => NormalizationMode::Statistics,
                    _ => return fail(k, format!("expected `fixed` or `statistics`, got `{v}`")),
                }
            }
            "dataset.split_seed" => self.dataset.split_seed = integer(k, v)?,
            "dataset.positive_class" => self.dataset.positive_class = (!v.is_empty()).then(|| v.to_string()),
            "dataset.on_decode_error" => {
                self.dataset.on_decode_error = match v {
                    "skip" => DecodePolicy::Skip,
                    "abort" => DecodePolicy::Abort,
                    _ => return fail(k, format!("expected `skip` or `abort`, got `{v}`")),
                }
            }
            "model.attention" => self.model.attention = parse_kinds(k, v)?,
            "model.reduction" => self.model.reduction = integer(k, v)?,
            "model.width_divisor" => self.model.width_divisor = integer(k, v)?,
            "model.cbam_shared_mlp" => self.model.cbam_shared_mlp = boolean(k, v)?,
            "train.epochs" => self.train.epochs = integer(k, v)?,
            "train.batch_size" => self.train.batch_size = integer(k, v)?,
            "train.lr0" => self.train.lr0 = real(k, v)?,
            "train.momentum" => self.train.momentum = real(k, v)?,
            "train.weight_decay" => self.train.weight_decay = real(k, v)?,
            "train.decay_factor" => self.train.decay_factor = real(k, v)?,
            "train.decay_points" => self.train.decay_points = list(k, v, real)?,
            "train.seeds" => self.train.seeds = list(k, v, integer)?,
            "train.resplit_per_run" => self.train.resplit_per_run = boolean(k, v)?,
            "train.hflip" => self.train.hflip = boolean(k, v)?,
            "output.dir" => {
                if v.is_empty() {
                    return fail(k, "must not be empty");
                }
                self.output = PathBuf::from(v)
            }
            "gradcam.samples" => self.gradcam.samples = integer(k, v)?,
            "gradcam.target" => {
                self.gradcam.target = match v {
                    "ground_truth" => Target::GroundTruth,
                    "predicted" => Target::Predicted,
                    _ => return fail(k, format!("expected `ground_truth` or `predicted`, got `{v}`")),
                }
            }
            "gradcam.alpha" => self.gradcam.alpha = real(k, v)?,
            "gradcam.run_seed" => self.gradcam.run_seed = integer(k, v)?,
            "gradcam.selection_seed" => self.gradcam.selection_seed = integer(k, v)?,
            "review.port" => self.review.port = integer(k, v)?,
            "review.seed" => self.review.seed = integer(k, v)?,
            "review.visible_probabilities" => self.review.visible_probabilities = boolean(k, v)?,
            "review.panels" => self.review.panels = optional_path(v),
            "review.store" => self.review.store = optional_path(v),
            _ => return fail(key, "unknown key"),
        }
        Ok(())
    }

    /// Applies a config file's text on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return fail(&format!("{origin}:{}", n + 1), format!("expected `key = value`, got `{line}`"));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return fail(key, format!("set twice in {origin}"));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), ConfigError> {
        for pair in pairs {
            let Some((key, value)) = pair.split_once('=') else {
                return fail(pair, "override must look like `key=value`");
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text, "config")?;
        Ok(c)
    }

    /// Canonical text form; `parse(serialize())` reproduces the config.
    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Checks every field. `needs_dataset` additionally requires an
    /// existing `dataset.root`.
    pub fn validate(&self, needs_dataset: bool) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if needs_dataset {
            match &d.root {
                None => return fail("dataset.root", "required"),
                Some(root) if !root.is_dir() => {
                    return fail("dataset.root", format!("`{}` is not a directory", root.display()))
                }
                _ => {}
            }
        }
        if d.resize < attnbench::backbone::MIN_INPUT_SIDE {
            return fail("dataset.resize", format!("must be at least {}", attnbench::backbone::MIN_INPUT_SIDE));
        }
        if d.std.iter().any(|&s| s <= 0.0) {
            return fail("dataset.std", "every entry must be positive");
        }
        if self.model.reduction == 0 {
            return fail("model.reduction", "must be at least 1");
        }
        if self.model.width_divisor == 0 {
            return fail("model.width_divisor", "must be at least 1");
        }
        if let Err(attnbench::Error::Config(msg)) = self.train.validate() {
            let (key, why) = msg.split_once(": ").unwrap_or(("train", &msg));
            return fail(key, why);
        }
        let mut seeds = self.train.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.train.seeds.len() {
            return fail("train.seeds", "seeds must be distinct");
        }
        if self.gradcam.samples == 0 {
            return fail("gradcam.samples", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.gradcam.alpha) {
            return fail("gradcam.alpha", "must be in [0, 1]");
        }
        Ok(())
    }

    pub fn model_spec(&self, attention: AttentionKind) -> ModelSpec {
        ModelSpec {
            attention,
            reduction: self.model.reduction,
            width_divisor: self.model.width_divisor,
            cbam_shared_mlp: self.model.cbam_shared_mlp,
        }
    }

    pub fn fixed_normalization(&self) -> Normalization {
        Normalization { mean: self.dataset.mean, std: self.dataset.std }
    }

    /// SHA-256 over the dataset, model and training settings, leaving out
    /// the attention kinds and seeds so that runs trained separately still
    /// merge into one report.
    pub fn protocol_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            let protocol = ["dataset.", "model.", "train."].iter().any(|p| k.starts_with(p));
            if protocol && k != "model.attention" && k != "train.seeds" {
                h.update(format!("{k} = {v}\n"));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn panels_path(&self) -> PathBuf {
        self.review.panels.clone().unwrap_or_else(|| self.output.join("panels").join(attnbench::gradcam::PANEL_INDEX))
    }

    pub fn store_path(&self) -> PathBuf {
        self.review.store.clone().unwrap_or_else(|| self.output.join("review").join("choices.jsonl"))
    }
}

/// Defaults, then the file (if any), then `overrides`.
pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut c = ExperimentConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .or_else(|e| fail("--config", format!("cannot read `{}`: {e}", path.display())))?;
        c.apply_text(&text, &path.display().to_string())?;
    }
    c.apply_overrides(overrides)?;
    Ok(c)
}

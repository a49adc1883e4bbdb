//! Directory-per-class corpora and their stratified train/validation split.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    /// Unique, filesystem-safe identifier derived from the relative path.
    pub id: String,
    /// Relative to the corpus root, `/`-separated.
    pub relative_path: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Indexed by label: `classes[1]` is the positive class.
    pub classes: [String; 2],
    pub split_seed: u64,
    pub fraction: f64,
    /// Train samples, then validation samples; each group ordered by class, then by split order.
    pub samples: Vec<Sample>,
}

fn sample_id(relative: &str) -> String {
    relative
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn class_dirs(root: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(root)
        .map_err(|e| Error::Ingestion(format!("cannot read corpus root {}: {e}", root.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn image_files(dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let ext = Path::new(&name).extension().map(|e| e.to_string_lossy().to_ascii_lowercase());
        if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            files.push(name);
        }
    }
    files.sort();
    Ok(files)
}

/// Scans `<root>/<class>/*.{png,jpg,jpeg}` and splits each class
/// separately: file names are sorted, shuffled with `seed`, and the first
/// `floor(fraction · n)` go to training.
///
/// Labels follow sorted directory order unless `positive_class` names the
/// directory that receives label 1.
pub fn scan_and_split(root: &Path, seed: u64, fraction: f64, positive_class: Option<&str>) -> Result<DatasetManifest> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let dirs = class_dirs(root)?;
    if dirs.len() != 2 {
        return Err(Error::Ingestion(format!(
            "{} must contain exactly two class directories, found {}: {dirs:?}",
            root.display(),
            dirs.len()
        )));
    }
    let mut classes = [dirs[0].clone(), dirs[1].clone()];
    if let Some(positive) = positive_class {
        match classes.iter().position(|c| c == positive) {
            Some(0) => classes.swap(0, 1),
            Some(_) => {}
            None => {
                return Err(Error::Config(format!(
                    "positive class {positive:?} is not one of the class directories {dirs:?}"
                )))
            }
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut rng = seeded_rng(seed);
    for (label, class) in classes.iter().enumerate() {
        let mut files = image_files(&root.join(class))?;
        if files.is_empty() {
            return Err(Error::Ingestion(format!("class directory {class:?} holds no PNG or JPEG files")));
        }
        files.shuffle(&mut rng);
        let n_train = (fraction * files.len() as f64).floor() as usize;
        for (i, file) in files.into_iter().enumerate() {
            let relative_path = format!("{class}/{file}");
            let split = if i < n_train { Split::Train } else { Split::Validation };
            let sample = Sample { id: sample_id(&relative_path), relative_path, label, split };
            if split == Split::Train { train.push(sample) } else { validation.push(sample) }
        }
    }
    let mut samples = train;
    samples.append(&mut validation);
    let mut ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Ingestion(format!("two files map to sample id {:?}", w[0])));
    }
    Ok(DatasetManifest { root: root.to_path_buf(), classes, split_seed: seed, fraction, samples })
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn count_label(&self, split: Split, label: usize) -> usize {
        self.split(split).filter(|s| s.label == label).count()
    }

    pub fn path_of(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.relative_path)
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// `id,relative_path,label,split`, one row per sample.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["id", "relative_path", "label", "split"]).map_err(io)?;
        for s in &self.samples {
            w.write_record([s.id.as_str(), &s.relative_path, &s.label.to_string(), s.split.key()])
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

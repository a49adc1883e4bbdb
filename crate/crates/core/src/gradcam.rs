//! Grad-CAM on the final block's output, colour overlays and per-sample
//! comparison panels.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::backbone::ResNet;
use crate::data::{decode_rgb, resize_bilinear, to_planes, DatasetManifest, Normalization, Sample};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Colour stops at 0, ½ and 1, interpolated linearly per channel.
pub const RAMP: [[f64; 3]; 3] = [[0.0, 0.0, 255.0], [0.0, 255.0, 0.0], [255.0, 0.0, 0.0]];

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in [0, 1].
    pub values: Vec<f64>,
    pub class: usize,
    /// Softmax probability of `class`.
    pub probability: f64,
}

/// Which logit the map explains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    GroundTruth,
    Predicted,
}

/// `relu(Σ_k w_k A_k)` with `w_k` the spatial mean of `grads[k]`, both C×H×W.
pub fn raw_map(features: &[f64], grads: &[f64], channels: usize) -> Vec<f64> {
    let hw = features.len() / channels;
    let mut map = vec![0.0; hw];
    for k in 0..channels {
        let a = &features[k * hw..(k + 1) * hw];
        let w = grads[k * hw..(k + 1) * hw].iter().sum::<f64>() / hw as f64;
        for (m, &v) in map.iter_mut().zip(a) {
            *m += w * v;
        }
    }
    map.iter_mut().for_each(|m| *m = m.max(0.0));
    map
}

/// Min-max scaling to [0, 1]. A constant map becomes all zeros.
pub fn normalize_map(map: &mut [f64]) {
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for m in map.iter_mut() {
        *m = if span > 0.0 { (*m - lo) / span } else { 0.0 };
    }
}

/// Grad-CAM of one image (3×H×W or 1×3×H×W, already normalized) for `class`.
pub fn gradcam<T: Real>(model: &ResNet<T>, image: &Tensor<T>, class: usize) -> Result<Heatmap> {
    let batch = match image.rank() {
        3 => image.reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?,
        4 if image.shape()[0] == 1 => image.clone(),
        _ => return Err(Error::dim(format!("Grad-CAM takes one image, got {:?}", image.shape()))),
    };
    if class >= crate::backbone::NUM_CLASSES {
        return Err(Error::contract(format!("class {class} out of range")));
    }
    let tape = Tape::new();
    let mut probe = model.last_conv_features(&tape, &batch)?;
    probe.backward_from(class)?;
    let features = probe.features();
    let grads = probe.gradient()?.to_f64_vec();
    let s = features.shape().to_vec();
    let mut values = raw_map(&features.to_f64_vec(), &grads, s[1]);
    normalize_map(&mut values);
    let logits = probe.logits().to_f64_vec();
    let probability = 1.0 / (1.0 + (logits[1 - class] - logits[class]).exp());
    Ok(Heatmap { height: s[2], width: s[3], values, class, probability })
}

/// Class with the larger logit; ties go to the negative class.
pub fn predicted_class<T: Real>(model: &ResNet<T>, image: &Tensor<T>) -> Result<usize> {
    let tape = Tape::new();
    let batch = image.reshape(&[1, 3, image.shape()[image.rank() - 2], image.shape()[image.rank() - 1]])?;
    let logits = model.forward_eval(&tape, tape.constant(batch))?.value().to_f64_vec();
    Ok(usize::from(logits[1] > logits[0]))
}

pub fn ramp(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let (lo, hi, t) = if v <= 0.5 { (RAMP[0], RAMP[1], v * 2.0) } else { (RAMP[1], RAMP[2], v * 2.0 - 1.0) };
    [0, 1, 2].map(|c| lo[c] + (hi[c] - lo[c]) * t)
}

/// 3×H×W planes in [0, 1] to 8-bit RGB.
pub fn planes_to_rgb(planes: &Tensor) -> Result<RgbImage> {
    let s = planes.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("expected 3×H×W planes, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = planes.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (d[(c * h + y as usize) * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([at(0), at(1), at(2)])
    }))
}

/// Blends the ramp-coloured heatmap, bilinearly resized to the image, over
/// it: `(1 − alpha)·image + alpha·ramp(heat)`, rounded per channel.
pub fn overlay(image: &RgbImage, heatmap: &Heatmap, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("gradcam.alpha must be in [0, 1], got {alpha}")));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let small = Tensor::new(&[heatmap.height, heatmap.width], heatmap.values.clone())?;
    let heat = resize_bilinear(&small, h, w)?;
    let heat = heat.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let colour = ramp(heat[y as usize * w + x as usize]);
        let px = image.get_pixel(x, y).0;
        Rgb([0, 1, 2].map(|c| ((1.0 - alpha) * px[c] as f64 + alpha * colour[c]).round().clamp(0.0, 255.0) as u8))
    }))
}

/// One model's contribution to a panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelEntry {
    /// `baseline`, `se`, `cbam` or `gc`.
    pub model: String,
    /// File name relative to the panel directory.
    pub file: String,
    pub probability: f64,
    pub class: usize,
}

/// One line of the panel index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub sample_id: String,
    /// Ground-truth label.
    pub class: usize,
    /// The resized input without overlay.
    pub input: String,
    pub entries: Vec<PanelEntry>,
}

pub fn overlay_file_name(sample_id: &str, model: &str) -> String {
    format!("{sample_id}__{model}.png")
}

pub struct PanelOptions {
    pub size: usize,
    pub norm: Normalization,
    pub target: Target,
    pub alpha: f64,
}

/// Renders `<sample_id>__<model>.png` for each model plus
/// `<sample_id>__input.png` into `out_dir`.
pub fn make_panel<T: Real>(
    manifest: &DatasetManifest,
    sample: &Sample,
    models: &[(&str, &ResNet<T>)],
    options: &PanelOptions,
    out_dir: &Path,
) -> Result<Panel> {
    let planes = resize_bilinear(&to_planes(&decode_rgb(&manifest.path_of(sample))?), options.size, options.size)?;
    let base = planes_to_rgb(&planes)?;
    let input = options.norm.normalize(&planes).cast::<T>();
    fs::create_dir_all(out_dir)?;
    let input_file = overlay_file_name(&sample.id, "input");
    save_png(&base, &out_dir.join(&input_file))?;
    let mut entries = Vec::with_capacity(models.len());
    for &(label, model) in models {
        let class = match options.target {
            Target::GroundTruth => sample.label,
            Target::Predicted => predicted_class(model, &input)?,
        };
        let heat = gradcam(model, &input, class)?;
        let file = overlay_file_name(&sample.id, label);
        save_png(&overlay(&base, &heat, options.alpha)?, &out_dir.join(&file))?;
        entries.push(PanelEntry { model: label.to_string(), file, probability: heat.probability, class });
    }
    Ok(Panel { sample_id: sample.id.clone(), class: sample.label, input: input_file, entries })
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

pub const PANEL_INDEX: &str = "panels.jsonl";

/// One JSON object per line, in the given order.
pub fn write_panel_index(panels: &[Panel], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for p in panels {
        writeln!(out, "{}", serde_json::to_string(p)?)?;
    }
    Ok(())
}

pub fn read_panel_index(path: &Path) -> Result<Vec<Panel>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut panels = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let panel: Panel = serde_json::from_str(&line)
            .map_err(|e| Error::Ingestion(format!("{} line {}: {e}", path.display(), n + 1)))?;
        panels.push(panel);
    }
    Ok(panels)
}

/// Directory holding a panel index's images.
pub fn panel_dir(index: &Path) -> PathBuf {
    index.parent().map(Path::to_path_buf).unwrap_or_default()
}

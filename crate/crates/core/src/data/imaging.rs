//! Decoding, bilinear resizing and per-channel normalization.

use std::path::Path;

use ::image::{ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel affine normalization, `(x − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("invalid normalization {self:?}: std must be positive")));
        }
        Ok(())
    }

    fn apply(&self, t: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let s = t.shape();
        let plane: usize = s[s.len() - 2..].iter().product();
        let channels = s[s.len() - 3];
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = (i / plane) % channels;
            *v = f(*v, self.mean[c], self.std[c]);
        }
        out
    }

    /// `t` is …×3×H×W.
    pub fn normalize(&self, t: &Tensor) -> Tensor {
        self.apply(t, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, t: &Tensor) -> Tensor {
        self.apply(t, |v, m, s| v * s + m)
    }
}

pub fn decode_rgb(path: &Path) -> Result<RgbImage> {
    let fail = |message: String| Error::Decode { path: path.to_path_buf(), message };
    let reader = ImageReader::open(path)
        .map_err(|e| fail(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?;
    Ok(reader.decode().map_err(|e| fail(e.to_string()))?.to_rgb8())
}

/// 3×H×W planes scaled to [0, 1].
pub fn to_planes(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| raw[(i[1] * w + i[2]) * 3 + i[0]] as f64 / 255.0)
        .expect("decoded images are non-empty")
}

/// Bilinear resampling of the last two axes with half-pixel centres and
/// edge clamping, matching `align_corners = false`.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = t.shape();
    if s.len() < 2 || out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!("cannot resize {s:?} to {out_h}×{out_w}")));
    }
    let (in_h, in_w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = t.len() / (in_h * in_w);
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, in_h), taps(out_w, in_w));
    let src = t.data();
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let plane = &src[p * in_h * in_w..(p + 1) * in_h * in_w];
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = plane[y0 * in_w + x0] * (1.0 - tx) + plane[y0 * in_w + x1] * tx;
                let bottom = plane[y1 * in_w + x0] * (1.0 - tx) + plane[y1 * in_w + x1] * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = out_h;
    shape[r - 1] = out_w;
    Tensor::new(&shape, out)
}

/// Decode, replicate to three channels, resize to `size`×`size`, scale to
/// [0, 1], normalize.
pub fn load_image(path: &Path, size: usize, norm: &Normalization) -> Result<Tensor> {
    let planes = to_planes(&decode_rgb(path)?);
    Ok(norm.normalize(&resize_bilinear(&planes, size, size)?))
}

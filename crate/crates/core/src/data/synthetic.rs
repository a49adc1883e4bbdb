//! Separable toy corpus: a bright disc on a noisy dark background versus
//! the background alone.

use std::fs;
use std::path::Path;

use ::image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

pub const POSITIVE: &str = "disc";
pub const NEGATIVE: &str = "blank";

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub per_class: usize,
    pub side: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { per_class: 100, side: 64, seed: 0 }
    }
}

/// One image. Disc radius is drawn from [side/8, side/4] and the disc lies
/// fully inside the frame.
pub fn render(side: u32, with_disc: bool, rng: &mut impl rand::Rng) -> RgbImage {
    let s = side as f64;
    let radius = rng.random_range(s / 8.0..=s / 4.0);
    let cx = rng.random_range(radius..=s - radius);
    let cy = rng.random_range(radius..=s - radius);
    let mut img = RgbImage::new(side, side);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let inside = with_disc && dx * dx + dy * dy <= radius * radius;
        let base = if inside { rng.random_range(200..=255) } else { rng.random_range(0..=60) };
        *px = Rgb([base, base, base]);
    }
    img
}

/// Writes `<root>/disc/*.png` and `<root>/blank/*.png`.
pub fn generate(root: &Path, spec: &SyntheticSpec) -> Result<()> {
    if spec.per_class == 0 || spec.side < 8 {
        return Err(Error::Config("synthetic corpus needs ≥ 1 image per class and side ≥ 8".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    for (class, disc) in [(POSITIVE, true), (NEGATIVE, false)] {
        let dir = root.join(class);
        fs::create_dir_all(&dir)?;
        for i in 0..spec.per_class {
            let path = dir.join(format!("{class}_{i:04}.png"));
            render(spec.side, disc, &mut rng)
                .save(&path)
                .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
        }
    }
    Ok(())
}

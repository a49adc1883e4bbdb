//! Self-contained attention blocks: each maps an N×C×H×W feature map to a
//! tensor of the same shape, so any of them can be dropped into a network
//! without touching the surrounding layers.

mod cbam;
mod gc;
mod se;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cbam::CbamModule;
pub use gc::GcModule;
pub use se::SeModule;

use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Rng};
use crate::param::{Module, Param};
use crate::scalar::Real;
use crate::tape::{Tape, Var};

/// Reduction ratio used by all three mechanisms unless configured otherwise.
pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Se,
    Cbam,
    Gc,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 4] = [Self::None, Self::Se, Self::Cbam, Self::Gc];

    /// Config spelling: `none`, `se`, `cbam`, `gc`.
    pub fn key(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Se => "se",
            Self::Cbam => "cbam",
            Self::Gc => "gc",
        }
    }

    /// Model label used in review exports: `baseline`, `se`, `cbam`, `gc`.
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "baseline",
            other => other.key(),
        }
    }

    /// Row title in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::None => "ResNet-18",
            Self::Se => "ResNet-18 + SE",
            Self::Cbam => "ResNet-18 + CBAM",
            Self::Gc => "ResNet-18 + GC",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "baseline" => Ok(Self::None),
            "se" => Ok(Self::Se),
            "cbam" => Ok(Self::Cbam),
            "gc" => Ok(Self::Gc),
            other => Err(Error::Config(format!(
                "unknown attention kind `{other}` (expected none, se, cbam or gc)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub kind: AttentionKind,
    pub reduction: usize,
    pub channels: usize,
    /// CBAM only: one MLP for both the average and max descriptors.
    pub cbam_shared_mlp: bool,
}

impl AttentionSpec {
    pub fn new(kind: AttentionKind, channels: usize) -> Self {
        Self { kind, reduction: DEFAULT_REDUCTION, channels, cbam_shared_mlp: true }
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 {
            return Err(Error::Config("attention reduction ratio must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("attention channel count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One attention instance, or the identity for the baseline.
#[derive(Clone, Debug)]
pub enum Attention<T: Real = f64> {
    Identity,
    Se(SeModule<T>),
    Cbam(CbamModule<T>),
    Gc(GcModule<T>),
}

/// Builds and He-initializes the mechanism described by `spec`. GC's last
/// transform convolution starts at zero, so a fresh GC block is the identity.
pub fn make_attention<T: Real>(spec: &AttentionSpec, rng: &mut Rng) -> Result<Attention<T>> {
    spec.validate()?;
    Ok(match spec.kind {
        AttentionKind::None => Attention::Identity,
        AttentionKind::Se => Attention::Se(SeModule::new(rng, spec.channels, spec.reduction)),
        AttentionKind::Cbam => Attention::Cbam(CbamModule::new(
            rng,
            spec.channels,
            spec.reduction,
            spec.cbam_shared_mlp,
        )),
        AttentionKind::Gc => Attention::Gc(GcModule::new(rng, spec.channels, spec.reduction)),
    })
}

pub fn make_attention_seeded<T: Real>(spec: &AttentionSpec, seed: u64) -> Result<Attention<T>> {
    make_attention(spec, &mut seeded_rng(seed))
}

pub(crate) fn check_channels(what: &str, expected: usize, shape: &[usize]) -> Result<()> {
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::dim(format!(
            "{what} over {expected} channels expects N×{expected}×H×W, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Real> Attention<T> {
    pub fn kind(&self) -> AttentionKind {
        match self {
            Self::Identity => AttentionKind::None,
            Self::Se(_) => AttentionKind::Se,
            Self::Cbam(_) => AttentionKind::Cbam,
            Self::Gc(_) => AttentionKind::Gc,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, f: Var<'t, T>) -> Result<Var<'t, T>> {
        match self {
            Self::Identity => Ok(f),
            Self::Se(m) => m.forward(tape, f),
            Self::Cbam(m) => m.forward(tape, f),
            Self::Gc(m) => m.forward(tape, f),
        }
    }
}

impl<T: Real> Module<T> for Attention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Param<T>)) {
        match self {
            Self::Identity => {}
            Self::Se(m) => m.visit(prefix, f),
            Self::Cbam(m) => m.visit(prefix, f),
            Self::Gc(m) => m.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        match self {
            Self::Identity => {}
            Self::Se(m) => m.visit_mut(prefix, f),
            Self::Cbam(m) => m.visit_mut(prefix, f),
            Self::Gc(m) => m.visit_mut(prefix, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn kind_parsing() {
        for k in AttentionKind::ALL {
            assert_eq!(k.key().parse::<AttentionKind>().unwrap(), k);
        }
        assert!(matches!("nl".parse::<AttentionKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn identity_is_bit_exact() {
        let a = make_attention_seeded::<f64>(&AttentionSpec::new(AttentionKind::None, 8), 0).unwrap();
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 8, 3, 3], |i| (i[1] as f64).sin() * i[2] as f64).unwrap();
        let y = a.forward(&tape, tape.constant(x.clone())).unwrap().value();
        assert_eq!(y, x);
    }

    #[test]
    fn se_hidden_extent_for_64_channels() {
        let a = make_attention_seeded::<f64>(&AttentionSpec::new(AttentionKind::Se, 64), 0).unwrap();
        let Attention::Se(se) = a else { panic!("expected SE") };
        assert_eq!(se.mlp.hidden(), 4);
    }

    #[test]
    fn fresh_gc_is_identity() {
        let a = make_attention_seeded::<f64>(&AttentionSpec::new(AttentionKind::Gc, 16), 9).unwrap();
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 16, 4, 4], |i| ((i[1] * 7 + i[2] * 3 + i[3]) as f64).cos()).unwrap();
        assert_eq!(a.forward(&tape, tape.constant(x.clone())).unwrap().value(), x);
    }

    #[test]
    fn zero_ratio_rejected() {
        let spec = AttentionSpec::new(AttentionKind::Se, 8).with_reduction(0);
        assert!(matches!(make_attention_seeded::<f64>(&spec, 0), Err(Error::Config(_))));
    }
}

//! Structured pruning masks and the FLOPs model that prices them.
//!
//! A mask holds one bit per attention head and per FFN channel in every
//! layer; `1` keeps the unit and `0` prunes it. Masks address units of the
//! shared architecture, not of any particular code, so a mask derived on one
//! code applies to every other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MASK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("mask shape does not match architecture: {0}")]
    ShapeMismatch(String),
    #[error("unsupported mask format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("mask bits must be 0 or 1 (found {0})")]
    BadBit(u8),
    #[error("mask JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoderArchitecture {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "h")]
    pub heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
}

impl DecoderArchitecture {
    pub fn new(
        layers: usize,
        heads: usize,
        d_model: usize,
        d_ffn: usize,
    ) -> Result<Self, MaskError> {
        let a = Self {
            layers,
            heads,
            d_model,
            d_ffn,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ffn == 0 {
            return Err(MaskError::BadArchitecture("all counts must be >= 1".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(MaskError::BadArchitecture(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Per-layer shapes of the unpruned model.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        vec![
            LayerShape {
                heads: self.heads,
                d_ffn: self.d_ffn,
            };
            self.layers
        ]
    }
}

impl Default for DecoderArchitecture {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 32,
            d_ffn: 64,
        }
    }
}

/// Head and FFN-channel counts of one (possibly compacted) layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub heads: usize,
    pub d_ffn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructuredMask {
    pub head_bits: Vec<Vec<bool>>,
    pub ffn_bits: Vec<Vec<bool>>,
}

/// Kind of structural unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Ffn,
    Head,
}

impl StructuredMask {
    pub fn all_ones(shapes: &[LayerShape]) -> Self {
        Self {
            head_bits: shapes.iter().map(|s| vec![true; s.heads]).collect(),
            ffn_bits: shapes.iter().map(|s| vec![true; s.d_ffn]).collect(),
        }
    }

    pub fn all_zeros(shapes: &[LayerShape]) -> Self {
        Self {
            head_bits: shapes.iter().map(|s| vec![false; s.heads]).collect(),
            ffn_bits: shapes.iter().map(|s| vec![false; s.d_ffn]).collect(),
        }
    }

    pub fn for_arch(arch: &DecoderArchitecture) -> Self {
        Self::all_ones(&arch.layer_shapes())
    }

    pub fn layers(&self) -> usize {
        self.head_bits.len()
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.head_bits
            .iter()
            .zip(&self.ffn_bits)
            .map(|(h, f)| LayerShape {
                heads: h.len(),
                d_ffn: f.len(),
            })
            .collect()
    }

    pub fn check_shapes(&self, shapes: &[LayerShape]) -> Result<(), MaskError> {
        if self.head_bits.len() != self.ffn_bits.len() || self.shapes() != shapes {
            return Err(MaskError::ShapeMismatch(format!(
                "mask has {:?}, expected {:?}",
                self.shapes(),
                shapes
            )));
        }
        Ok(())
    }

    pub fn check_arch(&self, arch: &DecoderArchitecture) -> Result<(), MaskError> {
        self.check_shapes(&arch.layer_shapes())
    }

    pub fn is_all_ones(&self) -> bool {
        self.head_bits
            .iter()
            .chain(&self.ffn_bits)
            .flatten()
            .all(|&b| b)
    }

    pub fn retained_heads(&self) -> usize {
        self.head_bits.iter().flatten().filter(|&&b| b).count()
    }

    pub fn retained_ffn(&self) -> usize {
        self.ffn_bits.iter().flatten().filter(|&&b| b).count()
    }

    /// Retained units as `(layer, kind, index)`, in layer order.
    pub fn retained_units(&self) -> Vec<(usize, UnitKind, usize)> {
        let mut out = Vec::new();
        for (l, (h, f)) in self.head_bits.iter().zip(&self.ffn_bits).enumerate() {
            out.extend(
                h.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| (l, UnitKind::Head, i)),
            );
            out.extend(
                f.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| (l, UnitKind::Ffn, i)),
            );
        }
        out
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Result<Self, MaskError> {
        other.check_shapes(&self.shapes())?;
        let z = |a: &Vec<Vec<bool>>, b: &Vec<Vec<bool>>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect())
                .collect()
        };
        Ok(Self {
            head_bits: z(&self.head_bits, &other.head_bits),
            ffn_bits: z(&self.ffn_bits, &other.ffn_bits),
        })
    }

    pub fn union(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn to_json(&self, arch: &DecoderArchitecture) -> Result<String, MaskError> {
        self.check_arch(arch)?;
        let file = MaskFile::from_mask(self, arch);
        serde_json::to_string_pretty(&file).map_err(|e| MaskError::Json(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<(DecoderArchitecture, Self), MaskError> {
        let file: MaskFile =
            serde_json::from_str(text).map_err(|e| MaskError::Json(e.to_string()))?;
        file.into_mask()
    }
}

/// Serialized form: `{version, arch: {L, h, d_model, d_ffn}, head_bits, ffn_bits}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub version: u32,
    pub arch: DecoderArchitecture,
    pub head_bits: Vec<Vec<u8>>,
    pub ffn_bits: Vec<Vec<u8>>,
}

impl MaskFile {
    pub fn from_mask(mask: &StructuredMask, arch: &DecoderArchitecture) -> Self {
        let enc = |v: &Vec<Vec<bool>>| {
            v.iter()
                .map(|r| r.iter().map(|&b| b as u8).collect())
                .collect()
        };
        Self {
            version: MASK_FORMAT_VERSION,
            arch: *arch,
            head_bits: enc(&mask.head_bits),
            ffn_bits: enc(&mask.ffn_bits),
        }
    }

    pub fn into_mask(self) -> Result<(DecoderArchitecture, StructuredMask), MaskError> {
        if self.version != MASK_FORMAT_VERSION {
            return Err(MaskError::Version {
                found: self.version,
                expected: MASK_FORMAT_VERSION,
            });
        }
        self.arch.validate()?;
        let dec = |v: Vec<Vec<u8>>| -> Result<Vec<Vec<bool>>, MaskError> {
            v.into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            x => Err(MaskError::BadBit(x)),
                        })
                        .collect()
                })
                .collect()
        };
        let mask = StructuredMask {
            head_bits: dec(self.head_bits)?,
            ffn_bits: dec(self.ffn_bits)?,
        };
        mask.check_arch(&self.arch)?;
        Ok((self.arch, mask))
    }
}

/// `|A ∩ B| / |A ∪ B|` over retained units; 1 when both retain nothing.
pub fn jaccard(a: &StructuredMask, b: &StructuredMask) -> Result<f64, MaskError> {
    let inter = a.intersection(b)?;
    let uni = a.union(b)?;
    let i = inter.retained_heads() + inter.retained_ffn();
    let u = uni.retained_heads() + uni.retained_ffn();
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// FLOPs of one attention head over `seq_len` tokens: Q/K/V/O projections
/// plus score and context products, two FLOPs per multiply-accumulate.
pub fn head_flops(d_model: usize, head_dim: usize, seq_len: usize) -> f64 {
    let (d, hd, t) = (d_model as f64, head_dim as f64, seq_len as f64);
    2.0 * t * (3.0 * d * hd + hd * d) + 2.0 * t * t * hd * 2.0
}

/// FLOPs of one FFN channel (its input row and output column).
pub fn ffn_channel_flops(d_model: usize, seq_len: usize) -> f64 {
    2.0 * seq_len as f64 * (2.0 * d_model as f64)
}

/// Matmul FLOPs of the per-layer shapes.
pub fn shapes_flops(d_model: usize, head_dim: usize, shapes: &[LayerShape], seq_len: usize) -> f64 {
    let h = head_flops(d_model, head_dim, seq_len);
    let f = ffn_channel_flops(d_model, seq_len);
    shapes
        .iter()
        .map(|s| s.heads as f64 * h + s.d_ffn as f64 * f)
        .sum()
}

pub fn model_flops(arch: &DecoderArchitecture, seq_len: usize) -> f64 {
    shapes_flops(arch.d_model, arch.head_dim(), &arch.layer_shapes(), seq_len)
}

pub fn masked_flops(
    arch: &DecoderArchitecture,
    mask: &StructuredMask,
    seq_len: usize,
) -> Result<f64, MaskError> {
    mask.check_arch(arch)?;
    let h = head_flops(arch.d_model, arch.head_dim(), seq_len);
    let f = ffn_channel_flops(arch.d_model, seq_len);
    Ok(mask.retained_heads() as f64 * h + mask.retained_ffn() as f64 * f)
}

/// `masked_flops / model_flops`.
pub fn retained_ratio(
    arch: &DecoderArchitecture,
    mask: &StructuredMask,
    seq_len: usize,
) -> Result<f64, MaskError> {
    Ok(masked_flops(arch, mask, seq_len)? / model_flops(arch, seq_len))
}

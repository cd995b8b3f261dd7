//! Experiment drivers shared by the CLI and the end-to-end tests: dedicated
//! mask derivation, the spectral-vs-mask correlation study and the
//! cross-transfer probe.

use crate::catalog::{catalog_get, CatalogError};
use crate::channel::{evaluate, ChannelConfig, ChannelError, EvalOptions, EvalPoint};
use crate::code::{permute_columns, rref_gf2, CodeError, LinearCode};
use crate::decoder::{CodeLayout, DecoderError, DecoderModel};
use crate::lora::{merge, recover, LoraError, RecoveryConfig};
use crate::mask::{jaccard, MaskError, StructuredMask};
use crate::pruning::{
    apply_mask, compact, fisher_importance, select_mask, CalibConfig, PruneError,
};
use crate::spectrum::{
    calibrate_beta_median, degree_wd_distance, laplacian_signature, spectral_distance,
    spectral_signature, SpectrumError,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("Pearson correlation needs at least 3 points (got {0})")]
    TooFewPoints(usize),
    #[error("correlation study needs at least 3 code pairs (got {0})")]
    TooFewPairs(usize),
    #[error("Pearson correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Lora(#[from] LoraError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, ExperimentError> {
    if xs.len() != ys.len() {
        return Err(ExperimentError::Invalid("pearson: length mismatch".into()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(ExperimentError::TooFewPoints(n));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(ExperimentError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(ExperimentError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Token count of a code for FLOPs accounting: `n + m`.
pub fn seq_len(code: &LinearCode) -> usize {
    code.n() + code.pcm.m()
}

/// Fisher scores on `code` followed by budgeted selection at `target_ratio`.
pub fn dedicated_mask(
    backbone: &DecoderModel,
    code: &LinearCode,
    calib: &CalibConfig,
    target_ratio: f64,
) -> Result<StructuredMask, PruneError> {
    let scores = fisher_importance(backbone, code, calib)?;
    select_mask(&scores, &backbone.arch, seq_len(code), target_ratio)
}

/// Same code with its columns shuffled by a seeded permutation.
pub fn permuted_variant(code: &LinearCode, seed: u64) -> Result<LinearCode, ExperimentError> {
    let mut perm: Vec<usize> = (0..code.n()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pcm = permute_columns(&code.pcm, &perm)?;
    Ok(LinearCode::with_generator(
        format!("{}~perm", code.name),
        code.family,
        pcm,
    )?)
}

/// Same code with its parity checks in reduced row echelon form.
pub fn rref_variant(code: &LinearCode) -> Result<LinearCode, ExperimentError> {
    Ok(LinearCode::new(
        format!("{}~rref", code.name),
        code.family,
        rref_gf2(&code.pcm),
        code.gen.clone(),
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairKind {
    SameFamily,
    CrossFamily,
    /// A code against its own RREF form.
    RrefSelf,
    /// A code against a column-permuted copy.
    PermutationSelf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub a: String,
    /// Ignored for self pairs.
    #[serde(default)]
    pub b: String,
    pub kind: PairKind,
}

impl PairSpec {
    pub fn new(a: &str, b: &str, kind: PairKind) -> Self {
        Self {
            a: a.into(),
            b: b.into(),
            kind,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            PairKind::RrefSelf => format!("{}|rref", self.a),
            PairKind::PermutationSelf => format!("{}|perm", self.a),
            _ => format!("{}|{}", self.a, self.b),
        }
    }

    /// Both codes of the pair; the permutation is drawn from `perm_seed`.
    pub fn resolve(&self, perm_seed: u64) -> Result<(LinearCode, LinearCode), ExperimentError> {
        let a = catalog_get(&self.a)?;
        let b = match self.kind {
            PairKind::RrefSelf => rref_variant(&a)?,
            PairKind::PermutationSelf => permuted_variant(&a, perm_seed)?,
            _ => catalog_get(&self.b)?,
        };
        Ok((a, b))
    }
}

/// Same-family, cross-family, RREF and permutation pairs over catalog codes
/// small enough for the toy decoder.
pub fn default_pairs() -> Vec<PairSpec> {
    use PairKind::*;
    vec![
        PairSpec::new("HAMMING_7_4", "HAMMING_15_11", SameFamily),
        PairSpec::new("LDPC_24_12", "LDPC_24_12_B", SameFamily),
        PairSpec::new("LDPC_24_12", "LDPC_12_6_LIFT2", SameFamily),
        PairSpec::new("HAMMING_7_4", "BCH_15_7", CrossFamily),
        PairSpec::new("HAMMING_7_4", "LDPC_24_12", CrossFamily),
        PairSpec::new("BCH_15_7", "POLAR_16_8", CrossFamily),
        PairSpec::new("POLAR_16_8", "LDPC_24_12", CrossFamily),
        PairSpec::new("HAMMING_7_4", "POLAR_32_16", CrossFamily),
        PairSpec::new("BCH_15_7", "", RrefSelf),
        PairSpec::new("POLAR_16_8", "", RrefSelf),
        PairSpec::new("HAMMING_7_4", "", PermutationSelf),
        PairSpec::new("LDPC_24_12", "", PermutationSelf),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDistances {
    pub adjacency: f64,
    pub laplacian: f64,
    pub degree_wd: f64,
}

pub fn pair_distances(
    a: &LinearCode,
    b: &LinearCode,
    k: usize,
) -> Result<PairDistances, SpectrumError> {
    Ok(PairDistances {
        adjacency: spectral_distance(
            &spectral_signature(&a.pcm, k)?,
            &spectral_signature(&b.pcm, k)?,
        )?,
        laplacian: spectral_distance(
            &laplacian_signature(&a.pcm, k)?,
            &laplacian_signature(&b.pcm, k)?,
        )?,
        degree_wd: degree_wd_distance(&a.pcm, &b.pcm)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub pair: String,
    pub kind: PairKind,
    pub seed: u64,
    pub distances: PairDistances,
    pub kappa_adjacency: f64,
    pub kappa_laplacian: f64,
    pub kappa_wd: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    pub beta_adjacency: f64,
    /// Median-calibrated.
    pub beta_laplacian: f64,
    /// Median-calibrated.
    pub beta_wd: f64,
    pub rho_adjacency: f64,
    pub rho_laplacian: f64,
    pub rho_wd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub seeds: Vec<u64>,
    pub calib: CalibConfig,
    pub target_ratio: f64,
    pub k: usize,
    pub beta_adjacency: f64,
}

/// Spectral similarity (three metrics) against the Jaccard overlap of the
/// two codes' dedicated masks, for every pair and seed. The seed drives the
/// calibration frames and the permutation of permutation pairs. Pearson ρ is
/// taken over all rows pooled.
pub fn correlation_study(
    backbone: &DecoderModel,
    pairs: &[PairSpec],
    cfg: &StudyConfig,
) -> Result<CorrelationReport, ExperimentError> {
    if pairs.len() < 3 {
        return Err(ExperimentError::TooFewPairs(pairs.len()));
    }
    if cfg.seeds.is_empty() {
        return Err(ExperimentError::Invalid(
            "correlation study needs at least one seed".into(),
        ));
    }
    let mut raw = Vec::new();
    for &seed in &cfg.seeds {
        let calib = CalibConfig { seed, ..cfg.calib };
        let mut cache: Vec<(String, StructuredMask)> = Vec::new();
        let mut mask_for = |code: &LinearCode| -> Result<StructuredMask, ExperimentError> {
            if let Some((_, m)) = cache.iter().find(|(n, _)| *n == code.name) {
                return Ok(m.clone());
            }
            let m = dedicated_mask(backbone, code, &calib, cfg.target_ratio)?;
            cache.push((code.name.clone(), m.clone()));
            Ok(m)
        };
        for p in pairs {
            let (a, b) = p.resolve(seed)?;
            let d = pair_distances(&a, &b, cfg.k)?;
            let j = jaccard(&mask_for(&a)?, &mask_for(&b)?)?;
            raw.push((p.label(), p.kind, seed, d, j));
        }
    }
    let collect = |f: fn(&PairDistances) -> f64| raw.iter().map(|r| f(&r.3)).collect::<Vec<f64>>();
    let beta_laplacian = calibrate_beta_median(&collect(|d| d.laplacian))?;
    let beta_wd = calibrate_beta_median(&collect(|d| d.degree_wd))?;
    let rows: Vec<CorrelationRow> = raw
        .into_iter()
        .map(|(pair, kind, seed, d, j)| CorrelationRow {
            pair,
            kind,
            seed,
            kappa_adjacency: (-cfg.beta_adjacency * d.adjacency).exp(),
            kappa_laplacian: (-beta_laplacian * d.laplacian).exp(),
            kappa_wd: (-beta_wd * d.degree_wd).exp(),
            distances: d,
            jaccard: j,
        })
        .collect();
    let js: Vec<f64> = rows.iter().map(|r| r.jaccard).collect();
    let k_of = |f: fn(&CorrelationRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    Ok(CorrelationReport {
        rho_adjacency: pearson(&k_of(|r| r.kappa_adjacency), &js)?,
        rho_laplacian: pearson(&k_of(|r| r.kappa_laplacian), &js)?,
        rho_wd: pearson(&k_of(|r| r.kappa_wd), &js)?,
        beta_adjacency: cfg.beta_adjacency,
        beta_laplacian,
        beta_wd,
        rows,
    })
}

/// Applies `mask`, compacts, trains adapters on `code` against `teacher`
/// and returns the merged model.
pub fn prune_and_recover(
    backbone: &DecoderModel,
    teacher: &DecoderModel,
    code: &LinearCode,
    mask: &StructuredMask,
    rcfg: &RecoveryConfig,
) -> Result<(DecoderModel, Vec<f64>), ExperimentError> {
    let student = compact(&apply_mask(backbone, mask)?)?;
    let report = recover(&student, teacher, code, rcfg)?;
    Ok((merge(&student, report.adapters)?, report.epoch_loss))
}

/// Monte-Carlo BER/FER of a decoder model on `code`.
pub fn eval_model(
    model: &DecoderModel,
    code: &LinearCode,
    ebn0_db: &[f64],
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<EvalPoint>, ExperimentError> {
    let layout = CodeLayout::new(&code.pcm);
    let points = ebn0_db
        .iter()
        .map(|&e| ChannelConfig::new(e, code.rate(), seed))
        .collect::<Result<Vec<_>, _>>()?;
    // a decode failure yields an empty word, which `evaluate` reports
    Ok(evaluate(
        &points,
        code,
        |y, _| model.decode(&layout, y).unwrap_or_default(),
        opts,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub seed: u64,
    pub ebn0_db: f64,
    /// Target code decoded with the source code's dedicated mask.
    pub ber_cross: f64,
    /// Target code decoded with its own dedicated mask.
    pub ber_dedicated: f64,
    pub frames_cross: u64,
    pub frames_dedicated: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub seeds: Vec<u64>,
    pub calib: CalibConfig,
    pub target_ratio: f64,
    pub recovery: RecoveryConfig,
    pub ebn0_db: f64,
    pub eval: EvalOptions,
}

/// Decodes `target` with a mask transferred from `source` and with its own
/// dedicated mask, both after identical recovery, per seed.
pub fn transfer_probe(
    backbone: &DecoderModel,
    source: &LinearCode,
    target: &LinearCode,
    cfg: &TransferConfig,
) -> Result<Vec<TransferRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let calib = CalibConfig { seed, ..cfg.calib };
        let rcfg = RecoveryConfig {
            seed,
            ..cfg.recovery.clone()
        };
        let cross_mask = dedicated_mask(backbone, source, &calib, cfg.target_ratio)?;
        let own_mask = dedicated_mask(backbone, target, &calib, cfg.target_ratio)?;
        let (cross, _) = prune_and_recover(backbone, backbone, target, &cross_mask, &rcfg)?;
        let (own, _) = prune_and_recover(backbone, backbone, target, &own_mask, &rcfg)?;
        let c = eval_model(&cross, target, &[cfg.ebn0_db], seed, &cfg.eval)?;
        let o = eval_model(&own, target, &[cfg.ebn0_db], seed, &cfg.eval)?;
        rows.push(TransferRow {
            seed,
            ebn0_db: cfg.ebn0_db,
            ber_cross: c[0].ber,
            ber_dedicated: o[0].ber,
            frames_cross: c[0].frames,
            frames_dedicated: o[0].frames,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_identities() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            pearson(&xs[..2], &ys[..2]),
            Err(ExperimentError::TooFewPoints(2))
        ));
        assert!(pearson(&xs, &[1.0; 4]).is_err());
    }

    #[test]
    fn self_pairs_resolve() {
        let p = PairSpec::new("HAMMING_7_4", "", PairKind::PermutationSelf);
        let (a, b) = p.resolve(3).unwrap();
        let d = pair_distances(&a, &b, 20).unwrap();
        assert!(d.adjacency < 1e-9 && d.degree_wd == 0.0);
        let (a, b) = PairSpec::new("BCH_15_7", "", PairKind::RrefSelf)
            .resolve(0)
            .unwrap();
        assert!(pair_distances(&a, &b, 20).unwrap().adjacency > 0.0);
        for p in default_pairs() {
            p.resolve(1).unwrap();
        }
    }
}

//! Spectral signatures of Tanner graphs and the similarity scores built on
//! them.
//!
//! Nodes are ordered variables first (`0..n`), then checks (`n..n+m`), so the
//! adjacency matrix has the block form `[[0, Hᵀ], [H, 0]]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::ParityCheckMatrix;
use crate::eigen::{symmetric_eigenvalues, EigenError, SymMatrix};
use crate::gf2::BitMatrix;
use crate::numfmt;

/// Magnitudes closer than this (relative to `max(1, |λ|)`) are ordered as ties.
pub const MAGNITUDE_TIE_TOL: f64 = 1e-9;
/// Distances at or below this count as trivial matches in β calibration.
pub const ZERO_DISTANCE_TOL: f64 = 1e-9;

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("signature length must be at least 1")]
    ZeroK,
    #[error("signature lengths differ: {0} vs {1}")]
    KMismatch(usize, usize),
    #[error("signature kinds differ: {0:?} vs {1:?}")]
    KindMismatch(SignatureKind, SignatureKind),
    #[error("beta must be positive and finite (got {0})")]
    BadBeta(f64),
    #[error("distance must be non-negative (got {0})")]
    NegativeDistance(f64),
    #[error("no strictly positive distance to calibrate against")]
    NoPositiveDistance,
    #[error("Tanner graph has an isolated {kind} node at index {index}")]
    IsolatedNode { kind: &'static str, index: usize },
    #[error("parity-check matrix has no edges")]
    NoEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureKind {
    /// Top-K adjacency eigenvalues by decreasing magnitude, signed.
    Adjacency,
    /// K smallest normalized-Laplacian eigenvalues, ascending.
    Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSignature {
    #[serde(
        serialize_with = "numfmt::serialize_vec17",
        deserialize_with = "numfmt::deserialize_vec"
    )]
    pub values: Vec<f64>,
    pub kind: SignatureKind,
    /// `(n, k)` of the code the signature came from.
    pub source_dims: (usize, usize),
}

impl SpectralSignature {
    pub fn k_used(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Metric {
    Adjacency,
    Laplacian,
    DegreeWd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub beta: f64,
    pub metric: Metric,
}

impl SimilarityParams {
    pub fn new(beta: f64, metric: Metric) -> Result<Self, SpectrumError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(SpectrumError::BadBeta(beta));
        }
        Ok(Self { beta, metric })
    }
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            metric: Metric::Adjacency,
        }
    }
}

/// `[[0, Hᵀ], [H, 0]]` of size `(2n − k) × (2n − k)`.
pub fn bipartite_adjacency(pcm: &ParityCheckMatrix) -> BitMatrix {
    let (n, m) = (pcm.n(), pcm.m());
    let mut a = BitMatrix::zeros(n + m, n + m);
    for r in 0..m {
        for c in 0..n {
            if pcm.get(r, c) {
                a.set(c, n + r, true);
                a.set(n + r, c, true);
            }
        }
    }
    a
}

fn bits_to_real(a: &BitMatrix) -> SymMatrix {
    let mut m = SymMatrix::zeros(a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            if a.get(i, j) {
                m.set(i, j, 1.0);
            }
        }
    }
    m
}

/// Full adjacency spectrum, ascending.
pub fn adjacency_spectrum(pcm: &ParityCheckMatrix) -> Result<Vec<f64>, SpectrumError> {
    Ok(symmetric_eigenvalues(&bits_to_real(&bipartite_adjacency(
        pcm,
    )))?)
}

/// Orders eigenvalues by decreasing magnitude. Within a run of equal
/// magnitudes positives come first, then larger values.
pub fn order_by_magnitude(values: &mut [f64]) {
    values.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let mut start = 0;
    while start < values.len() {
        let head = values[start].abs();
        let tol = MAGNITUDE_TIE_TOL * head.max(1.0);
        let mut end = start + 1;
        while end < values.len() && head - values[end].abs() <= tol {
            end += 1;
        }
        values[start..end].sort_by(|a, b| b.total_cmp(a));
        start = end;
    }
}

/// Top-`k` adjacency eigenvalues by magnitude, zero-padded past `2n − k`.
pub fn spectral_signature(
    pcm: &ParityCheckMatrix,
    k: usize,
) -> Result<SpectralSignature, SpectrumError> {
    if k == 0 {
        return Err(SpectrumError::ZeroK);
    }
    let mut ev = adjacency_spectrum(pcm)?;
    order_by_magnitude(&mut ev);
    ev.resize(k.max(ev.len()), 0.0);
    ev.truncate(k);
    Ok(SpectralSignature {
        values: ev,
        kind: SignatureKind::Adjacency,
        source_dims: (pcm.n(), pcm.k()),
    })
}

/// Euclidean distance between two signatures of the same kind and length.
pub fn spectral_distance(
    a: &SpectralSignature,
    b: &SpectralSignature,
) -> Result<f64, SpectrumError> {
    if a.k_used() != b.k_used() {
        return Err(SpectrumError::KMismatch(a.k_used(), b.k_used()));
    }
    if a.kind != b.kind {
        return Err(SpectrumError::KindMismatch(a.kind, b.kind));
    }
    Ok(euclidean(&a.values, &b.values))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `κ = exp(−β d)`.
pub fn spectral_similarity(d: f64, params: &SimilarityParams) -> Result<f64, SpectrumError> {
    if !(d >= 0.0) {
        return Err(SpectrumError::NegativeDistance(d));
    }
    if !(params.beta > 0.0 && params.beta.is_finite()) {
        return Err(SpectrumError::BadBeta(params.beta));
    }
    Ok((-params.beta * d).exp())
}

/// Median of the distances above [`ZERO_DISTANCE_TOL`].
pub fn positive_median(distances: &[f64]) -> Option<f64> {
    let mut pos: Vec<f64> = distances
        .iter()
        .copied()
        .filter(|&d| d > ZERO_DISTANCE_TOL)
        .collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    let mid = pos.len() / 2;
    Some(if pos.len() % 2 == 1 {
        pos[mid]
    } else {
        0.5 * (pos[mid - 1] + pos[mid])
    })
}

/// `β = ln 2 / median`, with the median taken over nonzero distances.
///
/// The quotient is nudged by whole ulps so that `exp(−β · median)` evaluates
/// to exactly 0.5 when some f64 `β` achieves that. For some medians none
/// does (the rounded product steps over `ln 2`); the closest `β` is returned
/// and the similarity is then one ulp away from 0.5.
pub fn calibrate_beta_median(distances: &[f64]) -> Result<f64, SpectrumError> {
    let med = positive_median(distances).ok_or(SpectrumError::NoPositiveDistance)?;
    let gap = |b: f64| ((-b * med).exp() - 0.5).abs();
    let mut beta = std::f64::consts::LN_2 / med;
    for _ in 0..64 {
        if gap(beta) == 0.0 {
            break;
        }
        let next = if (-beta * med).exp() > 0.5 {
            beta.next_up()
        } else {
            beta.next_down()
        };
        if gap(next) > gap(beta) {
            break;
        }
        beta = next;
    }
    Ok(beta)
}

/// Edge-perspective degree distribution: `p[d]` is the fraction of edges
/// attached to nodes of degree `d`.
fn edge_degree_distribution(degrees: &[usize], edges: usize) -> Vec<f64> {
    let max = degrees.iter().copied().max().unwrap_or(0);
    let mut p = vec![0.0; max + 1];
    for &d in degrees {
        p[d] += d as f64 / edges as f64;
    }
    p
}

/// 1-Wasserstein distance between two distributions on `0, 1, 2, …`.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let (mut cp, mut cq, mut w) = (0.0, 0.0, 0.0);
    for t in 0..len.saturating_sub(1) {
        cp += p.get(t).copied().unwrap_or(0.0);
        cq += q.get(t).copied().unwrap_or(0.0);
        w += (cp - cq).abs();
    }
    w
}

/// Sum of the variable-side and check-side W₁ distances between the
/// edge-perspective degree distributions of two Tanner graphs.
pub fn degree_wd_distance(
    a: &ParityCheckMatrix,
    b: &ParityCheckMatrix,
) -> Result<f64, SpectrumError> {
    let dists = |h: &ParityCheckMatrix| -> Result<(Vec<f64>, Vec<f64>), SpectrumError> {
        let e = h.nnz();
        if e == 0 {
            return Err(SpectrumError::NoEdges);
        }
        let var: Vec<usize> = (0..h.n()).map(|c| h.bits().col_weight(c)).collect();
        let chk: Vec<usize> = (0..h.m()).map(|r| h.bits().row_weight(r)).collect();
        Ok((
            edge_degree_distribution(&var, e),
            edge_degree_distribution(&chk, e),
        ))
    };
    let (va, ca) = dists(a)?;
    let (vb, cb) = dists(b)?;
    Ok(wasserstein_1d(&va, &vb) + wasserstein_1d(&ca, &cb))
}

/// `K` smallest eigenvalues of `I − D^{-1/2} A D^{-1/2}`, ascending,
/// zero-padded when `K` exceeds the node count.
pub fn laplacian_signature(
    pcm: &ParityCheckMatrix,
    k: usize,
) -> Result<SpectralSignature, SpectrumError> {
    if k == 0 {
        return Err(SpectrumError::ZeroK);
    }
    let (n, m) = (pcm.n(), pcm.m());
    let var_deg: Vec<usize> = (0..n).map(|c| pcm.bits().col_weight(c)).collect();
    let chk_deg: Vec<usize> = (0..m).map(|r| pcm.bits().row_weight(r)).collect();
    if let Some(i) = var_deg.iter().position(|&d| d == 0) {
        return Err(SpectrumError::IsolatedNode {
            kind: "variable",
            index: i,
        });
    }
    if let Some(i) = chk_deg.iter().position(|&d| d == 0) {
        return Err(SpectrumError::IsolatedNode {
            kind: "check",
            index: i,
        });
    }
    let mut l = SymMatrix::zeros(n + m);
    for i in 0..n + m {
        l.set(i, i, 1.0);
    }
    for r in 0..m {
        for c in 0..n {
            if pcm.get(r, c) {
                let w = -1.0 / ((var_deg[c] * chk_deg[r]) as f64).sqrt();
                l.set(c, n + r, w);
                l.set(n + r, c, w);
            }
        }
    }
    let mut ev = symmetric_eigenvalues(&l)?;
    ev.resize(k.max(ev.len()), 0.0);
    ev.truncate(k);
    Ok(SpectralSignature {
        values: ev,
        kind: SignatureKind::Laplacian,
        source_dims: (n, pcm.k()),
    })
}

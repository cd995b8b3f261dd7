//! Linear block codes defined by parity-check matrices.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2::BitMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("parity-check matrix must satisfy 1 <= rows < cols and cols >= 2 (got {rows}x{cols})")]
    BadShape { rows: usize, cols: usize },
    #[error("column permutation is not a bijection on 0..{n}")]
    NotAPermutation { n: usize },
    #[error("parity-check matrix is rank deficient: rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("code {0} carries no generator matrix")]
    MissingGenerator(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("generator of {name} does not satisfy G·Hᵀ = 0")]
    InconsistentGenerator { name: String },
    #[error("generator of {name} has shape {rows}x{cols}, expected {k}x{n}")]
    GeneratorShape {
        name: String,
        rows: usize,
        cols: usize,
        k: usize,
        n: usize,
    },
}

/// Parity-check matrix `H` of an `(n, k)` code: `n - k` rows, `n` columns.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ParityCheckMatrix(BitMatrix);

impl ParityCheckMatrix {
    pub fn new(bits: BitMatrix) -> Result<Self, CodeError> {
        let (rows, cols) = (bits.rows(), bits.cols());
        if rows < 1 || cols < 2 || rows >= cols {
            return Err(CodeError::BadShape { rows, cols });
        }
        Ok(Self(bits))
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, CodeError> {
        Self::new(BitMatrix::from_rows(rows))
    }

    /// Block length `n`.
    #[inline]
    pub fn n(&self) -> usize {
        self.0.cols()
    }

    /// Number of checks, `n - k`.
    #[inline]
    pub fn m(&self) -> usize {
        self.0.rows()
    }

    /// Nominal dimension `n - rows`.
    #[inline]
    pub fn k(&self) -> usize {
        self.n() - self.m()
    }

    /// Number of Tanner-graph nodes, `2n - k`.
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n() + self.m()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.0.get(r, c)
    }

    pub fn bits(&self) -> &BitMatrix {
        &self.0
    }

    pub fn nnz(&self) -> usize {
        self.0.count_ones()
    }

    pub fn rank(&self) -> usize {
        self.0.rank()
    }

    /// Check indices adjacent to each variable.
    pub fn var_neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.n()).map(|c| self.0.col_support(c)).collect()
    }

    /// Variable indices adjacent to each check.
    pub fn check_neighbors(&self) -> Vec<Vec<usize>> {
        (0..self.m()).map(|r| self.0.row_support(r)).collect()
    }
}

impl fmt::Debug for ParityCheckMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParityCheckMatrix({:?})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CodeFamily {
    Bch,
    Ldpc,
    Polar,
    Hamming,
    Custom,
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CodeFamily::Bch => "BCH",
            CodeFamily::Ldpc => "LDPC",
            CodeFamily::Polar => "POLAR",
            CodeFamily::Hamming => "HAMMING",
            CodeFamily::Custom => "CUSTOM",
        };
        f.write_str(s)
    }
}

/// A named linear code with an optional generator matrix.
#[derive(Debug, Clone)]
pub struct LinearCode {
    pub name: String,
    pub family: CodeFamily,
    pub pcm: ParityCheckMatrix,
    pub gen: Option<BitMatrix>,
}

impl LinearCode {
    /// Wraps a PCM and validates an optional generator against it.
    pub fn new(
        name: impl Into<String>,
        family: CodeFamily,
        pcm: ParityCheckMatrix,
        gen: Option<BitMatrix>,
    ) -> Result<Self, CodeError> {
        let name = name.into();
        if let Some(g) = &gen {
            if g.rows() != pcm.k() || g.cols() != pcm.n() {
                return Err(CodeError::GeneratorShape {
                    name,
                    rows: g.rows(),
                    cols: g.cols(),
                    k: pcm.k(),
                    n: pcm.n(),
                });
            }
            if !g.mul(&pcm.bits().transpose()).is_zero() {
                return Err(CodeError::InconsistentGenerator { name });
            }
        }
        Ok(Self {
            name,
            family,
            pcm,
            gen,
        })
    }

    /// Builds the code with a systematic generator derived from `pcm`.
    pub fn with_generator(
        name: impl Into<String>,
        family: CodeFamily,
        pcm: ParityCheckMatrix,
    ) -> Result<Self, CodeError> {
        let gen = systematic_generator(&pcm)?;
        Self::new(name, family, pcm, Some(gen))
    }

    pub fn n(&self) -> usize {
        self.pcm.n()
    }

    pub fn k(&self) -> usize {
        self.pcm.k()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }
}

/// Reduced row echelon form over GF(2). Zero rows are kept at the bottom.
pub fn rref_gf2(pcm: &ParityCheckMatrix) -> ParityCheckMatrix {
    let mut bits = pcm.bits().clone();
    bits.rref_in_place();
    ParityCheckMatrix(bits)
}

/// Column permutation `H Π`: column `c` of the input lands at `perm[c]`.
pub fn permute_columns(
    pcm: &ParityCheckMatrix,
    perm: &[usize],
) -> Result<ParityCheckMatrix, CodeError> {
    let n = pcm.n();
    validate_permutation(perm, n)?;
    Ok(ParityCheckMatrix(pcm.bits().permute_cols(perm)))
}

pub(crate) fn validate_permutation(perm: &[usize], n: usize) -> Result<(), CodeError> {
    if perm.len() != n {
        return Err(CodeError::NotAPermutation { n });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(CodeError::NotAPermutation { n });
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Generator matrix whose rows span the null space of `pcm`.
///
/// Row `i` sets the `i`-th free (non-pivot) column of the RREF to one, so the
/// message bits appear verbatim at the free positions.
pub fn systematic_generator(pcm: &ParityCheckMatrix) -> Result<BitMatrix, CodeError> {
    let mut r = pcm.bits().clone();
    let pivots = r.rref_in_place();
    if pivots.len() < pcm.m() {
        return Err(CodeError::RankDeficient {
            rank: pivots.len(),
            expected: pcm.m(),
        });
    }
    let n = pcm.n();
    let mut is_pivot = vec![false; n];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let mut g = BitMatrix::zeros(free.len(), n);
    for (i, &f) in free.iter().enumerate() {
        g.set(i, f, true);
        for (row, &p) in pivots.iter().enumerate() {
            if r.get(row, f) {
                g.set(i, p, true);
            }
        }
    }
    Ok(g)
}

/// `x = m G` over GF(2).
pub fn encode(code: &LinearCode, msg: &[u8]) -> Result<Vec<u8>, CodeError> {
    let g = code
        .gen
        .as_ref()
        .ok_or_else(|| CodeError::MissingGenerator(code.name.clone()))?;
    if msg.len() != g.rows() {
        return Err(CodeError::LengthMismatch {
            expected: g.rows(),
            got: msg.len(),
        });
    }
    Ok(g.vec_mul(msg))
}

/// `H xᵀ` over GF(2).
pub fn syndrome(pcm: &ParityCheckMatrix, word: &[u8]) -> Result<Vec<u8>, CodeError> {
    if word.len() != pcm.n() {
        return Err(CodeError::LengthMismatch {
            expected: pcm.n(),
            got: word.len(),
        });
    }
    Ok(pcm.bits().mul_vec(word))
}

/// Bit decision for a BPSK sample: negative amplitudes map to 1.
#[inline]
pub fn hard_decision_bit(y: f64) -> u8 {
    (y < 0.0) as u8
}

pub fn hard_decision(y: &[f64]) -> Vec<u8> {
    y.iter().map(|&v| hard_decision_bit(v)).collect()
}

//! Toy ECCT-style transformer decoder.
//!
//! The input is `2n − k` scalar tokens: the channel magnitudes `|y|` followed
//! by the ±1 syndrome of the hard decision. Each token is lifted to
//! `d_model` by an affine map specific to its type (magnitude or syndrome);
//! there is no positional encoding, so the same weights serve every code and
//! the code structure enters only through the attention allow-pattern. The
//! network predicts, per bit, the logit that the channel flipped its sign.

mod checkpoint;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use model::{
    bce_loss, bce_loss_grad, sigmoid, Cache, DecoderModel, GateGrads, Gates, LayerWeights, Weights,
};
pub use optim::{cosine_lr, Adam};
pub use train::{
    batch_gradient, draw_training_sample, train, train_mixture, TrainConfig, TrainReport,
    TrainingSample,
};

use crate::code::{hard_decision, hard_decision_bit, syndrome, CodeError, ParityCheckMatrix};
use crate::mask::MaskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("token count {got} does not match code layout ({expected})")]
    TokenLength { got: usize, expected: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Code(#[from] CodeError),
}

/// Sparse attention allow-pattern over the `2n − k` tokens, stored as
/// per-query sorted key lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    n: usize,
    tokens: usize,
    offsets: Vec<usize>,
    keys: Vec<usize>,
}

impl AttentionPattern {
    pub fn from_allow(n: usize, allow: &[Vec<bool>]) -> Self {
        let mut offsets = vec![0];
        let mut keys = Vec::new();
        for row in allow {
            keys.extend(row.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j));
            offsets.push(keys.len());
        }
        Self {
            n,
            tokens: allow.len(),
            offsets,
            keys,
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Number of magnitude tokens (the code length).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn keys(&self, query: usize) -> &[usize] {
        &self.keys[self.offsets[query]..self.offsets[query + 1]]
    }

    pub(crate) fn offset(&self, query: usize) -> usize {
        self.offsets[query]
    }

    pub fn nnz(&self) -> usize {
        self.keys.len()
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.keys(i).binary_search(&j).is_ok()
    }
}

/// Allow-matrix over magnitude tokens `0..n` and syndrome tokens `n..2n−k`.
///
/// `(i, j)` is allowed when `i == j`, when a variable and a check are joined
/// by an edge, when two variables share a check, or when two checks share a
/// variable.
pub fn build_attention_mask(pcm: &ParityCheckMatrix) -> Vec<Vec<bool>> {
    let (n, m) = (pcm.n(), pcm.m());
    let t = n + m;
    let mut allow = vec![vec![false; t]; t];
    for (i, row) in allow.iter_mut().enumerate() {
        row[i] = true;
    }
    for (c, vars) in pcm.check_neighbors().iter().enumerate() {
        for &a in vars {
            allow[a][n + c] = true;
            allow[n + c][a] = true;
            for &b in vars {
                allow[a][b] = true;
            }
        }
    }
    for checks in pcm.var_neighbors() {
        for &a in &checks {
            for &b in &checks {
                allow[n + a][n + b] = true;
            }
        }
    }
    allow
}

/// A code prepared for the decoder: its parity checks and attention pattern.
#[derive(Debug, Clone)]
pub struct CodeLayout {
    pub pcm: ParityCheckMatrix,
    pub pattern: AttentionPattern,
}

impl CodeLayout {
    pub fn new(pcm: &ParityCheckMatrix) -> Self {
        Self {
            pattern: AttentionPattern::from_allow(pcm.n(), &build_attention_mask(pcm)),
            pcm: pcm.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.pcm.n()
    }

    pub fn tokens(&self) -> usize {
        self.pattern.tokens()
    }
}

/// `[|y_1|, …, |y_n|, s_1, …, s_m]` with the hard-decision syndrome mapped
/// `0 → +1`, `1 → −1`.
pub fn tokenize(pcm: &ParityCheckMatrix, y: &[f64]) -> Result<Vec<f64>, DecoderError> {
    let s = syndrome(pcm, &hard_decision(y))?;
    let mut tokens: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    tokens.extend(s.iter().map(|&b| 1.0 - 2.0 * f64::from(b)));
    Ok(tokens)
}

/// Flips the hard decision wherever the logit predicts a sign flip.
pub fn decode_bits(y: &[f64], logits: &[f64]) -> Vec<u8> {
    y.iter()
        .zip(logits)
        .map(|(&v, &l)| hard_decision_bit(v) ^ u8::from(l > 0.0))
        .collect()
}

/// Flip targets for an all-zero (all `+1`) transmission: 1 where `y < 0`.
pub fn flip_targets(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| f64::from(hard_decision_bit(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_get;

    #[test]
    fn allow_matrix_examples() {
        let single = ParityCheckMatrix::from_rows(&[[1u8, 1]]).unwrap();
        assert!(build_attention_mask(&single).iter().flatten().all(|&a| a));

        let ident = ParityCheckMatrix::from_rows(&[[1u8, 0, 0], [0, 1, 0]]).unwrap();
        let a = build_attention_mask(&ident);
        assert!(!a[0][1] && !a[1][0]);
        for (i, row) in a.iter().enumerate() {
            assert!(row[i]);
        }
        // variable 0 joined to check 0 (token 3)
        assert!(a[0][3] && a[3][0]);
        assert!(!a[0][4]);
    }

    #[test]
    fn allow_matrix_is_symmetric_on_catalog_code() {
        let code = catalog_get("LDPC_24_12").unwrap();
        let a = build_attention_mask(&code.pcm);
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
        let p = AttentionPattern::from_allow(code.n(), &a);
        assert!(p.allows(0, 0));
        assert_eq!(p.nnz(), a.iter().flatten().filter(|&&x| x).count());
    }

    #[test]
    fn tokenize_examples() {
        let code = catalog_get("HAMMING_7_4").unwrap();
        let clean = vec![1.0; 7];
        let t = tokenize(&code.pcm, &clean).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t[7..].iter().all(|&s| s == 1.0));

        for pos in 0..7 {
            let mut y = clean.clone();
            y[pos] = -0.3;
            let t = tokenize(&code.pcm, &y).unwrap();
            assert_eq!(t[pos], 0.3);
            for c in 0..3 {
                let expect = if code.pcm.get(c, pos) { -1.0 } else { 1.0 };
                assert_eq!(t[7 + c], expect);
            }
        }
    }

    #[test]
    fn tokens_invariant_to_transmitted_codeword() {
        use crate::code::encode;
        let code = catalog_get("HAMMING_7_4").unwrap();
        let noise = [0.3, -1.4, 0.2, 0.05, -0.7, 1.1, -0.2];
        let mut reference = None;
        for msg in 0..16u8 {
            let bits: Vec<u8> = (0..4).map(|i| (msg >> i) & 1).collect();
            let word = encode(&code, &bits).unwrap();
            // y = x_s · (1 + z): same noise magnitude and sign pattern relative to x_s
            let y: Vec<f64> = word
                .iter()
                .zip(noise)
                .map(|(&b, z)| (1.0 - 2.0 * f64::from(b)) * (1.0 + z))
                .collect();
            let t = tokenize(&code.pcm, &y).unwrap();
            match &reference {
                None => reference = Some(t),
                Some(r) => assert_eq!(r, &t),
            }
        }
    }

    #[test]
    fn decode_bits_examples() {
        let y = [0.9, -0.4, 1.2];
        assert_eq!(decode_bits(&y, &[-1.0, -2.0, 0.0]), vec![0, 1, 0]);
        assert_eq!(decode_bits(&y, &[-1.0, 3.0, -1.0]), vec![0, 0, 0]);
        assert_eq!(decode_bits(&y, &[1.0, 1.0, 1.0]), vec![1, 0, 1]);
        assert_eq!(flip_targets(&y), vec![0.0, 1.0, 0.0]);
    }
}

//! Flooding sum-product belief propagation.

use crate::code::ParityCheckMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Messages are clamped to `±MSG_CLAMP`.
pub const MSG_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BpError {
    #[error("noise sigma must be positive and finite (got {0})")]
    BadSigma(f64),
    #[error("max_iters must be >= 1")]
    NoIterations,
    #[error("LLR vector has length {got}, code length is {n}")]
    Length { got: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpConfig {
    pub max_iters: usize,
    pub early_stop: bool,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            early_stop: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpResult {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iters_used: usize,
}

/// AWGN channel LLRs `2y/σ²` (positive favours bit 0).
pub fn channel_llr(y: &[f64], sigma: f64) -> Result<Vec<f64>, BpError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(BpError::BadSigma(sigma));
    }
    let s2 = sigma * sigma;
    Ok(y.iter().map(|&v| 2.0 * v / s2).collect())
}

/// Precomputed Tanner-graph edges for repeated decoding of one code.
#[derive(Debug, Clone)]
pub struct BpGraph {
    n: usize,
    /// Variable index of each edge, grouped by check.
    edge_var: Vec<usize>,
    check_start: Vec<usize>,
    /// Edge ids incident to each variable.
    var_edges: Vec<Vec<usize>>,
}

impl BpGraph {
    pub fn new(pcm: &ParityCheckMatrix) -> Self {
        let mut edge_var = Vec::with_capacity(pcm.nnz());
        let mut check_start = vec![0];
        let mut var_edges = vec![Vec::new(); pcm.n()];
        for vars in pcm.check_neighbors() {
            for v in vars {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_start.push(edge_var.len());
        }
        Self {
            n: pcm.n(),
            edge_var,
            check_start,
            var_edges,
        }
    }

    fn syndrome_zero(&self, bits: &[u8]) -> bool {
        self.check_start.windows(2).all(|w| {
            self.edge_var[w[0]..w[1]]
                .iter()
                .fold(0u8, |acc, &v| acc ^ bits[v])
                == 0
        })
    }

    pub fn decode(&self, llr: &[f64], cfg: &BpConfig) -> Result<BpResult, BpError> {
        if cfg.max_iters == 0 {
            return Err(BpError::NoIterations);
        }
        if llr.len() != self.n {
            return Err(BpError::Length {
                got: llr.len(),
                n: self.n,
            });
        }
        let clamp = |x: f64| x.clamp(-MSG_CLAMP, MSG_CLAMP);
        let ne = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| clamp(llr[v])).collect();
        let mut c2v = vec![0.0; ne];
        let mut bits = vec![0u8; self.n];
        let mut t = Vec::new();
        let mut suffix = Vec::new();
        for it in 0..cfg.max_iters {
            for w in self.check_start.windows(2) {
                let (s, e) = (w[0], w[1]);
                t.clear();
                t.extend(v2c[s..e].iter().map(|&m| (0.5 * m).tanh()));
                suffix.clear();
                suffix.resize(e - s + 1, 1.0);
                for i in (0..e - s).rev() {
                    suffix[i] = suffix[i + 1] * t[i];
                }
                let mut prefix = 1.0;
                for i in 0..e - s {
                    let p: f64 = prefix * suffix[i + 1];
                    c2v[s + i] = clamp(2.0 * p.atanh());
                    prefix *= t[i];
                }
            }
            for (v, edges) in self.var_edges.iter().enumerate() {
                let total = llr[v] + edges.iter().map(|&e| c2v[e]).sum::<f64>();
                for &e in edges {
                    v2c[e] = clamp(total - c2v[e]);
                }
                bits[v] = u8::from(total < 0.0);
            }
            if cfg.early_stop && self.syndrome_zero(&bits) {
                return Ok(BpResult {
                    bits,
                    converged: true,
                    iters_used: it + 1,
                });
            }
        }
        Ok(BpResult {
            converged: self.syndrome_zero(&bits),
            bits,
            iters_used: cfg.max_iters,
        })
    }
}

pub fn decode(pcm: &ParityCheckMatrix, llr: &[f64], cfg: &BpConfig) -> Result<BpResult, BpError> {
    BpGraph::new(pcm).decode(llr, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_get;
    use crate::code::{permute_columns, syndrome};

    #[test]
    fn llr_examples() {
        assert_eq!(channel_llr(&[1.0, 0.0], 1.0).unwrap(), vec![2.0, 0.0]);
        let a = channel_llr(&[0.7], 1.0).unwrap()[0];
        let b = channel_llr(&[0.7], 2.0).unwrap()[0];
        assert!((a / 4.0 - b).abs() < 1e-15);
        assert!(channel_llr(&[1.0], 0.0).is_err());
    }

    #[test]
    fn noiseless_input_converges_in_one_iteration() {
        let code = catalog_get("LDPC_24_12").unwrap();
        let r = decode(&code.pcm, &vec![20.0; 24], &BpConfig::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iters_used, 1);
        assert_eq!(r.bits, vec![0; 24]);
    }

    #[test]
    fn hamming_single_flips_are_corrected() {
        let code = catalog_get("HAMMING_7_4").unwrap();
        for pos in 0..7 {
            let mut llr = vec![2.0; 7];
            llr[pos] = -2.0;
            let r = decode(&code.pcm, &llr, &BpConfig::default()).unwrap();
            assert!(r.converged, "flip at {pos}");
            assert_eq!(r.bits, vec![0; 7], "flip at {pos}");
        }
    }

    #[test]
    fn converged_implies_zero_syndrome_and_permutation_equivariance() {
        let code = catalog_get("BCH_15_7").unwrap();
        let llr: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64 - 3.0) * 0.6).collect();
        let r = decode(&code.pcm, &llr, &BpConfig::default()).unwrap();
        if r.converged {
            assert!(syndrome(&code.pcm, &r.bits)
                .unwrap()
                .iter()
                .all(|&b| b == 0));
        }
        let perm: Vec<usize> = (0..15).map(|i| (i * 4) % 15).collect();
        let permuted = permute_columns(&code.pcm, &perm).unwrap();
        let mut pllr = vec![0.0; 15];
        for (c, &p) in perm.iter().enumerate() {
            pllr[p] = llr[c];
        }
        let pr = decode(&permuted, &pllr, &BpConfig::default()).unwrap();
        for (c, &p) in perm.iter().enumerate() {
            assert_eq!(pr.bits[p], r.bits[c]);
        }
        assert_eq!(pr.converged, r.converged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let code = catalog_get("HAMMING_7_4").unwrap();
        let cfg = BpConfig {
            max_iters: 0,
            early_stop: true,
        };
        assert!(decode(&code.pcm, &[1.0; 7], &cfg).is_err());
        assert!(decode(&code.pcm, &[1.0; 6], &BpConfig::default()).is_err());
    }
}

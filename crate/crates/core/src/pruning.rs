//! Fisher importance of heads and FFN channels, budgeted mask selection,
//! and physical compaction of pruned units.

use crate::channel::substream;
use crate::code::LinearCode;
use crate::decoder::{
    bce_loss_grad, draw_training_sample, CodeLayout, DecoderError, DecoderModel, Gates,
    LayerWeights, Weights,
};
use crate::exec::Exec;
use crate::mask::{
    ffn_channel_flops, head_flops, DecoderArchitecture, MaskError, StructuredMask, UnitKind,
};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Substream id reserved for calibration frames.
const CALIB_STREAM: u64 = 0xCA11_B000;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("target ratio {0} outside [0, 1)")]
    BadRatio(f64),
    #[error("pruning budget unreachable: best achievable retained ratio {achievable:.6} > {required:.6}")]
    BudgetUnreachable { achievable: f64, required: f64 },
    #[error("importance score for {kind:?} {layer}/{index} is not a finite non-negative number")]
    BadScore {
        kind: UnitKind,
        layer: usize,
        index: usize,
    },
    #[error("calibration needs at least one frame")]
    NoFrames,
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub head_scores: Vec<Vec<f64>>,
    pub ffn_scores: Vec<Vec<f64>>,
    pub calib_frames: usize,
    pub calib_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibConfig {
    pub frames: usize,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            frames: 1024,
            snr_low_db: 2.0,
            snr_high_db: 7.0,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

/// Sums squared per-frame gate gradients, reducing in frame order.
pub fn accumulate_fisher<F>(
    frames: usize,
    exec: Exec,
    template: &Gates,
    gate_grad: F,
) -> Result<Gates, PruneError>
where
    F: Fn(usize) -> Result<Gates, PruneError> + Sync + Send,
{
    if frames == 0 {
        return Err(PruneError::NoFrames);
    }
    let parts = exec.try_map(frames, gate_grad)?;
    let mut acc = Gates {
        head: template.head.iter().map(|r| vec![0.0; r.len()]).collect(),
        ffn: template.ffn.iter().map(|r| vec![0.0; r.len()]).collect(),
    };
    for g in &parts {
        let sq = Gates {
            head: g
                .head
                .iter()
                .map(|r| r.iter().map(|v| v * v).collect())
                .collect(),
            ffn: g
                .ffn
                .iter()
                .map(|r| r.iter().map(|v| v * v).collect())
                .collect(),
        };
        acc.add_assign(&sq);
    }
    Ok(acc)
}

/// Diagonal-Fisher unit importance: `Σ_frames (∂L/∂g_u)²` at the model's
/// current gates, over all-zero-codeword calibration frames at per-frame
/// uniform Eb/N0.
pub fn fisher_importance(
    model: &DecoderModel,
    code: &LinearCode,
    calib: &CalibConfig,
) -> Result<ImportanceScores, PruneError> {
    let layout = CodeLayout::new(&code.pcm);
    let gates = model.gates();
    let rate = code.rate();
    let acc = accumulate_fisher(calib.frames, calib.exec, &gates, |i| {
        let mut rng = substream(calib.seed, CALIB_STREAM, i as u64);
        let s = draw_training_sample(&layout, rate, calib.snr_low_db, calib.snr_high_db, &mut rng)?;
        let (logits, cache) = model.forward_with_gates(&layout, &s.tokens, &gates)?;
        let (_, dl) = bce_loss_grad(&logits, &s.targets);
        Ok(model.backward(&layout, &gates, &cache, &dl)?.1)
    })?;
    Ok(ImportanceScores {
        head_scores: acc.head,
        ffn_scores: acc.ffn,
        calib_frames: calib.frames,
        calib_seed: calib.seed,
    })
}

/// A prunable unit for [`select_units`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub kind: UnitKind,
    pub layer: usize,
    pub index: usize,
    pub flops: f64,
    pub importance: f64,
}

fn removal_order(a: &Unit, b: &Unit) -> Ordering {
    a.importance
        .total_cmp(&b.importance)
        .then(a.kind.cmp(&b.kind))
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

/// Greedy removal in ascending importance (ties: FFN before heads, then
/// lower layer, then lower index) until the retained FLOPs fraction is at
/// most `1 − target_ratio`. The last remaining head is never removed.
/// Returns a keep flag per input unit.
pub fn select_units(units: &[Unit], target_ratio: f64) -> Result<Vec<bool>, PruneError> {
    if !(0.0..1.0).contains(&target_ratio) {
        return Err(PruneError::BadRatio(target_ratio));
    }
    for u in units {
        if !(u.importance.is_finite() && u.importance >= 0.0) {
            return Err(PruneError::BadScore {
                kind: u.kind,
                layer: u.layer,
                index: u.index,
            });
        }
    }
    let total: f64 = units.iter().map(|u| u.flops).sum();
    let budget = (1.0 - target_ratio) * total;
    let within = |retained: f64| retained <= budget + 1e-12 * total;
    let mut keep = vec![true; units.len()];
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| removal_order(&units[a], &units[b]));
    let mut retained = total;
    let mut heads_left = units.iter().filter(|u| u.kind == UnitKind::Head).count();
    for &i in &order {
        if within(retained) {
            break;
        }
        let u = &units[i];
        if u.kind == UnitKind::Head {
            if heads_left == 1 {
                continue;
            }
            heads_left -= 1;
        }
        keep[i] = false;
        retained -= u.flops;
    }
    if !within(retained) {
        return Err(PruneError::BudgetUnreachable {
            achievable: retained / total,
            required: 1.0 - target_ratio,
        });
    }
    Ok(keep)
}

/// Mask over `arch` meeting the FLOPs budget for sequences of `seq_len`.
pub fn select_mask(
    scores: &ImportanceScores,
    arch: &DecoderArchitecture,
    seq_len: usize,
    target_ratio: f64,
) -> Result<StructuredMask, PruneError> {
    let probe = StructuredMask {
        head_bits: scores
            .head_scores
            .iter()
            .map(|r| vec![true; r.len()])
            .collect(),
        ffn_bits: scores
            .ffn_scores
            .iter()
            .map(|r| vec![true; r.len()])
            .collect(),
    };
    probe.check_arch(arch)?;
    let hf = head_flops(arch.d_model, arch.head_dim(), seq_len);
    let ff = ffn_channel_flops(arch.d_model, seq_len);
    let mut units = Vec::new();
    for (layer, (hs, fs)) in scores
        .head_scores
        .iter()
        .zip(&scores.ffn_scores)
        .enumerate()
    {
        units.extend(hs.iter().enumerate().map(|(index, &importance)| Unit {
            kind: UnitKind::Head,
            layer,
            index,
            flops: hf,
            importance,
        }));
        units.extend(fs.iter().enumerate().map(|(index, &importance)| Unit {
            kind: UnitKind::Ffn,
            layer,
            index,
            flops: ff,
            importance,
        }));
    }
    let keep = select_units(&units, target_ratio)?;
    let mut mask = probe;
    for (u, k) in units.iter().zip(keep) {
        match u.kind {
            UnitKind::Head => mask.head_bits[u.layer][u.index] = k,
            UnitKind::Ffn => mask.ffn_bits[u.layer][u.index] = k,
        }
    }
    Ok(mask)
}

/// Copy of `model` with `mask` active.
pub fn apply_mask(model: &DecoderModel, mask: &StructuredMask) -> Result<DecoderModel, PruneError> {
    let mut m = model.clone();
    m.set_mask(mask.clone())?;
    Ok(m)
}

/// Physically removes every unit the active mask prunes. The result has an
/// all-ones mask over its reduced per-layer shapes.
pub fn compact(model: &DecoderModel) -> Result<DecoderModel, PruneError> {
    let mask = model.active_mask();
    let w = &model.weights;
    let (d, hd) = (w.d_model, w.head_dim);
    let mut out = Weights {
        layers: Vec::with_capacity(w.layers.len()),
        ..w.clone()
    };
    for (l, lw) in w.layers.iter().enumerate() {
        let heads: Vec<usize> = (0..lw.heads).filter(|&h| mask.head_bits[l][h]).collect();
        let chans: Vec<usize> = (0..lw.d_ffn).filter(|&c| mask.ffn_bits[l][c]).collect();
        let hdim = lw.heads * hd;
        let rows = |m: &[f64]| -> Vec<f64> {
            heads
                .iter()
                .flat_map(|&h| m[h * hd * d..(h + 1) * hd * d].iter().copied())
                .collect()
        };
        let mut wo = Vec::with_capacity(d * heads.len() * hd);
        for o in 0..d {
            for &h in &heads {
                wo.extend_from_slice(&lw.wo[o * hdim + h * hd..][..hd]);
            }
        }
        let mut w1 = Vec::with_capacity(chans.len() * d);
        for &c in &chans {
            w1.extend_from_slice(&lw.w1[c * d..][..d]);
        }
        let mut w2 = Vec::with_capacity(d * chans.len());
        for o in 0..d {
            w2.extend(chans.iter().map(|&c| lw.w2[o * lw.d_ffn + c]));
        }
        out.layers.push(LayerWeights {
            heads: heads.len(),
            d_ffn: chans.len(),
            ln1_g: lw.ln1_g.clone(),
            ln1_b: lw.ln1_b.clone(),
            wq: rows(&lw.wq),
            wk: rows(&lw.wk),
            wv: rows(&lw.wv),
            wo,
            ln2_g: lw.ln2_g.clone(),
            ln2_b: lw.ln2_b.clone(),
            w1,
            b1: chans.iter().map(|&c| lw.b1[c]).collect(),
            w2,
            b2: lw.b2.clone(),
        });
    }
    let mask = StructuredMask::all_ones(&out.shapes());
    Ok(DecoderModel::from_parts(model.arch, out, mask)?)
}

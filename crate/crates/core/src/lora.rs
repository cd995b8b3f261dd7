//! Low-rank adapters on the attention projections, distillation loss, the
//! recovery loop and adapter merging.
//!
//! Each adapted matrix becomes `W' = W + (α/r)·B·A` with `A: r × d_in` and
//! `B: d_out × r`. `B` starts at zero, so a fresh adapter set leaves the
//! backbone's outputs unchanged.

use crate::channel::substream;
use crate::code::{hard_decision_bit, LinearCode};
use crate::decoder::{
    bce_loss_grad, cosine_lr, draw_training_sample, sigmoid, Adam, CodeLayout, DecoderError,
    DecoderModel, LayerWeights, TrainingSample, Weights,
};

use crate::exec::Exec;
use crate::numfmt::{deserialize_vec, serialize_vec17};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ADAPTER_FORMAT_VERSION: u32 = 1;
/// Posterior clamp used by the distillation loss.
pub const KD_EPS: f64 = 1e-7;
const SCALING_RULE: &str = "alpha_over_r";

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("invalid LoRA config: {0}")]
    Config(String),
    #[error("adapter shape mismatch: {0}")]
    Shape(String),
    #[error("adapters were already merged")]
    AlreadyMerged,
    #[error("recovery diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("adapter file: {0}")]
    Format(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProjKind {
    Q,
    K,
    V,
    O,
}

impl ProjKind {
    pub const ALL: [ProjKind; 4] = [ProjKind::Q, ProjKind::K, ProjKind::V, ProjKind::O];
}

fn proj(lw: &LayerWeights, kind: ProjKind) -> &Vec<f64> {
    match kind {
        ProjKind::Q => &lw.wq,
        ProjKind::K => &lw.wk,
        ProjKind::V => &lw.wv,
        ProjKind::O => &lw.wo,
    }
}

fn proj_mut(lw: &mut LayerWeights, kind: ProjKind) -> &mut Vec<f64> {
    match kind {
        ProjKind::Q => &mut lw.wq,
        ProjKind::K => &mut lw.wk,
        ProjKind::V => &mut lw.wv,
        ProjKind::O => &mut lw.wo,
    }
}

/// `(d_out, d_in)` of a projection in a layer with `heads` heads.
fn proj_dims(d_model: usize, head_dim: usize, heads: usize, kind: ProjKind) -> (usize, usize) {
    let hdim = heads * head_dim;
    match kind {
        ProjKind::O => (d_model, hdim),
        _ => (hdim, d_model),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub layer: usize,
    pub kind: ProjKind,
    pub rank: usize,
    pub d_in: usize,
    pub d_out: usize,
    #[serde(
        serialize_with = "serialize_vec17",
        deserialize_with = "deserialize_vec"
    )]
    pub a: Vec<f64>,
    #[serde(
        serialize_with = "serialize_vec17",
        deserialize_with = "deserialize_vec"
    )]
    pub b: Vec<f64>,
}

impl LoraAdapter {
    pub fn scaling(&self, alpha: f64) -> f64 {
        alpha / self.rank as f64
    }

    /// `(α/r)·B·A` as a row-major `d_out × d_in` matrix.
    pub fn delta(&self, alpha: f64) -> Vec<f64> {
        let s = self.scaling(alpha);
        let mut out = vec![0.0; self.d_out * self.d_in];
        for o in 0..self.d_out {
            for k in 0..self.rank {
                let bk = s * self.b[o * self.rank + k];
                if bk == 0.0 {
                    continue;
                }
                let arow = &self.a[k * self.d_in..][..self.d_in];
                for (x, &y) in out[o * self.d_in..][..self.d_in].iter_mut().zip(arow) {
                    *x += bk * y;
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.rank * (self.d_in + self.d_out)
    }
}

/// `W' = W + (α/r)·B·A` for a row-major `d_out × d_in` matrix `w`.
pub fn lora_forward(w: &[f64], adapter: &LoraAdapter, alpha: f64) -> Result<Vec<f64>, LoraError> {
    if w.len() != adapter.d_out * adapter.d_in {
        return Err(LoraError::Shape(format!(
            "matrix has {} entries, adapter expects {}x{}",
            w.len(),
            adapter.d_out,
            adapter.d_in
        )));
    }
    let delta = adapter.delta(alpha);
    Ok(w.iter().zip(&delta).map(|(a, b)| a + b).collect())
}

/// Adapters for every Q/K/V/O projection of a (possibly compacted) backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapterSet {
    /// Requested rank; individual adapters may use less (see [`LoraAdapterSet::new`]).
    pub rank: usize,
    pub alpha: f64,
    pub adapters: Vec<LoraAdapter>,
}

impl LoraAdapterSet {
    /// Fresh adapters: `A ~ U(−1/√d_in, 1/√d_in)`, `B = 0`.
    ///
    /// A projection gets rank `min(rank, min(d_in, d_out)/2)`; projections of
    /// a layer whose heads were all pruned get no adapter.
    pub fn new(
        model: &DecoderModel,
        rank: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, LoraError> {
        if rank == 0 || !(alpha.is_finite() && alpha > 0.0) {
            return Err(LoraError::Config("rank must be >= 1 and alpha > 0".into()));
        }
        let w = &model.weights;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adapters = Vec::new();
        for (layer, lw) in w.layers.iter().enumerate() {
            for kind in ProjKind::ALL {
                let (d_out, d_in) = proj_dims(w.d_model, w.head_dim, lw.heads, kind);
                let r = rank.min(d_in.min(d_out) / 2);
                if r == 0 {
                    continue;
                }
                let bound = 1.0 / (d_in as f64).sqrt();
                let a = (0..r * d_in)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                adapters.push(LoraAdapter {
                    layer,
                    kind,
                    rank: r,
                    d_in,
                    d_out,
                    a,
                    b: vec![0.0; d_out * r],
                });
            }
        }
        Ok(Self {
            rank,
            alpha,
            adapters,
        })
    }

    pub fn param_count(&self) -> usize {
        self.adapters.iter().map(LoraAdapter::param_count).sum()
    }

    /// Errors unless every adapter fits the model's current tensor shapes.
    pub fn check(&self, model: &DecoderModel) -> Result<(), LoraError> {
        let w = &model.weights;
        for ad in &self.adapters {
            let lw = w.layers.get(ad.layer).ok_or_else(|| {
                LoraError::Shape(format!("adapter for missing layer {}", ad.layer))
            })?;
            let (d_out, d_in) = proj_dims(w.d_model, w.head_dim, lw.heads, ad.kind);
            if (d_out, d_in) != (ad.d_out, ad.d_in)
                || ad.a.len() != ad.rank * ad.d_in
                || ad.b.len() != ad.d_out * ad.rank
                || ad.rank == 0
            {
                return Err(LoraError::Shape(format!(
                    "layer {} {:?}: adapter {}x{} (rank {}) vs projection {d_out}x{d_in}",
                    ad.layer, ad.kind, ad.d_out, ad.d_in, ad.rank
                )));
            }
        }
        Ok(())
    }

    /// Copy of `model` with every adapter folded into its projection.
    pub fn effective_model(&self, model: &DecoderModel) -> Result<DecoderModel, LoraError> {
        self.check(model)?;
        let mut m = model.clone();
        for ad in &self.adapters {
            let w = proj_mut(&mut m.weights.layers[ad.layer], ad.kind);
            *w = lora_forward(w, ad, self.alpha)?;
        }
        Ok(m)
    }

    /// Adapter gradients from the gradient of the effective weights:
    /// `∂A = s·Bᵀ·G`, `∂B = s·G·Aᵀ`.
    fn grads_from(&self, g: &Weights) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.adapters
            .iter()
            .map(|ad| {
                let gw = proj(&g.layers[ad.layer], ad.kind);
                let s = ad.scaling(self.alpha);
                let (r, di, dout) = (ad.rank, ad.d_in, ad.d_out);
                let mut ga = vec![0.0; r * di];
                let mut gb = vec![0.0; dout * r];
                for o in 0..dout {
                    let grow = &gw[o * di..][..di];
                    for k in 0..r {
                        let bk = s * ad.b[o * r + k];
                        let arow = &ad.a[k * di..][..di];
                        let mut acc = 0.0;
                        for i in 0..di {
                            ga[k * di + i] += bk * grow[i];
                            acc += grow[i] * arow[i];
                        }
                        gb[o * r + k] = s * acc;
                    }
                }
                (ga, gb)
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String, LoraError> {
        let file = AdapterFile {
            version: ADAPTER_FORMAT_VERSION,
            rank: self.rank,
            alpha: self.alpha,
            scaling: SCALING_RULE.into(),
            adapters: self.adapters.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| LoraError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LoraError> {
        let f: AdapterFile =
            serde_json::from_str(text).map_err(|e| LoraError::Format(e.to_string()))?;
        if f.version != ADAPTER_FORMAT_VERSION {
            return Err(LoraError::Format(format!(
                "unsupported adapter version {}, expected {ADAPTER_FORMAT_VERSION}",
                f.version
            )));
        }
        if f.scaling != SCALING_RULE {
            return Err(LoraError::Format(format!(
                "unknown scaling rule {:?}, expected {SCALING_RULE:?}",
                f.scaling
            )));
        }
        Ok(Self {
            rank: f.rank,
            alpha: f.alpha,
            adapters: f.adapters,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AdapterFile {
    version: u32,
    rank: usize,
    alpha: f64,
    /// How `B·A` is scaled before being added to `W`.
    scaling: String,
    adapters: Vec<LoraAdapter>,
}

/// Folds `adapters` into `student`, consuming them.
pub fn merge(student: &DecoderModel, adapters: LoraAdapterSet) -> Result<DecoderModel, LoraError> {
    adapters.effective_model(student)
}

/// A backbone with attached adapters. Merging is one-way: afterwards the
/// adapters are gone and a second merge is rejected.
#[derive(Debug, Clone)]
pub struct AdaptedModel {
    backbone: DecoderModel,
    adapters: Option<LoraAdapterSet>,
}

impl AdaptedModel {
    pub fn new(backbone: DecoderModel, adapters: LoraAdapterSet) -> Result<Self, LoraError> {
        adapters.check(&backbone)?;
        Ok(Self {
            backbone,
            adapters: Some(adapters),
        })
    }

    pub fn backbone(&self) -> &DecoderModel {
        &self.backbone
    }

    pub fn adapters(&self) -> Option<&LoraAdapterSet> {
        self.adapters.as_ref()
    }

    pub fn is_merged(&self) -> bool {
        self.adapters.is_none()
    }

    /// Logits through the adapter path (or the merged weights).
    pub fn logits(&self, layout: &CodeLayout, y: &[f64]) -> Result<Vec<f64>, LoraError> {
        match &self.adapters {
            Some(a) => Ok(a.effective_model(&self.backbone)?.logits(layout, y)?),
            None => Ok(self.backbone.logits(layout, y)?),
        }
    }

    /// Decoder usable for evaluation: backbone with adapters folded in.
    pub fn to_model(&self) -> Result<DecoderModel, LoraError> {
        match &self.adapters {
            Some(a) => a.effective_model(&self.backbone),
            None => Ok(self.backbone.clone()),
        }
    }

    pub fn merge(&mut self) -> Result<(), LoraError> {
        let adapters = self.adapters.take().ok_or(LoraError::AlreadyMerged)?;
        self.backbone = merge(&self.backbone, adapters)?;
        Ok(())
    }
}

fn posterior(y: f64, logit: f64) -> f64 {
    let sign = if hard_decision_bit(y) == 0 { 1.0 } else { -1.0 };
    sigmoid(sign * logit)
}

/// Mean Bernoulli KL divergence from teacher to student posteriors
/// `q = σ(sign(y)·logit)`, both clamped to `[ε, 1 − ε]`.
pub fn kd_loss(teacher: &[f64], student: &[f64], y: &[f64]) -> f64 {
    kd_loss_grad(teacher, student, y).0
}

/// KD loss and its gradient with respect to the student logits.
pub fn kd_loss_grad(teacher: &[f64], student: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = teacher.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(teacher.len());
    for ((&ft, &fs), &yj) in teacher.iter().zip(student).zip(y) {
        let qt = posterior(yj, ft).clamp(KD_EPS, 1.0 - KD_EPS);
        let qs_raw = posterior(yj, fs);
        let qs = qs_raw.clamp(KD_EPS, 1.0 - KD_EPS);
        loss += qt * (qt / qs).ln() + (1.0 - qt) * ((1.0 - qt) / (1.0 - qs)).ln();
        let sign = if hard_decision_bit(yj) == 0 {
            1.0
        } else {
            -1.0
        };
        grad.push(if qs == qs_raw {
            sign * (qs - qt) / n
        } else {
            0.0
        });
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub rank: usize,
    pub alpha: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epochs: 10,
            steps_per_epoch: 50,
            batch_size: 32,
            rank: 8,
            alpha: 16.0,
            lr_start: 2e-3,
            lr_end: 1e-5,
            snr_low_db: 2.0,
            snr_high_db: 7.0,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<(), LoraError> {
        let bad = |m: &str| Err(LoraError::Config(m.into()));
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be finite and >= 0");
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be >= 1");
        }
        if self.rank == 0 {
            return bad("rank must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if !(self.snr_low_db <= self.snr_high_db) {
            return bad("snr_low_db must not exceed snr_high_db");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    pub adapters: LoraAdapterSet,
    pub epoch_loss: Vec<f64>,
    /// Number of frames for which the distillation term was computed.
    pub kd_evaluations: usize,
}

/// Trains adapters on the frozen `student` against `BCE + γ·KD(teacher)`.
pub fn recover(
    student: &DecoderModel,
    teacher: &DecoderModel,
    code: &LinearCode,
    cfg: &RecoveryConfig,
) -> Result<RecoveryReport, LoraError> {
    cfg.validate()?;
    let layout = CodeLayout::new(&code.pcm);
    let rate = code.rate();
    let mut adapters = LoraAdapterSet::new(student, cfg.rank, cfg.alpha, cfg.seed)?;
    let sizes: Vec<usize> = adapters
        .adapters
        .iter()
        .flat_map(|a| [a.a.len(), a.b.len()])
        .collect();
    let mut opt = Adam::new(&sizes);
    let total = cfg.epochs * cfg.steps_per_epoch;
    let use_kd = cfg.gamma > 0.0;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut acc = 0.0;
    let mut kd_evaluations = 0;
    for step in 0..total {
        let samples: Vec<TrainingSample> = cfg.exec.try_map(cfg.batch_size, |i| {
            let mut rng = substream(cfg.seed, step as u64, i as u64);
            draw_training_sample(&layout, rate, cfg.snr_low_db, cfg.snr_high_db, &mut rng)
        })?;
        let eff = adapters.effective_model(student)?;
        let gates = eff.gates();
        let parts = cfg.exec.try_map(samples.len(), |i| {
            let s = &samples[i];
            let (logits, cache) = eff.forward_with_gates(&layout, &s.tokens, &gates)?;
            let (mut loss, mut dl) = bce_loss_grad(&logits, &s.targets);
            if use_kd {
                let t = teacher.forward(&layout, &s.tokens)?;
                let (kd, dk) = kd_loss_grad(&t, &logits, &s.y);
                loss += cfg.gamma * kd;
                dl.iter_mut()
                    .zip(&dk)
                    .for_each(|(a, b)| *a += cfg.gamma * b);
            }
            let (g, _) = eff.backward(&layout, &gates, &cache, &dl)?;
            Ok::<_, DecoderError>((loss, g))
        })?;
        if use_kd {
            kd_evaluations += samples.len();
        }
        let mut grad = eff.weights.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            grad.add_assign(g);
        }
        let inv = 1.0 / samples.len() as f64;
        grad.scale(inv);
        loss *= inv;
        if !loss.is_finite() {
            return Err(LoraError::Diverged { step, loss });
        }
        let ad_grads = adapters.grads_from(&grad);
        let lr = cosine_lr(step, total, cfg.lr_start, cfg.lr_end);
        let params: Vec<&mut Vec<f64>> = adapters
            .adapters
            .iter_mut()
            .flat_map(|a| [&mut a.a, &mut a.b])
            .collect();
        let grads: Vec<&Vec<f64>> = ad_grads.iter().flat_map(|(ga, gb)| [ga, gb]).collect();
        opt.step(params, grads, lr);
        acc += loss;
        if (step + 1) % cfg.steps_per_epoch == 0 {
            epoch_loss.push(acc / cfg.steps_per_epoch as f64);
            acc = 0.0;
        }
    }
    Ok(RecoveryReport {
        adapters,
        epoch_loss,
        kd_evaluations,
    })
}

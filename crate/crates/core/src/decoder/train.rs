//! Training loop: all-zero codewords over AWGN at per-sample random SNR.

use super::model::{bce_loss_grad, DecoderModel, Weights};
use super::optim::{cosine_lr, Adam};
use super::{flip_targets, tokenize, CodeLayout, DecoderError};
use crate::channel::{sigma_for, substream};
use crate::code::LinearCode;
use crate::exec::Exec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub snr_low_db: f64,
    pub snr_high_db: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            steps_per_epoch: 100,
            batch_size: 32,
            lr_start: 2e-3,
            lr_end: 1e-5,
            snr_low_db: 2.0,
            snr_high_db: 7.0,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |m: &str| Err(DecoderError::Config(m.into()));
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be >= 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if !(self.snr_low_db.is_finite()
            && self.snr_high_db.is_finite()
            && self.snr_low_db <= self.snr_high_db)
        {
            return bad("snr_low_db must not exceed snr_high_db");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub y: Vec<f64>,
    pub tokens: Vec<f64>,
    pub targets: Vec<f64>,
}

/// One all-zero-codeword frame at an Eb/N0 drawn uniformly from `[lo, hi]` dB.
pub fn draw_training_sample(
    layout: &CodeLayout,
    rate: f64,
    snr_low_db: f64,
    snr_high_db: f64,
    rng: &mut impl Rng,
) -> Result<TrainingSample, DecoderError> {
    let ebn0 = if snr_high_db > snr_low_db {
        rng.gen_range(snr_low_db..snr_high_db)
    } else {
        snr_low_db
    };
    let sigma = sigma_for(ebn0, rate);
    let y: Vec<f64> = (0..layout.n())
        .map(|_| 1.0 + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(TrainingSample {
        tokens: tokenize(&layout.pcm, &y)?,
        targets: flip_targets(&y),
        y,
    })
}

/// Mean BCE and its gradient over `samples`. Per-sample gradients are
/// summed in index order whatever the execution policy.
pub fn batch_gradient(
    model: &DecoderModel,
    layout: &CodeLayout,
    samples: &[TrainingSample],
    exec: Exec,
) -> Result<(f64, Weights), DecoderError> {
    let gates = model.gates();
    let parts = exec.try_map(samples.len(), |i| {
        let s = &samples[i];
        let (logits, cache) = model.forward_with_gates(layout, &s.tokens, &gates)?;
        let (loss, dl) = bce_loss_grad(&logits, &s.targets);
        let (g, _) = model.backward(layout, &gates, &cache, &dl)?;
        Ok::<_, DecoderError>((loss, g))
    })?;
    let mut total = model.weights.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let inv = 1.0 / samples.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

pub fn train(
    model: &mut DecoderModel,
    code: &LinearCode,
    cfg: &TrainConfig,
) -> Result<TrainReport, DecoderError> {
    train_mixture(model, std::slice::from_ref(code), cfg)
}

/// Trains on several codes, cycling through them one per step.
pub fn train_mixture(
    model: &mut DecoderModel,
    codes: &[LinearCode],
    cfg: &TrainConfig,
) -> Result<TrainReport, DecoderError> {
    cfg.validate()?;
    if codes.is_empty() {
        return Err(DecoderError::Config("no training codes".into()));
    }
    let layouts: Vec<CodeLayout> = codes.iter().map(|c| CodeLayout::new(&c.pcm)).collect();
    let sizes: Vec<usize> = model
        .weights
        .tensors()
        .iter()
        .map(|(_, t)| t.len())
        .collect();
    let mut opt = Adam::new(&sizes);
    let total = cfg.total_steps();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut acc = 0.0;
    for step in 0..total {
        let ci = step % codes.len();
        let layout = &layouts[ci];
        let rate = codes[ci].rate();
        let samples = cfg.exec.try_map(cfg.batch_size, |i| {
            let mut rng = substream(cfg.seed, step as u64, i as u64);
            draw_training_sample(layout, rate, cfg.snr_low_db, cfg.snr_high_db, &mut rng)
        })?;
        let (loss, grad) = batch_gradient(model, layout, &samples, cfg.exec)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(DecoderError::Diverged { step, loss });
        }
        let lr = cosine_lr(step, total, cfg.lr_start, cfg.lr_end);
        let params: Vec<&mut Vec<f64>> = model
            .weights
            .tensors_mut()
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let grads: Vec<&Vec<f64>> = grad.tensors().into_iter().map(|(_, t)| t).collect();
        opt.step(params, grads, lr);
        acc += loss;
        if (step + 1) % cfg.steps_per_epoch == 0 {
            epoch_loss.push(acc / cfg.steps_per_epoch as f64);
            acc = 0.0;
        }
    }
    Ok(TrainReport {
        epoch_loss,
        steps: total,
    })
}

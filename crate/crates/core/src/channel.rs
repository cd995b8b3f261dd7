//! BPSK over AWGN and Monte-Carlo BER/FER estimation.
//!
//! Noise is parameterized by Eb/N0 with unit symbol energy:
//! `σ² = 1 / (2 · rate · 10^(Eb/N0 / 10))`.
//!
//! Every frame draws from its own ChaCha substream keyed by
//! `(seed, point index, frame index)`, so the numbers reported for a point do
//! not depend on how frames are spread over workers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{encode, CodeError, LinearCode};
use crate::exec::Exec;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error(
        "decoder returned {got} bits for a length-{n} code (Eb/N0 {ebn0_db} dB, frame {frame})"
    )]
    DecoderOutput {
        got: usize,
        n: usize,
        ebn0_db: f64,
        frame: u64,
    },
    #[error(transparent)]
    Code(#[from] CodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub ebn0_db: f64,
    pub rate: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(ebn0_db: f64, rate: f64, seed: u64) -> Result<Self, ChannelError> {
        let cfg = Self {
            ebn0_db,
            rate,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(ChannelError::InvalidConfig(format!(
                "rate {} outside (0, 1]",
                self.rate
            )));
        }
        if !self.ebn0_db.is_finite() {
            return Err(ChannelError::InvalidConfig("Eb/N0 must be finite".into()));
        }
        Ok(())
    }
}

/// `0 → +1`, `1 → −1`.
pub fn modulate_bpsk(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| 1.0 - 2.0 * f64::from(b & 1)).collect()
}

pub fn sigma_for(ebn0_db: f64, rate: f64) -> f64 {
    (1.0 / (2.0 * rate * 10f64.powf(ebn0_db / 10.0))).sqrt()
}

pub fn noise_sigma(cfg: &ChannelConfig) -> f64 {
    sigma_for(cfg.ebn0_db, cfg.rate)
}

/// Deterministic RNG substream for `(seed, stream, index)`.
pub fn substream(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 24);
    rng
}

/// `y = x_s + z`, `z ~ N(0, σ²)` i.i.d.
pub fn transmit(cfg: &ChannelConfig, x_s: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    add_noise(x_s, noise_sigma(cfg), rng)
}

pub fn add_noise(x_s: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    x_s.iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            x + sigma * z
        })
        .collect()
}

/// Gaussian tail probability `Q(t) = ½ erfc(t / √2)`.
pub fn q_function(t: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub min_frames: u64,
    /// Minimum number of bit errors before a point may stop.
    pub min_errors: u64,
    /// Hard cap on frames per point; wins over `min_errors`.
    pub max_frames: u64,
    /// Frames simulated between stopping checks.
    pub block: u64,
    /// Transmit uniformly random codewords instead of the all-zero word.
    pub random_codewords: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            min_frames: 1000,
            min_errors: 100,
            max_frames: 1_000_000,
            block: 256,
            random_codewords: false,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub ebn0_db: f64,
    pub ber: f64,
    pub fer: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
    pub seed: u64,
}

impl EvalPoint {
    /// Standard error of the BER estimate under a binomial model.
    pub fn ber_std_error(&self, n: usize) -> f64 {
        let bits = (self.frames * n as u64) as f64;
        (self.ber * (1.0 - self.ber) / bits).sqrt()
    }
}

/// Runs frames through `transmit → decoder` for each Eb/N0 point.
///
/// `decoder` receives the channel output and the noise standard deviation
/// and must return `n` hard decisions.
pub fn evaluate<D>(
    points: &[ChannelConfig],
    code: &LinearCode,
    decoder: D,
    opts: &EvalOptions,
) -> Result<Vec<EvalPoint>, ChannelError>
where
    D: Fn(&[f64], f64) -> Vec<u8> + Sync,
{
    if opts.min_frames == 0 {
        return Err(ChannelError::InvalidConfig(
            "min_frames must be >= 1".into(),
        ));
    }
    let n = code.n();
    if opts.random_codewords && code.gen.is_none() {
        return Err(CodeError::MissingGenerator(code.name.clone()).into());
    }
    let mut out = Vec::with_capacity(points.len());
    for (pi, cfg) in points.iter().enumerate() {
        cfg.validate()?;
        let sigma = noise_sigma(cfg);
        let (mut frames, mut bit_errors, mut frame_errors) = (0u64, 0u64, 0u64);
        let max_frames = opts.max_frames.max(opts.min_frames);
        loop {
            let done_min = frames >= opts.min_frames;
            if done_min && (bit_errors >= opts.min_errors || frames >= max_frames) {
                break;
            }
            let want = if done_min {
                opts.block
            } else {
                opts.block.min(opts.min_frames - frames)
            };
            let len = want.min(max_frames - frames).max(1);
            let start = frames;
            let results = opts.exec.try_map(len as usize, |i| {
                let frame = start + i as u64;
                let mut rng = substream(cfg.seed, pi as u64, frame);
                let word = if opts.random_codewords {
                    let msg: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..=1u8)).collect();
                    encode(code, &msg)?
                } else {
                    vec![0u8; n]
                };
                let y = add_noise(&modulate_bpsk(&word), sigma, &mut rng);
                let est = decoder(&y, sigma);
                if est.len() != n {
                    return Err(ChannelError::DecoderOutput {
                        got: est.len(),
                        n,
                        ebn0_db: cfg.ebn0_db,
                        frame,
                    });
                }
                Ok(est.iter().zip(&word).filter(|(a, b)| a != b).count() as u64)
            })?;
            for e in results {
                bit_errors += e;
                frame_errors += u64::from(e > 0);
            }
            frames += len;
        }
        out.push(EvalPoint {
            ebn0_db: cfg.ebn0_db,
            ber: bit_errors as f64 / (frames * n as u64) as f64,
            fer: frame_errors as f64 / frames as f64,
            frames,
            bit_errors,
            frame_errors,
            seed: cfg.seed,
        });
    }
    Ok(out)
}

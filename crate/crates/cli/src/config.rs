//! TOML run configuration.
//!
//! The top-level `seed` is copied into every stage (training, calibration,
//! recovery, evaluation), so a run is determined by the file alone.

use std::path::{Path, PathBuf};

use sap_core::catalog::catalog_get;
use sap_core::code::{CodeFamily, LinearCode};
use sap_core::decoder::TrainConfig;
use sap_core::exec::Exec;
use sap_core::experiment::PairSpec;
use sap_core::library::DEFAULT_TAU;
use sap_core::lora::RecoveryConfig;
use sap_core::mask::DecoderArchitecture;
use sap_core::pruning::CalibConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSpec {
    /// Catalog key.
    pub name: Option<String>,
    /// Path to an alist file, relative to the config file.
    pub alist: Option<PathBuf>,
    /// Extra catalog codes mixed into training.
    #[serde(default)]
    pub mixture: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ffn: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub target_ratio: f64,
    /// Sweep; overrides `target_ratio` when non-empty.
    pub ratios: Vec<f64>,
    pub calib: CalibConfig,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            target_ratio: 0.4,
            ratios: Vec::new(),
            calib: CalibConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub snr_db: Vec<f64>,
    pub min_frames: u64,
    pub min_errors: u64,
    pub max_frames: u64,
    pub block: u64,
    pub random_codewords: bool,
    pub bp_iters: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            snr_db: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            min_frames: 1000,
            min_errors: 100,
            max_frames: 100_000,
            block: 256,
            random_codewords: false,
            bp_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateSection {
    pub seeds: Vec<u64>,
    pub k: usize,
    pub beta_adjacency: f64,
    pub target_ratio: f64,
    /// Empty means the built-in pair list.
    pub pairs: Vec<PairSpec>,
}

impl Default for CorrelateSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            k: 20,
            beta_adjacency: 0.1,
            target_ratio: 0.4,
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LibrarySection {
    pub k: usize,
    pub tau: f64,
    pub beta: f64,
}

impl Default for LibrarySection {
    fn default() -> Self {
        Self {
            k: 20,
            tau: DEFAULT_TAU,
            beta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub code: CodeSpec,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub recover: RecoveryConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub correlate: CorrelateSection,
    #[serde(default)]
    pub library: LibrarySection,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn invalid(field: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn unit_interval(field: &str, v: f64) -> Result<(), CliError> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must lie in [0, 1)")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::new(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "<root>".to_string()
            } else {
                path
            };
            invalid(&field, e.into_inner().message().trim().to_string())
        })?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Copies the top-level seed and executor into every stage.
    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.train.exec = self.exec;
        self.prune.calib.seed = self.seed;
        self.prune.calib.exec = self.exec;
        self.recover.seed = self.seed;
        self.recover.exec = self.exec;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.code.name, &self.code.alist) {
            (None, None) => {
                return Err(invalid("code.name", "missing; set code.name or code.alist"))
            }
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "code.alist",
                    "code.name and code.alist are mutually exclusive",
                ))
            }
            _ => {}
        }
        if let Some(name) = &self.code.name {
            catalog_get(name).map_err(|e| invalid("code.name", e.to_string()))?;
        }
        for (i, name) in self.code.mixture.iter().enumerate() {
            catalog_get(name).map_err(|e| invalid(&format!("code.mixture[{i}]"), e.to_string()))?;
        }
        self.arch()?;
        self.train
            .validate()
            .map_err(|e| invalid("train", e.to_string()))?;
        unit_interval("prune.target_ratio", self.prune.target_ratio)?;
        for (i, &r) in self.prune.ratios.iter().enumerate() {
            unit_interval(&format!("prune.ratios[{i}]"), r)?;
        }
        if self.prune.calib.frames == 0 {
            return Err(invalid("prune.calib.frames", "must be >= 1"));
        }
        if !(self.prune.calib.snr_low_db <= self.prune.calib.snr_high_db) {
            return Err(invalid("prune.calib.snr_high_db", "must be >= snr_low_db"));
        }
        self.recover
            .validate()
            .map_err(|e| invalid("recover", e.to_string()))?;
        if self.eval.snr_db.is_empty() {
            return Err(invalid("eval.snr_db", "must list at least one point"));
        }
        if let Some(i) = self.eval.snr_db.iter().position(|v| !v.is_finite()) {
            return Err(invalid(&format!("eval.snr_db[{i}]"), "must be finite"));
        }
        if self.eval.min_frames == 0 {
            return Err(invalid("eval.min_frames", "must be >= 1"));
        }
        if self.eval.block == 0 {
            return Err(invalid("eval.block", "must be >= 1"));
        }
        if self.eval.bp_iters == 0 {
            return Err(invalid("eval.bp_iters", "must be >= 1"));
        }
        if self.correlate.seeds.is_empty() {
            return Err(invalid("correlate.seeds", "must list at least one seed"));
        }
        if self.correlate.k == 0 {
            return Err(invalid("correlate.k", "must be >= 1"));
        }
        if !(self.correlate.beta_adjacency > 0.0) {
            return Err(invalid("correlate.beta_adjacency", "must be positive"));
        }
        unit_interval("correlate.target_ratio", self.correlate.target_ratio)?;
        if self.library.k == 0 {
            return Err(invalid("library.k", "must be >= 1"));
        }
        if !(self.library.tau > 0.0 && self.library.tau <= 1.0) {
            return Err(invalid("library.tau", "must lie in (0, 1]"));
        }
        if !(self.library.beta > 0.0 && self.library.beta.is_finite()) {
            return Err(invalid("library.beta", "must be positive"));
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<DecoderArchitecture, CliError> {
        let d = DecoderArchitecture::default();
        let a = self.arch;
        DecoderArchitecture::new(
            a.layers.unwrap_or(d.layers),
            a.heads.unwrap_or(d.heads),
            a.d_model.unwrap_or(d.d_model),
            a.d_ffn.unwrap_or(d.d_ffn),
        )
        .map_err(|e| invalid("arch", e.to_string()))
    }

    /// The configured target code.
    pub fn code(&self) -> Result<LinearCode, CliError> {
        if let Some(name) = &self.code.name {
            return catalog_get(name).map_err(|e| invalid("code.name", e.to_string()));
        }
        let rel = self.code.alist.as_ref().expect("validated");
        let path = self.base_dir.join(rel);
        load_alist_code(&path).map_err(|e| match e {
            CliError::Format(msg) => invalid("code.alist", msg),
            other => other,
        })
    }

    /// Target code followed by the mixture codes.
    pub fn training_codes(&self) -> Result<Vec<LinearCode>, CliError> {
        let mut codes = vec![self.code()?];
        for (i, name) in self.code.mixture.iter().enumerate() {
            codes.push(
                catalog_get(name)
                    .map_err(|e| invalid(&format!("code.mixture[{i}]"), e.to_string()))?,
            );
        }
        Ok(codes)
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_alist_code(path: &Path) -> Result<LinearCode, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let pcm = sap_core::alist::load_alist(&text)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".into());
    LinearCode::with_generator(name, CodeFamily::Custom, pcm)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// A code given either as a catalog key or as an alist path.
pub fn resolve_code(name_or_path: &str) -> Result<LinearCode, CliError> {
    match catalog_get(name_or_path) {
        Ok(c) => Ok(c),
        Err(e) => {
            let p = Path::new(name_or_path);
            if p.exists() {
                load_alist_code(p)
            } else {
                Err(CliError::Usage(e.to_string()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse("seed = 7\n[code]\nname = \"HAMMING_7_4\"\n").unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.recover.seed, 7);
        assert_eq!(c.prune.calib.seed, 7);
        assert_eq!(c.arch().unwrap(), DecoderArchitecture::default());
        assert_eq!(c.code().unwrap().n(), 7);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match RunConfig::parse(text) {
            Err(CliError::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("seed = 1\n"), "code.name");
        assert_eq!(
            field("[code]\nname = \"HAMMING_7_4\"\n[train]\nlr_start = \"x\"\n"),
            "train.lr_start"
        );
        assert_eq!(
            field("[code]\nname = \"HAMMING_7_4\"\n[train]\nbogus = 1\n"),
            "train.bogus"
        );
        assert_eq!(
            field("[code]\nname = \"HAMMING_7_4\"\n[prune]\nratios = [0.2, 1.5]\n"),
            "prune.ratios[1]"
        );
        assert_eq!(field("[code]\nname = \"NOPE\"\n"), "code.name");
        assert_eq!(
            field("[code]\nname = \"HAMMING_7_4\"\n[library]\ntau = 0.0\n"),
            "library.tau"
        );
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse("[code]\nname = \"HAMMING_7_4\"\n").unwrap();
        let b = RunConfig::parse("[code]\nname = \"HAMMING_7_4\"\n").unwrap();
        let c = RunConfig::parse("seed = 1\n[code]\nname = \"HAMMING_7_4\"\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}

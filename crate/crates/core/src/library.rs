//! The mask library: spectral nearest-neighbour retrieval, the threshold
//! reuse rule and append-only expansion.

use crate::code::ParityCheckMatrix;
use crate::mask::{DecoderArchitecture, MaskError, MaskFile, StructuredMask};
use crate::numfmt::{deserialize_vec, serialize_vec17};
use crate::spectrum::{
    spectral_distance, spectral_signature, SignatureKind, SpectralSignature, SpectrumError,
    DEFAULT_BETA, DEFAULT_K,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const LIBRARY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library is empty; derive a mask and insert it (select_or_create takes that path)")]
    Empty,
    #[error("signature has K={got}, library uses K={expected}")]
    KMismatch { expected: usize, got: usize },
    #[error("invalid library parameters: {0}")]
    Params(String),
    #[error("unsupported library version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("library file: {0}")]
    Format(String),
    #[error("mask derivation failed: {0}")]
    Derive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryEntry {
    pub label: String,
    /// Unix seconds.
    pub created_at: u64,
    pub signature: SpectralSignature,
    pub mask: StructuredMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retrieval {
    pub index: usize,
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Reused,
    Created,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Reused => "REUSED",
            Decision::Created => "CREATED",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: StructuredMask,
    pub decision: Decision,
    /// Nearest entry before any insertion; `None` for an empty library.
    pub retrieval: Option<Retrieval>,
    /// Index of the returned mask's entry.
    pub entry_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskLibrary {
    pub k: usize,
    pub tau: f64,
    pub beta: f64,
    pub arch: DecoderArchitecture,
    entries: Vec<LibraryEntry>,
}

/// Creation timestamp: `SOURCE_DATE_EPOCH` when set, else the clock.
pub fn timestamp_now() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl MaskLibrary {
    pub fn new(
        arch: DecoderArchitecture,
        k: usize,
        tau: f64,
        beta: f64,
    ) -> Result<Self, LibraryError> {
        arch.validate()?;
        if k == 0 {
            return Err(LibraryError::Params("K must be >= 1".into()));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(LibraryError::Params(format!("tau {tau} outside (0, 1]")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(LibraryError::Params(format!(
                "beta {beta} must be positive"
            )));
        }
        Ok(Self {
            k,
            tau,
            beta,
            arch,
            entries: Vec::new(),
        })
    }

    /// Library with K=20, τ=0.5, β=0.1.
    pub fn with_defaults(arch: DecoderArchitecture) -> Self {
        Self::new(arch, DEFAULT_K, DEFAULT_TAU, DEFAULT_BETA).expect("default parameters are valid")
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn signature_of(&self, pcm: &ParityCheckMatrix) -> Result<SpectralSignature, LibraryError> {
        Ok(spectral_signature(pcm, self.k)?)
    }

    /// Appends an entry after checking it against the library's K and architecture.
    pub fn insert(&mut self, entry: LibraryEntry) -> Result<usize, LibraryError> {
        self.check_signature(&entry.signature)?;
        entry.mask.check_arch(&self.arch)?;
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }

    fn check_signature(&self, sig: &SpectralSignature) -> Result<(), LibraryError> {
        if sig.k_used() != self.k {
            return Err(LibraryError::KMismatch {
                expected: self.k,
                got: sig.k_used(),
            });
        }
        if sig.kind != SignatureKind::Adjacency {
            return Err(LibraryError::Params(
                "library signatures must be adjacency spectra".into(),
            ));
        }
        Ok(())
    }

    /// Nearest entry by spectral distance; ties go to the lowest index.
    pub fn retrieve(&self, sig: &SpectralSignature) -> Result<Retrieval, LibraryError> {
        if self.entries.is_empty() {
            return Err(LibraryError::Empty);
        }
        self.check_signature(sig)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = spectral_distance(sig, &e.signature)?;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        let (index, distance) = best.expect("nonempty");
        Ok(Retrieval {
            index,
            distance,
            similarity: (-self.beta * distance).exp(),
        })
    }

    /// Reuses the nearest mask when `κ* ≥ τ`; otherwise derives a new mask,
    /// appends it and returns it. On derivation failure the library is unchanged.
    pub fn select_or_create<F, E>(
        &mut self,
        label: &str,
        pcm: &ParityCheckMatrix,
        derive_mask: F,
    ) -> Result<Selection, LibraryError>
    where
        F: FnOnce(&ParityCheckMatrix) -> Result<StructuredMask, E>,
        E: std::fmt::Display,
    {
        let sig = self.signature_of(pcm)?;
        let retrieval = if self.entries.is_empty() {
            None
        } else {
            Some(self.retrieve(&sig)?)
        };
        if let Some(r) = retrieval {
            if r.similarity >= self.tau {
                return Ok(Selection {
                    mask: self.entries[r.index].mask.clone(),
                    decision: Decision::Reused,
                    retrieval,
                    entry_index: r.index,
                });
            }
        }
        let mask = derive_mask(pcm).map_err(|e| LibraryError::Derive(e.to_string()))?;
        let entry_index = self.insert(LibraryEntry {
            label: label.to_string(),
            created_at: timestamp_now(),
            signature: sig,
            mask: mask.clone(),
        })?;
        Ok(Selection {
            mask,
            decision: Decision::Created,
            retrieval,
            entry_index,
        })
    }

    pub fn to_json(&self) -> Result<String, LibraryError> {
        let file = LibraryFile {
            version: LIBRARY_FORMAT_VERSION,
            k: self.k,
            tau: self.tau,
            beta: self.beta,
            arch: self.arch,
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    label: e.label.clone(),
                    created_at: e.created_at,
                    source_dims: e.signature.source_dims,
                    signature: e.signature.values.clone(),
                    mask: MaskFile::from_mask(&e.mask, &self.arch),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| LibraryError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LibraryError> {
        #[derive(Deserialize)]
        struct VersionOnly {
            version: u32,
        }
        let v: VersionOnly =
            serde_json::from_str(text).map_err(|e| LibraryError::Format(e.to_string()))?;
        if v.version != LIBRARY_FORMAT_VERSION {
            return Err(LibraryError::Version {
                found: v.version,
                expected: LIBRARY_FORMAT_VERSION,
            });
        }
        let f: LibraryFile =
            serde_json::from_str(text).map_err(|e| LibraryError::Format(e.to_string()))?;
        let mut lib = Self::new(f.arch, f.k, f.tau, f.beta)?;
        for (i, e) in f.entries.into_iter().enumerate() {
            let (arch, mask) = e.mask.into_mask()?;
            if arch != lib.arch {
                return Err(LibraryError::Format(format!(
                    "entry {i} mask architecture differs from the library's"
                )));
            }
            lib.insert(LibraryEntry {
                label: e.label,
                created_at: e.created_at,
                signature: SpectralSignature {
                    values: e.signature,
                    kind: SignatureKind::Adjacency,
                    source_dims: e.source_dims,
                },
                mask,
            })?;
        }
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<(), LibraryError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LibraryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    tau: f64,
    beta: f64,
    arch: DecoderArchitecture,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    label: String,
    created_at: u64,
    /// `(n, k)` of the code the signature came from.
    source_dims: (usize, usize),
    #[serde(
        serialize_with = "serialize_vec17",
        deserialize_with = "deserialize_vec"
    )]
    signature: Vec<f64>,
    mask: MaskFile,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_get;

    fn sig(values: Vec<f64>) -> SpectralSignature {
        SpectralSignature {
            values,
            kind: SignatureKind::Adjacency,
            source_dims: (0, 0),
        }
    }

    fn arch() -> DecoderArchitecture {
        DecoderArchitecture::new(1, 2, 4, 3).unwrap()
    }

    fn entry(values: Vec<f64>, keep_head: bool) -> LibraryEntry {
        let mut mask = StructuredMask::for_arch(&arch());
        mask.head_bits[0][0] = keep_head;
        LibraryEntry {
            label: "x".into(),
            created_at: 0,
            signature: sig(values),
            mask,
        }
    }

    #[test]
    fn retrieval_examples() {
        let mut lib = MaskLibrary::new(arch(), 2, 0.5, 0.1).unwrap();
        assert!(matches!(
            lib.retrieve(&sig(vec![0.0, 0.0])),
            Err(LibraryError::Empty)
        ));
        lib.insert(entry(vec![2.0, 0.0], true)).unwrap();
        lib.insert(entry(vec![0.0, 5.0], false)).unwrap();
        let r = lib.retrieve(&sig(vec![0.0, 0.0])).unwrap();
        assert_eq!(r.index, 0);
        assert_eq!(r.distance, 2.0);
        assert!((r.similarity - 0.818_730_753_077_981_9).abs() < 1e-15);

        lib.insert(entry(vec![-2.0, 0.0], true)).unwrap();
        assert_eq!(lib.retrieve(&sig(vec![0.0, 0.0])).unwrap().index, 0);
        let exact = lib.retrieve(&sig(vec![0.0, 5.0])).unwrap();
        assert_eq!(
            (exact.index, exact.distance, exact.similarity),
            (1, 0.0, 1.0)
        );
        assert!(matches!(
            lib.retrieve(&sig(vec![0.0])),
            Err(LibraryError::KMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn create_then_reuse() {
        let code = catalog_get("HAMMING_7_4").unwrap();
        let mut lib = MaskLibrary::with_defaults(arch());
        let derive = |_: &ParityCheckMatrix| Ok::<_, String>(StructuredMask::for_arch(&arch()));
        let first = lib.select_or_create("H", &code.pcm, derive).unwrap();
        assert_eq!(first.decision, Decision::Created);
        assert!(first.retrieval.is_none());
        let second = lib.select_or_create("H", &code.pcm, derive).unwrap();
        assert_eq!(second.decision, Decision::Reused);
        assert_eq!(second.retrieval.unwrap().distance, 0.0);
        assert_eq!(lib.len(), 1);
    }

    #[test]
    fn failed_derivation_leaves_library_unchanged() {
        let code = catalog_get("HAMMING_7_4").unwrap();
        let mut lib = MaskLibrary::with_defaults(arch());
        let err = lib
            .select_or_create("H", &code.pcm, |_| Err::<StructuredMask, _>("boom"))
            .unwrap_err();
        assert!(err.to_string().contains("boom"));
        assert!(lib.is_empty());
        let wrong = DecoderArchitecture::new(1, 1, 4, 3).unwrap();
        let r = lib.select_or_create("H", &code.pcm, |_| {
            Ok::<_, String>(StructuredMask::for_arch(&wrong))
        });
        assert!(r.is_err());
        assert!(lib.is_empty());
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let mut lib = MaskLibrary::new(arch(), 2, 0.5, 0.1).unwrap();
        lib.insert(entry(vec![std::f64::consts::E, -1.0 / 3.0], true))
            .unwrap();
        lib.insert(entry(vec![0.1, 0.2], false)).unwrap();
        let text = lib.to_json().unwrap();
        assert!(text.contains("\"K\": 2"));
        assert_eq!(MaskLibrary::from_json(&text).unwrap(), lib);
        let bad = text.replacen("\"version\": 1", "\"version\": 7", 1);
        let err = MaskLibrary::from_json(&bad).unwrap_err();
        assert!(matches!(
            err,
            LibraryError::Version {
                found: 7,
                expected: 1
            }
        ));
        assert!(MaskLibrary::from_json("{").is_err());
    }
}

//! Built-in desk-scale code catalog.
//!
//! Parity-check matrices are embedded alist files under `data/catalog/v1`.
//! Generators are derived with [`systematic_generator`](crate::code::systematic_generator)
//! at load time.

pub mod construct;

use thiserror::Error;

use crate::alist::{load_alist, AlistError};
use crate::code::{CodeError, CodeFamily, LinearCode};

pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown code {name:?}; catalog keys: {}", keys.join(", "))]
    Unknown { name: String, keys: Vec<String> },
    #[error("catalog entry {name}: {source}")]
    Alist { name: String, source: AlistError },
    #[error("catalog entry {name}: {source}")]
    Code { name: String, source: CodeError },
}

struct Entry {
    name: &'static str,
    family: CodeFamily,
    alist: &'static str,
}

macro_rules! entry {
    ($name:literal, $family:ident) => {
        Entry {
            name: $name,
            family: CodeFamily::$family,
            alist: include_str!(concat!("../../data/catalog/v1/", $name, ".alist")),
        }
    };
}

const ENTRIES: &[Entry] = &[
    entry!("HAMMING_7_4", Hamming),
    entry!("HAMMING_15_11", Hamming),
    entry!("BCH_15_7", Bch),
    entry!("BCH_15_5", Bch),
    entry!("BCH_31_16", Bch),
    entry!("POLAR_16_8", Polar),
    entry!("POLAR_32_16", Polar),
    entry!("LDPC_12_6", Ldpc),
    entry!("LDPC_24_12", Ldpc),
    entry!("LDPC_24_12_B", Ldpc),
    entry!("LDPC_48_24", Ldpc),
    entry!("LDPC_12_6_LIFT2", Ldpc),
    entry!("LDPC_24_12_LIFT2", Ldpc),
    entry!("LDPC_48_24_LIFT2", Ldpc),
];

pub fn catalog_names() -> Vec<&'static str> {
    ENTRIES.iter().map(|e| e.name).collect()
}

pub fn catalog_get(name: &str) -> Result<LinearCode, CatalogError> {
    let Some(e) = ENTRIES.iter().find(|e| e.name == name) else {
        return Err(CatalogError::Unknown {
            name: name.to_string(),
            keys: catalog_names().iter().map(|s| s.to_string()).collect(),
        });
    };
    let pcm = load_alist(e.alist).map_err(|source| CatalogError::Alist {
        name: e.name.to_string(),
        source,
    })?;
    LinearCode::with_generator(e.name, e.family, pcm).map_err(|source| CatalogError::Code {
        name: e.name.to_string(),
        source,
    })
}

pub fn catalog_all() -> Result<Vec<LinearCode>, CatalogError> {
    ENTRIES.iter().map(|e| catalog_get(e.name)).collect()
}

/// Raw embedded alist text for a catalog entry.
pub fn catalog_alist(name: &str) -> Option<&'static str> {
    ENTRIES.iter().find(|e| e.name == name).map(|e| e.alist)
}

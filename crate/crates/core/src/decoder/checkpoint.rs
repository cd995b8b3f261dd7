//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (architecture, per-layer shapes, active mask, tensor table), then
//! every tensor as little-endian `f64` in table order.

use super::model::{DecoderModel, Weights};
use super::DecoderError;
use crate::mask::{DecoderArchitecture, LayerShape, StructuredMask};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SAPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: DecoderArchitecture,
    d_model: usize,
    head_dim: usize,
    layers: Vec<LayerShape>,
    head_bits: Vec<Vec<u8>>,
    ffn_bits: Vec<Vec<u8>>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

fn bits_out(v: &[Vec<bool>]) -> Vec<Vec<u8>> {
    v.iter()
        .map(|r| r.iter().map(|&b| u8::from(b)).collect())
        .collect()
}

fn bits_in(v: Vec<Vec<u8>>) -> Result<Vec<Vec<bool>>, DecoderError> {
    v.into_iter()
        .map(|r| {
            r.into_iter()
                .map(|b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    x => Err(DecoderError::Checkpoint(format!("mask bit {x}"))),
                })
                .collect()
        })
        .collect()
}

pub fn write_checkpoint(model: &DecoderModel, mut w: impl Write) -> Result<(), DecoderError> {
    let mask = model.active_mask();
    let header = Header {
        arch: model.arch,
        d_model: model.weights.d_model,
        head_dim: model.weights.head_dim,
        layers: model.shapes(),
        head_bits: bits_out(&mask.head_bits),
        ffn_bits: bits_out(&mask.ffn_bits),
        tensors: model
            .weights
            .tensors()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DecoderError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 8 * model.param_count() + 20);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in model.weights.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<DecoderModel, DecoderError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| DecoderError::Checkpoint(m.into());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a decoder checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(DecoderError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    let hjson = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(hjson).map_err(|e| DecoderError::Checkpoint(e.to_string()))?;
    let mut weights = Weights::zeros(header.d_model, header.head_dim, &header.layers);
    let mut data = body[hlen..].chunks_exact(8);
    {
        let slots = weights.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(bad("tensor table does not match layer shapes"));
        }
        for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
            if name != entry.name || slot.len() != entry.len {
                return Err(DecoderError::Checkpoint(format!(
                    "tensor {} does not match expected {name}",
                    entry.name
                )));
            }
            for v in slot.iter_mut() {
                let chunk = data.next().ok_or_else(|| bad("truncated tensor data"))?;
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    if data.next().is_some() || !data.remainder().is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let mask = StructuredMask {
        head_bits: bits_in(header.head_bits)?,
        ffn_bits: bits_in(header.ffn_bits)?,
    };
    DecoderModel::from_parts(header.arch, weights, mask)
}

pub fn save_checkpoint(model: &DecoderModel, path: &Path) -> Result<(), DecoderError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DecoderModel, DecoderError> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let arch = DecoderArchitecture::new(2, 2, 8, 6).unwrap();
        let mut m = DecoderModel::new(arch, 5).unwrap();
        let mut mask = m.active_mask().clone();
        mask.ffn_bits[1][3] = false;
        m.set_mask(mask).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = DecoderModel::new(DecoderArchitecture::new(1, 1, 4, 2).unwrap(), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[8] = 9;
        let err = read_checkpoint(wrong.as_slice()).unwrap_err().to_string();
        assert!(err.contains("expected 1"), "{err}");
        assert!(read_checkpoint(&b"garbage"[..]).is_err());
    }
}

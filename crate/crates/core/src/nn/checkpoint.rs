//! Binary parameter container shared by the LM and the encoder:
//! magic, version, JSON header (kind, model config, tensor shapes),
//! little-endian f32 blob, SHA-256 of the blob.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NIRTXCK\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// Model configuration, vocabulary hash and so on.
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        kind: ck.kind.clone(),
        meta: ck.meta.clone(),
        tensors: ck
            .params
            .names
            .iter()
            .zip(&ck.params.values)
            .map(|(n, v)| TensorInfo { name: n.clone(), rows: v.nrows(), cols: v.ncols() })
            .collect(),
    };
    let hjson = serde_json::to_vec(&header).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;
    let blob = ck.params.to_f32_bytes();
    let mut out = Vec::with_capacity(16 + hjson.len() + blob.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&blob);
    out.extend_from_slice(&Sha256::digest(&blob));
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::data(format!("malformed checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let hend = 16 + hlen;
    if bytes.len() < hend + 32 {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| bad(&e.to_string()))?;
    let n: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    let blob_end = hend + 4 * n;
    if bytes.len() != blob_end + 32 {
        return Err(bad("blob size does not match the header"));
    }
    let blob = &bytes[hend..blob_end];
    if Sha256::digest(blob).as_slice() != &bytes[blob_end..] {
        return Err(bad("checksum mismatch"));
    }
    let mut params = ParamStore::new();
    let mut off = 0;
    for t in header.tensors {
        let vals: Vec<f64> = blob[off..off + 4 * t.rows * t.cols]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        off += 4 * t.rows * t.cols;
        params.add(t.name, Array2::from_shape_vec((t.rows, t.cols), vals).map_err(|e| bad(&e.to_string()))?);
    }
    Ok(Checkpoint { kind: header.kind, meta: header.meta, params })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    crate::io::write_bytes(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = ParamStore::new();
        p.add("w", Array2::from_shape_fn((3, 2), |(i, j)| i as f64 * 0.25 - j as f64));
        p.add("b", Array2::from_elem((1, 2), 0.5));
        Checkpoint { kind: "test".into(), meta: serde_json::json!({"e": 2}), params: p }
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.checksum(), ck.params.checksum());
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_checkpoint(&sample()).unwrap();
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("checksum"));
        assert!(decode_checkpoint(b"nonsense").is_err());
    }
}

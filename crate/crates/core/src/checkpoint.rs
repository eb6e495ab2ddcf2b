//! Weight container shared by encoder and adapter checkpoints.
//!
//! ```text
//! "IQCK" | version: u16 = 1 | header_len: u32 | header (UTF-8 JSON)
//!        | parameters: f64 little-endian, in header layer order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Param, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IQCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u16,
    /// `"encoder"` or `"adapter"`.
    pub kind: String,
    /// Echo of the configuration that produced the weights.
    pub config: serde_json::Value,
    pub layers: Vec<LayerEntry>,
}

pub fn checkpoint_bytes<S: Scalar>(kind: &str, config: serde_json::Value, params: &[&Param<S>]) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config,
        layers: params
            .iter()
            .map(|p| LayerEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in params {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint<S: Scalar>(bytes: &[u8], origin: &Path) -> Result<(CheckpointHeader, Vec<Param<S>>)> {
    let take = |range: std::ops::Range<usize>, what: &'static str| -> Result<&[u8]> {
        bytes.get(range.clone()).ok_or(Error::Truncated {
            what,
            expected: range.end,
            found: bytes.len(),
        })
    };
    let magic: [u8; 4] = take(0..4, "magic")?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
            found: magic,
            expected: CHECKPOINT_MAGIC,
        });
    }
    let version = u16::from_le_bytes(take(4..6, "version")?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(take(6..10, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(10..10 + header_len, "header")?)
        .map_err(|e| Error::HeaderMismatch(format!("unreadable checkpoint header: {e}")))?;
    let mut offset = 10 + header_len;
    let mut params = Vec::with_capacity(header.layers.len());
    for layer in &header.layers {
        let n: usize = layer.shape.iter().product();
        let raw = take(offset..offset + n * 8, "parameters")?;
        offset += n * 8;
        let data = raw
            .chunks_exact(8)
            .map(|b| S::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect();
        params.push(Param::new(layer.name.clone(), Tensor::new(layer.shape.clone(), data)?));
    }
    if offset != bytes.len() {
        return Err(Error::HeaderMismatch(format!(
            "layers account for {offset} bytes, checkpoint has {}",
            bytes.len()
        )));
    }
    Ok((header, params))
}

pub fn write_checkpoint<S: Scalar>(path: impl AsRef<Path>, kind: &str, config: serde_json::Value, params: &[&Param<S>]) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(kind, config, params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Vec<Param<S>>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

/// SHA-256 over names, shapes and `f64` bit patterns of the parameters.
pub fn params_digest<S: Scalar>(params: &[&Param<S>]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in p.tensor.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            h.update(v.as_f64().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = Param::new("w", Tensor::new(vec![2, 2], vec![1.0f64, -2.0, 0.5, 3.25]).unwrap());
        let bytes = checkpoint_bytes("encoder", serde_json::json!({"a": 1}), &[&p]).unwrap();
        let (h, ps) = parse_checkpoint::<f64>(&bytes, Path::new("x")).unwrap();
        assert_eq!(h.kind, "encoder");
        assert_eq!(ps[0], p);
        assert!(matches!(
            parse_checkpoint::<f64>(&bytes[..bytes.len() - 1], Path::new("x")),
            Err(Error::Truncated { .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(parse_checkpoint::<f64>(&v2, Path::new("x")), Err(Error::UnsupportedVersion(9))));
    }
}

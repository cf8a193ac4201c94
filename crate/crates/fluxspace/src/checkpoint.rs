//! Checkpoint files.
//!
//! ```text
//! "FXSP" | version: u32 LE | header length: u32 LE | header JSON | payload
//! ```
//!
//! The header holds the model config (vocabulary included) and a tensor directory. Each entry
//! names a tensor, its dtype (`f32`), shape and byte offset into the payload. The payload is
//! little-endian `f32` data in directory order.

use std::fs;
use std::io;
use std::path::Path;

use fluxspace_core::mmdit::{Model, ModelConfig};
use fluxspace_core::Tensor;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 4] = *b"FXSP";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(&'static str),
    #[error("tensor {name} lies outside the payload")]
    OutOfBounds { name: String },
    #[error("tensor {name} has unsupported dtype {dtype}")]
    Dtype { name: String, dtype: String },
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint does not match its model config: {0}")]
    Model(#[from] fluxspace_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut offset = 0;
    let tensors = model
        .params()
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.to_string(), dtype: "f32".into(), shape: t.shape().to_vec(), offset };
            offset += t.len() * 4;
            e
        })
        .collect();
    let header = Header { config: model.config().clone(), tensors };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + offset);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, CheckpointError> {
    let b = bytes.get(at..at + 4).ok_or(CheckpointError::Truncated(what))?;
    Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
}

/// Parses only the header.
pub fn read_header(bytes: &[u8]) -> Result<(Header, usize), CheckpointError> {
    let magic: [u8; 4] = bytes.get(..4).ok_or(CheckpointError::Truncated("magic"))?.try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, expected: VERSION });
    }
    let len = read_u32(bytes, 8, "header length")? as usize;
    let json = bytes.get(12..12 + len).ok_or(CheckpointError::Truncated("header"))?;
    Ok((serde_json::from_slice(json)?, 12 + len))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>, CheckpointError> {
    let (header, start) = read_header(bytes)?;
    let payload = &bytes[start..];
    let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    let mut named = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(CheckpointError::Dtype { name: e.name.clone(), dtype: e.dtype.clone() });
        }
        let n = e.shape.iter().product::<usize>();
        let end = e.offset.checked_add(n * 4).filter(|&end| end <= expected);
        let Some(end) = end else {
            return Err(CheckpointError::OutOfBounds { name: e.name.clone() });
        };
        let raw = payload.get(e.offset..end).ok_or(CheckpointError::Truncated("payload"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
        named.push((e.name.clone(), Tensor::new(&e.shape, data)?));
    }
    if payload.len() < expected {
        return Err(CheckpointError::Truncated("payload"));
    }
    Ok(Model::from_named(header.config, named)?)
}

pub fn save(path: &Path, model: &Model<f32>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model<f32>, CheckpointError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fluxspace_core::Rng;

    fn model() -> Model<f32> {
        Model::init(ModelConfig::default(), &mut Rng::new(3)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn directory_lists_every_parameter_tensor() {
        let m = model();
        let (header, _) = read_header(&to_bytes(&m)).unwrap();
        // Text encoder 2, time and guidance MLPs 8, image in + positions 3, text in 2,
        // 2 blocks x 2 streams x 5 linears x 2, final 4.
        assert_eq!(header.tensors.len(), 2 + 8 + 3 + 2 + 2 * 2 * 5 * 2 + 4);
        assert_eq!(header.tensors.len(), m.params().len());
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let bytes = to_bytes(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::BadMagic(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(from_bytes(&bad), Err(CheckpointError::Version { found: 9, .. })));

        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(from_bytes(&bytes[..10]), Err(CheckpointError::Truncated(_))));

        let (mut header, start) = read_header(&bytes).unwrap();
        header.tensors[0].offset = usize::MAX / 2;
        let json = serde_json::to_vec(&header).unwrap();
        let mut moved = bytes[..8].to_vec();
        moved.extend((json.len() as u32).to_le_bytes());
        moved.extend(json);
        moved.extend(&bytes[start..]);
        assert!(matches!(from_bytes(&moved), Err(CheckpointError::OutOfBounds { .. })));
    }
}

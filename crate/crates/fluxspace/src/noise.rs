//! Raw tensor files for sampler noise: `"FXNS" | version u32 | rank u32 | dims u32... | f32 data`,
//! all little-endian.

use std::fs;
use std::io;
use std::path::Path;

use fluxspace_core::Tensor;

pub const MAGIC: [u8; 4] = *b"FXNS";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error("not a noise file: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported noise file version {0}")]
    Version(u32),
    #[error("truncated noise file")]
    Truncated,
    #[error(transparent)]
    Shape(#[from] fluxspace_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn to_bytes(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Tensor<f32>, NoiseError> {
    let mut words = bytes.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).expect("four bytes"));
    let mut next = || words.next().ok_or(NoiseError::Truncated);
    let magic = next()?;
    if magic != MAGIC {
        return Err(NoiseError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(next()?);
    if version != VERSION {
        return Err(NoiseError::Version(version));
    }
    let rank = u32::from_le_bytes(next()?) as usize;
    let shape = (0..rank).map(|_| next().map(|w| u32::from_le_bytes(w) as usize)).collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| next().map(f32::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
    if bytes.len() != 4 * (3 + rank + n) {
        return Err(NoiseError::Truncated);
    }
    Ok(Tensor::new(&shape, data)?)
}

pub fn save(path: &Path, t: &Tensor<f32>) -> Result<(), NoiseError> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor<f32>, NoiseError> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let t = Tensor::from_fn(&[2, 3, 1], |i| i as f32 - 2.5);
        let b = to_bytes(&t);
        assert_eq!(from_bytes(&b).unwrap(), t);
        assert!(matches!(from_bytes(&b[..b.len() - 4]), Err(NoiseError::Truncated)));
        assert!(matches!(from_bytes(b"NOPE\x01\0\0\0"), Err(NoiseError::BadMagic(_))));
    }
}

//! Binary PPM (P6) with 8-bit samples.

use std::fs;
use std::io;
use std::path::Path;

use fluxspace_core::synth::{dequantize, quantize};
use fluxspace_core::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error("malformed PPM header: {0}")]
    Header(String),
    #[error("truncated PPM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("PPM payload has {0} trailing bytes")]
    Trailing(usize),
    #[error("image must be [height, width, 3] or [height, width, 1], got {0:?}")]
    Shape(Vec<usize>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw RGB bytes, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn encode(img: &Rgb8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Rgb8, PpmError> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let magic = next_token(bytes, &mut pos).ok_or_else(|| PpmError::Header("empty file".into()))?;
    if magic != b"P6" {
        return Err(PpmError::Header(format!("expected magic P6, found {:?}", String::from_utf8_lossy(magic))));
    }
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| PpmError::Header(format!("missing {name}")))?;
        fields[i] = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::Header(format!("bad {name} {:?}", String::from_utf8_lossy(tok))))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PpmError::Header(format!("only maxval 255 is supported, found {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(PpmError::Header(format!("empty image {width}x{height}")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::Header("missing separator after maxval".into())),
    }
    let expected = width * height * 3;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(PpmError::Trailing(payload.len() - expected));
    }
    Ok(Rgb8 { width, height, data: payload.to_vec() })
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Quantizes a `[H, W, 3]` image in `[0, 1]`; single-channel images are replicated to gray.
pub fn from_tensor(image: &Tensor<f32>) -> Result<Rgb8, PpmError> {
    let s = image.shape();
    if s.len() != 3 || !(s[2] == 3 || s[2] == 1) {
        return Err(PpmError::Shape(s.to_vec()));
    }
    let q = quantize(image);
    let data = if s[2] == 3 { q } else { q.iter().flat_map(|&v| [v, v, v]).collect() };
    Ok(Rgb8 { width: s[1], height: s[0], data })
}

pub fn to_tensor(img: &Rgb8) -> Tensor<f32> {
    dequantize(&img.data, &[img.height, img.width, 3]).expect("decoded payload matches its header")
}

/// Gray image from a row-major binary mask: 1 becomes 255.
pub fn from_mask(mask: &[u8], width: usize, height: usize) -> Rgb8 {
    let data = mask.iter().flat_map(|&m| [m * 255; 3]).collect();
    Rgb8 { width, height, data }
}

pub fn write_image(path: &Path, image: &Tensor<f32>) -> Result<(), PpmError> {
    fs::write(path, encode(&from_tensor(image)?))?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Tensor<f32>, PpmError> {
    Ok(to_tensor(&decode(&fs::read(path)?)?))
}

//! Binary NetPBM graymap (P5) reading and writing.
//!
//! All image artifacts leave this crate as 8-bit P5 files: pixel values in
//! `[0,1]` are clamped and scaled to `0..=255`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("pgm: io error: {0}")]
    Io(#[from] io::Error),
    #[error("pgm: not a P5 file")]
    BadMagic,
    #[error("pgm: malformed header")]
    BadHeader,
    #[error("pgm: truncated pixel data (expected {expected}, got {got})")]
    Truncated { expected: usize, got: usize },
}

/// Encodes a grayscale image (pixels in `[0,1]`, row-major `rows × cols`)
/// as P5 bytes.
pub fn encode(pixels: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), rows * cols, "pgm encode: pixel count");
    let mut out = Vec::with_capacity(32 + pixels.len());
    out.extend_from_slice(format!("P5\n{cols} {rows}\n255\n").as_bytes());
    out.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn write_file(path: &Path, pixels: &[f64], rows: usize, cols: usize) -> Result<(), PgmError> {
    let bytes = encode(pixels, rows, cols);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Decodes P5 bytes into an image tensor of shape `[rows, cols]` with
/// pixels scaled back into `[0,1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor, PgmError> {
    if !bytes.starts_with(b"P5") {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(3);
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::BadHeader);
        }
        let field = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| PgmError::BadHeader)?
            .parse::<usize>()
            .map_err(|_| PgmError::BadHeader)?;
        fields.push(field);
    }
    // single whitespace byte separates header from pixel data
    pos += 1;
    let (cols, rows, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(PgmError::BadHeader);
    }
    let expected = rows * cols;
    let data = &bytes[pos.min(bytes.len())..];
    if data.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            got: data.len(),
        });
    }
    let pixels: Vec<f64> = data[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::new(vec![rows, cols], pixels).expect("decoded shape"))
}

pub fn read_file(path: &Path) -> Result<Tensor, PgmError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

//! Middlebury `.flo`: float magic 202021.25, width and height as i32, then
//! interleaved (u, v) f32 values top to bottom, all little-endian.

use std::path::Path;

use super::{checked_len, read_file, write_file, FormatError};
use crate::error::Result;
use crate::field::VectorField;

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo(flow: &VectorField) -> Vec<u8> {
    let (h, w) = flow.dims();
    let mut out = Vec::with_capacity(12 + h * w * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> std::result::Result<VectorField, FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(FormatError::BadMagic(format!(
            "expected {FLO_MAGIC}, found {magic}"
        )));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(FormatError::MalformedHeader(format!("dimensions {w}x{h}")));
    }
    let n = checked_len(&[w as usize, h as usize, 2], "FLO")?;
    let expected = checked_len(&[n, 4], "FLO payload")? + 12;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n);
    for (i, c) in bytes[12..expected].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        if !v.is_finite() {
            return Err(FormatError::NonFinitePayload(i));
        }
        data.push(v);
    }
    Ok(VectorField::new(h as usize, w as usize, data).expect("validated raster"))
}

pub fn write_flo(path: impl AsRef<Path>, flow: &VectorField) -> Result<()> {
    write_file(path.as_ref(), &encode_flo(flow))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<VectorField> {
    Ok(decode_flo(&read_file(path.as_ref())?)?)
}

//! Grayscale PFM ("Pf"). Negative scale means little-endian payload; rows
//! are stored bottom to top.

use std::path::Path;

use super::{checked_len, header_tokens, parse_dim, read_file, write_file, FormatError};
use crate::error::Result;
use crate::field::ScalarField;

pub fn encode_pfm(field: &ScalarField) -> Vec<u8> {
    let (h, w) = field.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&field.get(x, y).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<ScalarField, FormatError> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => return Err(FormatError::Unsupported("color PFM".into())),
        other => {
            return Err(FormatError::BadMagic(format!(
                "expected `Pf`, found `{other}`"
            )))
        }
    }
    let w = parse_dim(&tokens[1], "width")?;
    let h = parse_dim(&tokens[2], "height")?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| FormatError::MalformedHeader(format!("bad scale `{}`", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::MalformedHeader(format!(
            "bad scale `{}`",
            tokens[3]
        )));
    }
    let little = scale < 0.0;
    let n = checked_len(&[w, h], "PFM")?;
    let bytes_needed = checked_len(&[n, 4], "PFM payload")?;
    let payload = &bytes[offset..];
    if payload.len() < bytes_needed {
        return Err(FormatError::Truncated {
            expected: bytes_needed,
            found: payload.len(),
        });
    }
    let mut data = vec![0f32; n];
    for (i, chunk) in payload[..bytes_needed].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(FormatError::NonFinitePayload(i));
        }
        let (row, col) = (i / w, i % w);
        data[(h - 1 - row) * w + col] = v;
    }
    Ok(ScalarField::new(h, w, data).expect("validated raster"))
}

pub fn write_pfm(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(field))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ScalarField> {
    Ok(decode_pfm(&read_file(path.as_ref())?)?)
}

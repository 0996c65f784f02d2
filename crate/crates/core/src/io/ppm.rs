//! Binary PPM (P6, maxval 255) mapped to three-channel fields in [0, 1].

use std::path::Path;

use super::{checked_len, header_tokens, parse_dim, read_file, write_file, FormatError};
use crate::error::Result;
use crate::field::ChannelField;

pub fn encode_ppm(image: &ChannelField) -> std::result::Result<Vec<u8>, FormatError> {
    if image.channels() != 3 {
        return Err(FormatError::Unsupported(format!(
            "PPM needs 3 channels, field has {}",
            image.channels()
        )));
    }
    let (h, w) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<ChannelField, FormatError> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P6" {
        return Err(FormatError::BadMagic(format!(
            "expected `P6`, found `{}`",
            tokens[0]
        )));
    }
    let w = parse_dim(&tokens[1], "width")?;
    let h = parse_dim(&tokens[2], "height")?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| FormatError::MalformedHeader(format!("bad maxval `{}`", tokens[3])))?;
    if maxval != 255 {
        return Err(FormatError::Unsupported(format!("maxval {maxval}")));
    }
    let n = checked_len(&[w, h, 3], "PPM")?;
    let payload = &bytes[offset..];
    if payload.len() < n {
        return Err(FormatError::Truncated {
            expected: n,
            found: payload.len(),
        });
    }
    let data = payload[..n].iter().map(|&b| b as f32 / 255.0).collect();
    Ok(ChannelField::new(h, w, 3, data).expect("validated raster"))
}

pub fn write_ppm(path: impl AsRef<Path>, image: &ChannelField) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(image)?)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ChannelField> {
    Ok(decode_ppm(&read_file(path.as_ref())?)?)
}

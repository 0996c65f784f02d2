//! On-disk formats: PFM, Middlebury FLO, binary PPM, the BDWT weight
//! container and JSON sequence manifests.

mod bdwt;
mod flo;
mod manifest;
mod pfm;
mod ppm;

use std::path::Path;

use thiserror::Error;

pub use bdwt::{decode_weights, encode_weights, read_weights, write_weights, WEIGHTS_MAGIC};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use manifest::{relative_path, write_bundle, FrameEntry, SequenceManifest};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};

use crate::error::{Error, Result};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("raster size overflows: {0}")]
    SizeOverflow(String),
    #[error("non-finite payload value at index {0}")]
    NonFinitePayload(usize),
    #[error("bad magic: {0}")]
    BadMagic(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("inconsistent container: {0}")]
    Inconsistent(String),
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Splits `count` whitespace-separated ASCII tokens off the front of `bytes`
/// and returns them with the offset just past the single whitespace byte
/// that terminates the last token.
pub(crate) fn header_tokens(
    bytes: &[u8],
    count: usize,
) -> std::result::Result<(Vec<String>, usize), FormatError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(FormatError::MalformedHeader(
                "unexpected end of header".into(),
            ));
        }
        if i >= bytes.len() {
            return Err(FormatError::MalformedHeader("header not terminated".into()));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..i])
                .map_err(|_| FormatError::MalformedHeader("non-ASCII header".into()))?
                .to_string(),
        );
    }
    Ok((tokens, i + 1))
}

pub(crate) fn parse_dim(tok: &str, what: &str) -> std::result::Result<usize, FormatError> {
    let v: usize = tok
        .parse()
        .map_err(|_| FormatError::MalformedHeader(format!("bad {what} `{tok}`")))?;
    if v == 0 {
        return Err(FormatError::MalformedHeader(format!(
            "{what} must be positive"
        )));
    }
    Ok(v)
}

pub(crate) fn checked_len(dims: &[usize], what: &str) -> std::result::Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or_else(|| FormatError::SizeOverflow(format!("{what} {dims:?}")))
}

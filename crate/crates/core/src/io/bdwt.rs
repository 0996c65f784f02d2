//! BDWT weight container: `b"BDWT"`, little-endian u32 header length, a
//! JSON header listing every tensor's name, dtype, shape and payload byte
//! offset, then the raw little-endian f32 payload.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{checked_len, read_file, write_file, FormatError};
use crate::error::Result;
use crate::weights::{Tensor, WeightBank};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BDWT";

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn encode_weights(bank: &WeightBank) -> Vec<u8> {
    let mut entries = Vec::with_capacity(bank.len());
    let mut payload = Vec::with_capacity(bank.param_count() * 4);
    for (name, t) in bank.iter() {
        entries.push(Entry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header { tensors: entries }).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_weights(bytes: &[u8]) -> std::result::Result<WeightBank, FormatError> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated {
            expected: 8,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(FormatError::BadMagic(format!("{:?}", &bytes[..4])));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if bytes.len() < 8 + hlen {
        return Err(FormatError::Truncated {
            expected: 8 + hlen,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + hlen])
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[8 + hlen..];

    let mut names = BTreeSet::new();
    let mut spans = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if !names.insert(e.name.as_str()) {
            return Err(FormatError::Inconsistent(format!(
                "duplicate tensor `{}`",
                e.name
            )));
        }
        if e.dtype != "f32" {
            return Err(FormatError::Unsupported(format!("dtype `{}`", e.dtype)));
        }
        let len = checked_len(&e.shape, &e.name)?;
        let size = checked_len(&[len, 4], &e.name)?;
        let end = e
            .offset
            .checked_add(size)
            .ok_or_else(|| FormatError::SizeOverflow(e.name.clone()))?;
        if end > payload.len() {
            return Err(FormatError::Truncated {
                expected: end,
                found: payload.len(),
            });
        }
        spans.push((e.offset, end));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(FormatError::Inconsistent(
                "overlapping tensor payloads".into(),
            ));
        }
    }
    let used: usize = spans.iter().map(|(a, b)| b - a).sum();
    if used != payload.len() {
        return Err(FormatError::Inconsistent(format!(
            "payload has {} bytes, tensors use {used}",
            payload.len()
        )));
    }

    let mut bank = WeightBank::default();
    for e in header.tensors {
        let len: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for (i, c) in payload[e.offset..e.offset + len * 4]
            .chunks_exact(4)
            .enumerate()
        {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(FormatError::NonFinitePayload(e.offset / 4 + i));
            }
            data.push(v);
        }
        bank.insert(
            e.name,
            Tensor::new(e.shape, data).expect("validated tensor"),
        );
    }
    Ok(bank)
}

pub fn write_weights(path: impl AsRef<Path>, bank: &WeightBank) -> Result<()> {
    write_file(path.as_ref(), &encode_weights(bank))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<WeightBank> {
    Ok(decode_weights(&read_file(path.as_ref())?)?)
}

//! Self-describing array files: a UTF-8 text header followed by a
//! little-endian payload.
//!
//! ```text
//! SHAPESEG-ARRAY
//! version: 1
//! dtype: f64
//! shape: 1 64 64
//! sha256: <64 hex digits of the payload digest>
//! <empty line>
//! <payload>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};

pub const ARRAY_MAGIC: &str = "SHAPESEG-ARRAY";
pub const ARRAY_VERSION: u32 = 1;
/// Headers longer than this are rejected before any allocation.
pub const MAX_HEADER_BYTES: usize = 4096;
/// Upper bound on decoded element count.
pub const MAX_ELEMENTS: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F64(_) => "f64",
            ArrayData::U8(_) => "u8",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ArrayFile {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            shape,
            data: ArrayData::F64(data),
        }
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            shape,
            data: ArrayData::U8(data),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        assert_eq!(self.shape.iter().product::<usize>(), self.data.len());
        let payload: Vec<u8> = match &self.data {
            ArrayData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            ArrayData::U8(v) => v.clone(),
        };
        let shape: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        let mut out = format!(
            "{ARRAY_MAGIC}\nversion: {ARRAY_VERSION}\ndtype: {}\nshape: {}\nsha256: {}\n\n",
            self.data.dtype(),
            shape.join(" "),
            sha256_hex(&payload)
        )
        .into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let (header, payload) = split_header(bytes, ARRAY_MAGIC)?;
        let mut fields = HeaderFields::parse(header, ARRAY_MAGIC)?;
        let version = fields.version()?;
        if version != ARRAY_VERSION {
            return Err(FormatError::VersionMismatch {
                found: version,
                expected: ARRAY_VERSION,
            });
        }
        let dtype = fields.take("dtype")?;
        let width = match dtype.as_str() {
            "f64" => 8,
            "u8" => 1,
            other => return Err(FormatError::Header(format!("unknown dtype {other:?}"))),
        };
        let shape = parse_shape(&fields.take("shape")?)?;
        let digest = fields.take("sha256")?;
        fields.finish()?;

        let numel = element_count(&shape)?;
        let expected = numel * width;
        if payload.len() < expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(FormatError::TrailingData(payload.len() - expected));
        }
        if sha256_hex(payload) != digest {
            return Err(FormatError::Checksum);
        }
        let data = if width == 8 {
            ArrayData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect(),
            )
        } else {
            ArrayData::U8(payload.to_vec())
        };
        Ok(Self { shape, data })
    }
}

pub(crate) fn element_count(shape: &[usize]) -> Result<usize, FormatError> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| FormatError::Header(format!("shape {shape:?} is too large")))
}

pub(crate) fn parse_shape(text: &str) -> Result<Vec<usize>, FormatError> {
    let shape: Vec<usize> = text
        .split_ascii_whitespace()
        .map(|s| s.parse::<usize>().map_err(|_| FormatError::Header(format!("bad extent {s:?}"))))
        .collect::<Result<_, _>>()?;
    if shape.is_empty() || shape.len() > 8 {
        return Err(FormatError::Header(format!("shape must have 1..=8 extents, got {text:?}")));
    }
    Ok(shape)
}

/// Split at the first empty line. The header must start with `magic`.
pub(crate) fn split_header<'a>(bytes: &'a [u8], magic: &'static str) -> Result<(&'a str, &'a [u8]), FormatError> {
    if !bytes.starts_with(magic.as_bytes()) || bytes.get(magic.len()) != Some(&b'\n') {
        return Err(FormatError::BadMagic { expected: magic });
    }
    let limit = bytes.len().min(MAX_HEADER_BYTES);
    let end = bytes[..limit]
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| FormatError::Header("header terminator not found".into()))?;
    let header = std::str::from_utf8(&bytes[..end + 1])
        .map_err(|_| FormatError::Header("header is not UTF-8".into()))?;
    Ok((header, &bytes[end + 2..]))
}

/// `key: value` lines after the magic line, consumed in order.
pub(crate) struct HeaderFields<'a> {
    lines: std::vec::IntoIter<(&'a str, &'a str)>,
}

impl<'a> HeaderFields<'a> {
    pub(crate) fn parse(header: &'a str, magic: &str) -> Result<Self, FormatError> {
        let mut lines = header.lines();
        if lines.next() != Some(magic) {
            return Err(FormatError::Header("missing magic line".into()));
        }
        let pairs = lines
            .map(|line| {
                line.split_once(": ")
                    .ok_or_else(|| FormatError::Header(format!("malformed line {line:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            lines: pairs.into_iter(),
        })
    }

    pub(crate) fn take(&mut self, key: &str) -> Result<String, FormatError> {
        match self.lines.next() {
            Some((k, v)) if k == key => Ok(v.to_string()),
            Some((k, _)) => Err(FormatError::Header(format!("expected field {key:?}, found {k:?}"))),
            None => Err(FormatError::Header(format!("missing field {key:?}"))),
        }
    }

    pub(crate) fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, FormatError> {
        let v = self.take(key)?;
        v.parse()
            .map_err(|_| FormatError::Header(format!("field {key:?} has bad value {v:?}")))
    }

    pub(crate) fn version(&mut self) -> Result<u32, FormatError> {
        self.take_parsed("version")
    }

    pub(crate) fn finish(mut self) -> Result<(), FormatError> {
        match self.lines.next() {
            None => Ok(()),
            Some((k, _)) => Err(FormatError::Header(format!("unexpected field {k:?}"))),
        }
    }
}


/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

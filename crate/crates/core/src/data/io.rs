//! On-disk feature files.
//!
//! Binary (`TSFV`), all integers little-endian:
//!
//! ```text
//! "TSFV" | u16 version = 1 | u32 dim | u32 count | count x (u32 subject_id, dim x f32)
//! ```
//!
//! Text: one record per line, `subject_id,v1,...,vdim`. Lines starting with
//! `#` and blank lines are skipped.
//!
//! Both formats hold 32-bit floats; values are promoted to `f64` on load.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, FeatureRecord};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"TSFV";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Text,
}

/// Binary when the bytes start with the `TSFV` magic, text otherwise.
pub fn detect_format(bytes: &[u8]) -> FeatureFormat {
    if bytes.starts_with(&FEATURE_MAGIC) {
        FeatureFormat::Binary
    } else {
        FeatureFormat::Text
    }
}

pub fn write_binary(dataset: &Dataset) -> Vec<u8> {
    let dim = dataset.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * (4 + 4 * dim));
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_le_bytes());
    for r in dataset.records() {
        out.extend_from_slice(&r.subject_id.to_le_bytes());
        for &v in &r.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_binary(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::EmptyFile);
    }
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = le_u32(bytes, 6) as usize;
    let count = le_u32(bytes, 10) as usize;
    if dim == 0 {
        return Err(Error::InvalidParameter("feature file declares dimension 0".into()));
    }
    let record_len = 4 + 4 * dim;
    let needed = count
        .checked_mul(record_len)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes(bytes.len() - needed));
    }

    let records = bytes[HEADER_LEN..]
        .chunks_exact(record_len)
        .map(|chunk| {
            let vector = chunk[4..]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            FeatureRecord::new(le_u32(chunk, 0), vector)
        })
        .collect();
    Dataset::new(records)
}

pub fn write_text(dataset: &Dataset) -> String {
    let mut out = String::new();
    writeln!(out, "# subject_id,{} values", dataset.dim()).unwrap();
    for r in dataset.records() {
        write!(out, "{}", r.subject_id).unwrap();
        for &v in &r.vector {
            write!(out, ",{}", v as f32).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_text(text: &str) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut arity = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *arity.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Arity {
                line: line_no,
                expected,
                actual: fields.len(),
            });
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "a record needs a subject id and at least one value".into(),
            });
        }
        let subject_id = fields[0].parse::<u32>().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("subject id {:?}: {e}", fields[0]),
        })?;
        let vector = fields[1..]
            .iter()
            .map(|f| match f.parse::<f32>() {
                Ok(v) if v.is_finite() => Ok(f64::from(v)),
                Ok(_) => Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite value {f:?}"),
                }),
                Err(e) => Err(Error::Parse {
                    line: line_no,
                    message: format!("value {f:?}: {e}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(FeatureRecord::new(subject_id, vector));
    }
    if records.is_empty() {
        return Err(Error::EmptyFile);
    }
    Dataset::new(records)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Binary => fs::write(path, write_binary(dataset))?,
        FeatureFormat::Text => fs::write(path, write_text(dataset))?,
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, format: FeatureFormat) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    parse(&bytes, format)
}

/// Loads either format, picking binary when the file starts with `TSFV`.
pub fn load_dataset_auto(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    parse(&bytes, detect_format(&bytes))
}

fn parse(bytes: &[u8], format: FeatureFormat) -> Result<Dataset> {
    match format {
        FeatureFormat::Binary => read_binary(bytes),
        FeatureFormat::Text => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
                line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
                message: "invalid UTF-8".into(),
            })?;
            read_text(text)
        }
    }
}

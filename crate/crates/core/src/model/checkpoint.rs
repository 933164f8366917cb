//! `TSMD` checkpoint files.
//!
//! Version 1 (the default two-layer backbone with the full distance layer):
//!
//! ```text
//! "TSMD" | u16 version = 1 | u32 n | f64 parameters...
//! ```
//!
//! Parameters are little-endian, in [`TinyModel::parameters`] order:
//! `l1.weight, l1.bias, l2.weight, l2.bias, head.weight, head.bias`.
//!
//! Any other shape is written as version 2, which inserts `u32 depth` and a
//! `u8` distance mode (0 = full, 1 = squared difference only) after `n`.

use std::fs;
use std::path::Path;

use super::{DistanceMode, ModelConfig, TinyModel};
use crate::error::{Error, Result};
use crate::numerics::{LinearLayer, Matrix};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TSMD";

const VERSION_DEFAULT_SHAPE: u16 = 1;
const VERSION_EXTENDED: u16 = 2;

pub fn write_model(model: &TinyModel) -> Vec<u8> {
    let config = model.config();
    let default_shape = config.depth == 2 && config.distance == DistanceMode::Full;
    let mut out = Vec::with_capacity(32 + 8 * model.param_count());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    if default_shape {
        out.extend_from_slice(&VERSION_DEFAULT_SHAPE.to_le_bytes());
        out.extend_from_slice(&(config.dim as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&VERSION_EXTENDED.to_le_bytes());
        out.extend_from_slice(&(config.dim as u32).to_le_bytes());
        out.extend_from_slice(&(config.depth as u32).to_le_bytes());
        out.push(match config.distance {
            DistanceMode::Full => 0,
            DistanceMode::SquaredDifferenceOnly => 1,
        });
    }
    for tensor in model.parameters() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::Truncated {
                needed: self.pos + len,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count.checked_mul(8).ok_or(Error::Truncated {
            needed: usize::MAX,
            available: self.bytes.len(),
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn layer(&mut self, in_dim: usize, out_dim: usize) -> Result<LinearLayer> {
        let w = self.f64s(in_dim * out_dim)?;
        let b = self.f64s(out_dim)?;
        LinearLayer::new(Matrix::from_vec(out_dim, in_dim, w)?, b)
    }
}

pub fn read_model(bytes: &[u8]) -> Result<TinyModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    let raw_dim = r.u32()?;
    let (depth, distance) = match version {
        VERSION_DEFAULT_SHAPE => (2, DistanceMode::Full),
        VERSION_EXTENDED => {
            let depth = r.u32()? as usize;
            let distance = match r.u8()? {
                0 => DistanceMode::Full,
                1 => DistanceMode::SquaredDifferenceOnly,
                other => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown distance mode {other} in checkpoint"
                    )))
                }
            };
            (depth, distance)
        }
        other => return Err(Error::UnsupportedVersion(other)),
    };
    let dim = raw_dim as usize;
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::CheckpointDim(raw_dim));
    }
    let config = ModelConfig {
        dim,
        depth,
        distance,
    };
    config.validate()?;

    // Make sure the payload is there before allocating for it.
    let payload = config
        .checked_param_count()
        .and_then(|c| c.checked_mul(8))
        .unwrap_or(usize::MAX);
    let remaining = bytes.len() - r.pos;
    if payload > remaining {
        return Err(Error::Truncated {
            needed: r.pos.saturating_add(payload),
            available: bytes.len(),
        });
    }

    let backbone = config
        .backbone_shapes()
        .into_iter()
        .map(|(i, o)| r.layer(i, o))
        .collect::<Result<Vec<_>>>()?;
    let head = r.layer(distance.width(dim), 1)?;
    if r.pos != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - r.pos));
    }
    TinyModel::from_layers(backbone, head, distance)
}

pub fn save_model(model: &TinyModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TinyModel> {
    read_model(&fs::read(path)?)
}

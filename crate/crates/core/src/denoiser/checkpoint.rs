//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`, reals little-endian `f64`):
//!
//! ```text
//! "DFCK" version side init_features depth time_embed_dim
//! repeated until EOF:
//!     name_len name_bytes rank dim_0 .. dim_{rank-1} values...
//! ```

use std::fs;
use std::path::Path;

use super::model::{DenoiserModel, ModelConfig};
use super::tensor::Tensor;
use super::DenoiserError;

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &DenoiserModel) -> Vec<u8> {
    let cfg = model.config();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        cfg.side as u32,
        cfg.init_features as u32,
        cfg.depth as u32,
        cfg.time_embed_dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (name, t) in model.params() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DenoiserError> {
        if self.pos + n > self.bytes.len() {
            return Err(DenoiserError::Checkpoint(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DenoiserError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, DenoiserError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DenoiserModel, DenoiserError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(DenoiserError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(DenoiserError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let config = ModelConfig {
        side: c.u32()? as usize,
        init_features: c.u32()? as usize,
        depth: c.u32()? as usize,
        time_embed_dim: c.u32()? as usize,
    };
    let mut params = Vec::new();
    while !c.done() {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| DenoiserError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        params.push((name, Tensor::new(shape, values)));
    }
    DenoiserModel::from_parts(config, params)
}

pub fn save_checkpoint(model: &DenoiserModel, path: impl AsRef<Path>) -> Result<(), DenoiserError> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenoiserModel, DenoiserError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_header() {
        let cfg = ModelConfig {
            side: 8,
            init_features: 2,
            depth: 1,
            time_embed_dim: 4,
        };
        let m = DenoiserModel::init(cfg, 12).unwrap();
        let bytes = encode_checkpoint(&m);
        assert_eq!(&bytes[..4], b"DFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let cfg = ModelConfig {
            side: 8,
            init_features: 2,
            depth: 1,
            time_embed_dim: 4,
        };
        let bytes = encode_checkpoint(&DenoiserModel::init(cfg, 1).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&nan).is_err());
    }
}

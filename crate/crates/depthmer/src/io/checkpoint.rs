//! Model checkpoint container.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! "DMCK"                      4-byte magic
//! version                     u16, currently 1
//! config_len                  u32
//! config                      config_len bytes of TOML, the model config
//! param_count                 u64
//! params                      param_count f64 values, layout order
//! digest                      32-byte SHA-256 over everything above
//! ```
//!
//! The config echo makes a checkpoint self-describing: decoding rebuilds the
//! layout from it and requires the stored parameter count to match exactly.
//! Trailing bytes and checksum mismatches are rejected.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{ModelConfig, PointModel};

use super::cache::Reader;

const MAGIC: &[u8; 4] = b"DMCK";
const VERSION: u16 = 1;

pub fn encode_checkpoint(model: &PointModel) -> Result<Vec<u8>> {
    let config = toml::to_string(model.config())
        .map_err(|e| Error::InvalidConfig(format!("model config does not serialize: {e}")))?;
    let params = model.params();
    let mut out = Vec::with_capacity(4 + 2 + 4 + config.len() + 8 + params.len() * 8 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PointModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err_at(0, "not a checkpoint container"));
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(r.err_at(4, format!("unsupported checkpoint version {version}")));
    }
    let config_at = r.pos;
    let config_text = r.string("config")?;
    let config: ModelConfig = toml::from_str(&config_text)
        .map_err(|e| r.err_at(config_at, format!("config block: {e}")))?;
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap()) as usize;
    let params_at = r.pos;
    let raw = r.take(count * 8, "parameters")?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let body_len = r.pos;
    let digest = r.take(32, "digest")?;
    if r.pos != bytes.len() {
        return Err(r.err_at(r.pos, "trailing bytes after checkpoint"));
    }
    if Sha256::digest(&bytes[..body_len]).as_slice() != digest {
        return Err(r.err_at(body_len, "checksum mismatch"));
    }

    let mut model = PointModel::new(config)?;
    if model.param_count() != count {
        return Err(Error::ContainerFormat {
            offset: params_at,
            msg: format!(
                "config expects {} parameters, container holds {count}",
                model.param_count()
            ),
        });
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &PointModel) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(Error::file(path))
}

pub fn read_checkpoint(path: &Path) -> Result<PointModel> {
    let bytes = std::fs::read(path).map_err(Error::file(path))?;
    decode_checkpoint(&bytes)
}

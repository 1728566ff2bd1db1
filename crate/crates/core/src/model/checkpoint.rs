//! Checkpoint container:
//!
//! ```text
//! "PSGM" | version u32 | config_len u32 | config text (key=value lines)
//!        | tensor_count u32
//!        | per tensor: name_len u16 | name | rank u8 | dims u64 x rank | dtype u8 | data
//! ```

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::params::Parameters;
use crate::data_io::ByteReader;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PSGM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes<T: Scalar>(
    params: &Parameters<T>,
    config: &ModelConfig,
) -> Result<Vec<u8>> {
    params.check_schema(config)?;
    let mut cfg = config.clone();
    cfg.precision = Precision::of::<T>();
    let text = cfg.to_text();
    let mut out = Vec::with_capacity(64 + params.scalar_count() * T::BYTES);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(2);
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        out.push(T::DTYPE);
        for &v in m.as_slice() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Parameters<T>, ModelConfig)> {
    let mut r = ByteReader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let config = ModelConfig::from_text(&r.string_u32()?)?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string_u16()?;
        let rank = r.u8()?;
        if rank != 2 {
            return Err(Error::Schema(format!(
                "tensor {name:?} has rank {rank}, expected 2"
            )));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let dtype = r.u8()?;
        if dtype != T::DTYPE {
            return Err(Error::Schema(format!(
                "tensor {name:?} has dtype {dtype}, loader expects {}",
                T::DTYPE
            )));
        }
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(T::BYTES))
            .ok_or_else(|| Error::Schema(format!("tensor {name:?} dims overflow")))?;
        let raw = r.take(len)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        named.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::TrailingBytes(r.remaining()));
    }
    let params = Parameters::from_tensors(&config, named)?;
    Ok((params, config))
}

pub fn save_checkpoint<T: Scalar>(
    params: &Parameters<T>,
    config: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(params, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Parameters<T>, ModelConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Loads a checkpoint and insists that it was written for `expected`.
pub fn load_checkpoint_for<T: Scalar>(
    path: impl AsRef<Path>,
    expected: &ModelConfig,
) -> Result<Parameters<T>> {
    let (params, config) = load_checkpoint(path)?;
    let mut want = expected.clone();
    want.precision = config.precision;
    if config != want {
        return Err(Error::Schema(format!(
            "checkpoint config differs from expected:\n{}---\n{}",
            config.to_text(),
            want.to_text()
        )));
    }
    Ok(params)
}

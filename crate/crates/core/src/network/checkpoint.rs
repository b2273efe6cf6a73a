//! Binary model checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! | field        | type            |
//! |--------------|-----------------|
//! | magic        | 8 bytes `MAVGMLP\0` |
//! | version      | u32 (= 1)       |
//! | activation   | u32 (0 sigmoid, 1 tanh) |
//! | dim count    | u32             |
//! | dims         | u64 × dim count |
//! | param count  | u64             |
//! | params       | f64 × param count, canonical flatten order |

use std::fs;
use std::path::Path;

use super::{Activation, MlpModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MAVGMLP\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let dims = model.layer_dims();
    let params = model.flatten();
    let mut out = Vec::with_capacity(28 + 8 * dims.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.activation().code().to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<MlpModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.u32()?;
    let activation = Activation::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))?;
    let n_dims = r.u32()? as usize;
    if n_dims > bytes.len() / 8 {
        return Err(Error::Checkpoint(format!("implausible dim count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut model = MlpModel::zeros(&dims, activation)
        .map_err(|e| Error::Checkpoint(format!("invalid dims: {e}")))?;
    let count = r.u64()? as usize;
    if count != model.num_params() {
        return Err(Error::Checkpoint(format!(
            "dims {dims:?} need {} parameters, header says {count}",
            model.num_params()
        )));
    }
    let raw = r.take(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
    )?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    model.load_params(&params)?;
    Ok(model)
}

pub fn save(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

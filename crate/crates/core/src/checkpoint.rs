//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian u64):
//!
//! ```text
//! "BLAB1" | param count | { name len | name bytes | rank | dims... | f64 values... }*
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"BLAB1";

pub fn write_params(w: &mut impl Write, params: &ParamSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated file".into())
    } else {
        Error::Io(e)
    }
}

// Sanity bound so a corrupt header cannot trigger a huge allocation.
const MAX_LEN: u64 = 1 << 32;

pub fn read_params(r: &mut impl Read) -> Result<ParamSet> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let count = read_u64(r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u64(r)?;
        if len > MAX_LEN {
            return Err(Error::Checkpoint(format!("name length {len} out of range")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u64(r)?;
        if rank > 16 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank} out of range")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: u64 = shape.iter().map(|&d| d as u64).product();
        if numel > MAX_LEN {
            return Err(Error::Checkpoint(format!("{name}: {numel} values out of range")));
        }
        let mut data = Vec::with_capacity(numel as usize);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b).map_err(truncated)?;
            data.push(f64::from_le_bytes(b));
        }
        params.add(name, Tensor::new(&shape, data)?);
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path)?;
    read_params(&mut bytes.as_slice())
}

//! Named-tensor checkpoints.
//!
//! Layout, little-endian: magic `ALCK`, u32 version, u32 tensor count, then per
//! tensor a u32 name length, the UTF-8 name, u32 rank, u64 dims, f64 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Module, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ALCK";
pub const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let n: usize = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .unwrap_or(usize::MAX);
        if n > 1 << 28 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is too large")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(r)?));
        }
        out.push((name, Tensor::from_data(&shape, data)));
    }
    Ok(out)
}

/// Writes all parameters of `modules`, each under its own prefix.
pub fn save(path: &Path, modules: &[(&str, &dyn Module)]) -> Result<()> {
    let mut all = Vec::new();
    for (prefix, m) in modules {
        m.visit(prefix, &mut |n, t| all.push((n, t.clone())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, &all)?;
    w.flush()?;
    Ok(())
}

/// Restores parameters in place. Names and shapes must match exactly.
pub fn load(path: &Path, modules: &mut [(&str, &mut dyn Module)]) -> Result<()> {
    let stored = read_tensors(&mut BufReader::new(File::open(path)?))?;
    let mut it = stored.into_iter();
    let mut err = None;
    for (prefix, m) in modules.iter_mut() {
        m.visit_mut(prefix, &mut |n, t| {
            if err.is_some() {
                return;
            }
            match it.next() {
                Some((sn, st)) if sn == n && st.shape == t.shape => t.data = st.data,
                Some((sn, st)) => {
                    err = Some(Error::Checkpoint(format!(
                        "expected `{n}` {:?}, found `{sn}` {:?}",
                        t.shape, st.shape
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{n}`"))),
            }
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    if let Some((n, _)) = it.next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{n}`")));
    }
    Ok(())
}

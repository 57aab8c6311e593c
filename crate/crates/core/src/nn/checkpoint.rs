//! Parameter checkpoint file format.
//!
//! Layout (little-endian):
//!   magic  b"ANCK"
//!   u32    format version (1)
//!   u32    parameter count P
//!   P records of:
//!     u32       name length, then that many UTF-8 bytes
//!     u32       rank, then rank u32 dimensions
//!     f32 * n   row-major payload (n = product of dimensions)

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::params::ParamStore;
use super::Scalar;

const MAGIC: &[u8; 4] = b"ANCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint parameter {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes every parameter in the store, in definition order, as f32.
pub fn save_checkpoint<S: Scalar>(
    store: &ParamStore<S>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, store.len() as u32)?;
    for (name, id) in store.iter_named() {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        let shape = store.shape(id);
        write_u32(&mut w, shape.len() as u32)?;
        for &d in shape {
            write_u32(&mut w, d as u32)?;
        }
        for &v in store.values(id) {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads values into an already-constructed store; every store parameter
/// must be present in the file with a matching shape.
pub fn load_checkpoint<S: Scalar>(
    store: &mut ParamStore<S>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut loaded: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> =
        std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| CheckpointError::Malformed("non-utf8 parameter name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            values.push(f32::from_le_bytes(buf));
        }
        loaded.insert(name, (shape, values));
    }
    let ids: Vec<_> = store.iter_named().map(|(n, i)| (n.to_string(), i)).collect();
    for (name, id) in ids {
        let (shape, values) = loaded
            .get(&name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        if shape != store.shape(id) {
            return Err(CheckpointError::ShapeMismatch {
                name,
                found: shape.clone(),
                expected: store.shape(id).to_vec(),
            });
        }
        for (dst, &src) in store.values_mut(id).iter_mut().zip(values) {
            *dst = S::from_f64(src as f64);
        }
    }
    Ok(())
}

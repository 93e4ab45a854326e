//! Binary checkpoint format.
//!
//! ```text
//! "COOPNN" version:u32
//! count:u64
//! repeated count times:
//!     name_len:u32 name:utf8 ndim:u32 dims:u64*ndim data:f64*prod(dims)
//! ```
//! All integers and floats are little-endian, so values round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"COOPNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, entries: &[(String, Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn store_entries(store: &ParameterStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect()
}

pub fn save(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), entries)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    read_tensors(BufReader::new(File::open(path)?))
}

/// Copies every parameter of `store` from the matching checkpoint entry.
pub fn restore(store: &mut ParameterStore, entries: &[(String, Tensor)]) -> Result<()> {
    let ids: Vec<_> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
    for (id, name) in ids {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing parameter `{name}`")))?;
        if t.shape() != store.value(id).shape() {
            return Err(NnError::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTNN\0\x01\0\0\0".to_vec();
        assert!(matches!(read_tensors(&bytes[..]), Err(NnError::Checkpoint(_))));
    }

    #[test]
    fn restore_checks_shapes() {
        let mut store = ParameterStore::new(0);
        store.init_constant("w", vec![2, 2], 1.0).unwrap();
        let entries = vec![("w".to_string(), Tensor::zeros(vec![3]))];
        assert!(restore(&mut store, &entries).is_err());
    }
}

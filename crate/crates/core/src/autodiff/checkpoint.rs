//! Flat binary parameter checkpoints.
//!
//! Layout: magic bytes `ARSQCKPT`, version u32, parameter count u64, then per
//! parameter: name length u32, UTF-8 name, shape rank u32, dims as u64s,
//! little-endian f64 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{ArsqError, Result};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"ARSQCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Write named sections, flattening each parameter as `{section}/{name}`.
pub fn save_checkpoint(path: &Path, sections: &[(&str, &ParamSet)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let count: u64 = sections.iter().map(|(_, p)| p.len() as u64).sum();
    w.write_all(&count.to_le_bytes())?;
    for (section, params) in sections {
        for p in params.iter() {
            let name = format!("{section}/{}", p.name);
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(p.tensor.shape.len() as u32).to_le_bytes())?;
            for &d in &p.tensor.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &p.tensor.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every parameter back as `(full name, tensor)` pairs.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ArsqError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ArsqError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u64(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| ArsqError::BadCheckpoint("non-UTF-8 parameter name".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((
            name.clone(),
            Tensor::new(shape, data)
                .map_err(|_| ArsqError::BadCheckpoint(format!("bad shape for '{name}'")))?,
        ));
    }
    Ok(out)
}

/// Restore a section of a checkpoint into an existing layout-compatible set.
pub fn restore_section(
    entries: &[(String, Tensor)],
    section: &str,
    params: &mut ParamSet,
) -> Result<()> {
    for idx in 0..params.len() {
        let want = format!("{section}/{}", params.get(idx).name);
        let found = entries
            .iter()
            .find(|(n, _)| *n == want)
            .ok_or_else(|| ArsqError::BadCheckpoint(format!("missing parameter '{want}'")))?;
        if found.1.shape != params.get(idx).tensor.shape {
            return Err(ArsqError::BadCheckpoint(format!(
                "shape mismatch for '{want}'"
            )));
        }
        params.get_mut(idx).tensor.data.copy_from_slice(&found.1.data);
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let mut a = ParamSet::new();
        a.add("w", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.5]).unwrap());
        a.add("b", Tensor::new(vec![2], vec![0.125, -9.0]).unwrap());
        let mut b = ParamSet::new();
        b.add("w", Tensor::new(vec![1, 2], vec![7.0, 8.0]).unwrap());
        save_checkpoint(&path, &[("theta1", &a), ("phi1", &b)]).unwrap();

        let entries = load_checkpoint(&path).unwrap();
        assert_eq!(entries.len(), 3);
        assert_eq!(entries[0].0, "theta1/w");
        assert_eq!(entries[2].0, "phi1/w");

        let mut a2 = ParamSet::new();
        a2.add("w", Tensor::zeros(vec![2, 3]));
        a2.add("b", Tensor::zeros(vec![2]));
        restore_section(&entries, "theta1", &mut a2).unwrap();
        assert_eq!(a2.data(0), a.data(0));
        assert_eq!(a2.data(1), a.data(1));
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTACKPTxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(ArsqError::BadCheckpoint(_))
        ));
    }
}

//! Flat binary container for named parameter arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  b"C2TCKPT\0"
//! version  u32      currently 1
//! count    u32      number of entries
//! entry:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u32 * ndim
//!   data     f32 * product(dims)
//! ```
//!
//! Values are stored as 32-bit floats regardless of in-memory precision.
//! Entry order is preserved, so identical inputs produce byte-identical
//! files.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"C2TCKPT\0";
pub const VERSION: u32 = 1;

pub fn save_tensors(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(entries.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(bytes).map_err(io_err)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes()).map_err(io_err)?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for &v in tensor.data() {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |detail: &str| Error::MalformedFile {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        if name_len > 1 << 20 {
            return Err(bad("name too long"));
        }
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("name not utf-8"))?;
        let ndim = read_u32(&mut r, path)? as usize;
        if ndim > 8 {
            return Err(bad("too many dimensions"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, path)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.c2t");
        let entries = vec![
            ("b.weight".to_string(), Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 4.0, 0.0, -1.25]).unwrap()),
            ("a.bias".to_string(), Tensor::vector(vec![0.125, -0.375])),
            ("scalar".to_string(), Tensor::scalar(7.0)),
        ];
        save_tensors(&path, &entries).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        for ((n0, t0), (n1, t1)) in entries.iter().zip(&loaded) {
            assert_eq!(n0, n1);
            assert_eq!(t0.shape(), t1.shape());
            // All test values are exactly representable in f32.
            assert_eq!(t0.data(), t1.data());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.c2t");
        std::fs::write(&path, b"NOTMAGIC........").unwrap();
        assert!(load_tensors(&path).is_err());
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.c2t");
        let p2 = dir.path().join("b.c2t");
        let entries = vec![("w".to_string(), Tensor::vector(vec![0.1, 0.2, 0.3]))];
        save_tensors(&p1, &entries).unwrap();
        save_tensors(&p2, &entries).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

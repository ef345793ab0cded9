//! Flat, portable checkpoint format for named tensors.
//!
//! Layout: magic `PFLFE1`, then a little-endian u32 tensor count, then per
//! tensor: u32 name length, UTF-8 name bytes, u32 rank, u32 dims, and the
//! row-major payload as little-endian f64. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"PFLFE1";

/// Writes named tensors in declaration order.
pub fn save_tensors<'a, I>(path: &Path, tensors: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let items: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let fail = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(CHECKPOINT_MAGIC).map_err(fail)?;
    w.write_all(&(items.len() as u32).to_le_bytes()).map_err(fail)?;
    for (name, t) in items {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(fail)?;
        w.write_all(bytes).map_err(fail)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes()).map_err(fail)?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(fail)?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(fail)?;
        }
    }
    w.flush().map_err(fail)
}

/// Reads a checkpoint back in file order.
pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let fail = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let bad = |detail: &str| Error::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(fail)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, not a PFLFE1 checkpoint"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(fail)?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(fail)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(fail)?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("tensor name is not UTF-8"))?;

        r.read_exact(&mut u32buf).map_err(fail)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf).map_err(fail)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut f64buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut f64buf).map_err(fail)?;
            data.push(f64::from_le_bytes(f64buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::new(vec![2, 3], vec![1.5, -0.25, 1e-300, f64::MIN_POSITIVE, 0.0, 3.7])
            .unwrap();
        let b = Tensor::new(vec![1], vec![-0.0]).unwrap();
        save_tensors(&path, [("enc.0.weight", &a), ("enc.0.bias", &b)]).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "enc.0.weight");
        assert_eq!(loaded[0].1.shape(), a.shape());
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(loaded[1].1.data()[0].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTPFLFE1").unwrap();
        assert!(load_tensors(&path).is_err());
    }
}

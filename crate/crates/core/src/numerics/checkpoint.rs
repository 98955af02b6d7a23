//! Flat binary container for named f64 arrays.
//!
//! Layout, all little-endian:
//!   magic "PGS1" | version u32 | count u32
//!   per array: name_len u32 | name bytes | rank u32 | dims u64[rank] | f64[numel]
//!
//! Writing the same arrays twice produces byte-identical files, and a
//! save -> load -> save round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::param::ParamStore;
use crate::numerics::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"PGS1";
pub const VERSION: u32 = 1;

pub fn write_container<W: Write>(w: &mut W, arrays: &[(&str, &Tensor)]) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, tensor) in arrays {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(|_| bad("truncated count"))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated name length"))?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("name is not UTF-8"))?;

        r.read_exact(&mut u32buf).map_err(|_| bad("truncated rank"))?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated dims"))?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut u64buf).map_err(|_| bad("truncated data"))?;
            data.push(f64::from_le_bytes(u64buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_to_path(path: &Path, arrays: &[(&str, &Tensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_container(&mut w, arrays).map_err(|e| Error::io(path.display().to_string(), e))?;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_from_path(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_container(&mut BufReader::new(file))
}

/// Save every parameter of a store, plus any extra named arrays (metadata
/// such as a vocabulary hash encoded as one byte per f64).
pub fn save_store(path: &Path, store: &ParamStore, extra: &[(&str, &Tensor)]) -> Result<()> {
    let mut arrays: Vec<(&str, &Tensor)> = store.iter().collect();
    arrays.extend_from_slice(extra);
    save_to_path(path, &arrays)
}

/// Encode raw bytes as an f64 array for container metadata entries.
pub fn bytes_to_tensor(bytes: &[u8]) -> Tensor {
    Tensor::from_vec(bytes.iter().map(|&b| b as f64).collect())
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().map(|&v| v as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.1e300, f64::MIN_POSITIVE, 0.0, -0.0])
            .unwrap();
        let b = Tensor::from_vec(vec![42.0]);
        let mut buf = Vec::new();
        write_container(&mut buf, &[("alpha", &a), ("beta/weight", &b)]).unwrap();

        let loaded = read_container(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "alpha");
        assert_eq!(loaded[0].1.shape(), &[2, 3]);
        // bit-level comparison, not float equality
        for (x, y) in loaded[0].1.data().iter().zip(a.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }

        let mut buf2 = Vec::new();
        write_container(&mut buf2, &[("alpha", &loaded[0].1), ("beta/weight", &loaded[1].1)])
            .unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_bad_magic() {
        let data = b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(read_container(&mut data.as_slice()).is_err());
    }
}

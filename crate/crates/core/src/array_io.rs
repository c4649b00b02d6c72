//! Minimal binary array container: magic, rank, dims (u64 LE), f64 LE data.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HMVARR1\0";

pub fn encode(array: &ArrayD<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (array.ndim() + array.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(array.ndim() as u32).to_le_bytes());
    for &d in array.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in array.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<ArrayD<f64>> {
    let bad = |msg: &str| Error::Parse {
        path: origin.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut cursor = bytes;
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not an array file"));
    }
    let mut u32buf = [0u8; 4];
    cursor.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim > 8 {
        return Err(bad("implausible rank"));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut u64buf = [0u8; 8];
    for _ in 0..ndim {
        cursor.read_exact(&mut u64buf).map_err(|_| bad("truncated shape"))?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let count: usize = shape.iter().product();
    if cursor.len() != count * 8 {
        return Err(bad("payload size does not match shape"));
    }
    let data = cursor
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| bad(&e.to_string()))
}

/// Writes via a temporary sibling and renames, so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    write_atomic(path, &encode(array))
}

pub fn load(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| (seed.wrapping_add(i as u64) as f64).sin() * 1e3)
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&[rows, cols]), data).unwrap();
            let back = decode(&encode(&a), Path::new("mem")).unwrap();
            prop_assert_eq!(a, back);
        }
    }

    #[test]
    fn rejects_truncated() {
        let a = ArrayD::from_elem(IxDyn(&[3]), 1.0);
        let bytes = encode(&a);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode(b"garbage!", Path::new("mem")).is_err());
    }
}

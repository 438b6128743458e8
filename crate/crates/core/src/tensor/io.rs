//! MDT1 tensor files: magic `MDT1`, u32 little-endian rank, `rank` u32
//! little-endian dimensions, then row-major little-endian `f32` data.

use std::fs;
use std::path::Path;

use super::{numel_of, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MDT1";

/// Serialize a shape + buffer to MDT1 bytes.
pub fn write_mdt_bytes(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if numel_of(shape) != data.len() {
        return Err(Error::shape(
            "write_mdt",
            format!("shape {:?} wants {} elements, buffer has {}", shape, numel_of(shape), data.len()),
        ));
    }
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        let d32 = u32::try_from(d).map_err(|_| Error::arg("write_mdt", format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parse MDT1 bytes into `(shape, data)`.
pub fn read_mdt_bytes(bytes: &[u8], origin: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |detail: String| Error::Malformed { what: "MDT1 tensor", path: origin.to_path_buf(), detail };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing MDT1 magic".into()));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = 8 + 4 * rank;
    if bytes.len() < header {
        return Err(bad(format!("truncated header for rank {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let numel = numel_of(&shape);
    if bytes.len() != header + 4 * numel {
        return Err(bad(format!("shape {:?} wants {} data bytes, file has {}", shape, 4 * numel, bytes.len() - header)));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

/// Write a tensor file (values stored as `f32` regardless of `S`).
pub fn write_mdt<S: Scalar>(path: &Path, tensor: &Tensor<S>) -> Result<()> {
    let bytes = write_mdt_bytes(tensor.shape(), &tensor.to_f32_vec())?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a tensor file.
pub fn read_mdt<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (shape, data) = read_mdt_bytes(&bytes, path)?;
    Tensor::from_f32s(&shape, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mdt");
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.1, -2.5, 3.25, f32::MIN_POSITIVE, 1e20, -0.0]).unwrap();
        write_mdt(&path, &t).unwrap();
        let back = read_mdt::<f32>(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let (a, b) = (t.to_vec(), back.to_vec());
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn scalar_rank0_round_trips() {
        let bytes = write_mdt_bytes(&[], &[2.5]).unwrap();
        let (shape, data) = read_mdt_bytes(&bytes, Path::new("mem")).unwrap();
        assert!(shape.is_empty());
        assert_eq!(data, vec![2.5]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = read_mdt_bytes(b"NOPE\x00\x00\x00\x00", Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("magic"));
        let good = write_mdt_bytes(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let err = read_mdt_bytes(&good[..good.len() - 2], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("data bytes"));
    }
}

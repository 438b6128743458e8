//! Minimal binary tensor container: magic `MDT1`, little-endian `u32` rank,
//! one `u32` per dimension, then the row-major `f32` payload. Used for depth
//! rasters, validity masks, and model checkpoints — anywhere float data must
//! round-trip bit-exactly.
//!
//! This is the slice-level view of the format; [`crate::tensor`] exposes the
//! same encoding for its tensor handles. Both share one codec.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_mdt_bytes, write_mdt_bytes};

/// Sanity cap; nothing in this project needs deeper tensors.
const MAX_RANK: usize = 8;

/// Serialize `data` with its shape. `data.len()` must equal the product of
/// `dims`.
pub fn write_mdt(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    if dims.len() > MAX_RANK {
        return Err(Error::arg("write_mdt", format!("rank {} exceeds {MAX_RANK}", dims.len())));
    }
    let bytes = write_mdt_bytes(dims, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Deserialize a tensor written by [`write_mdt`].
pub fn read_mdt(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, data) = read_mdt_bytes(&bytes, path)?;
    if dims.len() > MAX_RANK {
        return Err(Error::Malformed {
            what: "MDT1 tensor",
            path: path.into(),
            detail: format!("rank {} exceeds {MAX_RANK}", dims.len()),
        });
    }
    Ok((dims, data))
}

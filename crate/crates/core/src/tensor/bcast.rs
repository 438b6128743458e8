//! NumPy-style broadcasting helpers shared by the elementwise ops and their
//! backward passes.

use crate::error::{Error, Result};

/// Broadcast two shapes (trailing-dimension alignment). Errors name the first
/// offending dimension pair.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::shape(
                op,
                format!("dimension {i} of broadcast: {da} vs {db} (shapes {a:?} and {b:?})"),
            ));
        };
    }
    Ok(out)
}

/// Row-major strides of `shape` aligned to `rank` output dimensions, with 0 on
/// broadcast dimensions so the walker revisits the same element.
pub fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every output position of `out_shape` with the corresponding flat
/// offsets into two broadcast operands. The innermost dimension is walked in a
/// tight loop, so `f` sees strictly increasing output offsets.
pub fn zip_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    if out_shape.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let outer: usize = out_shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    let mut base_a = 0usize;
    let mut base_b = 0usize;
    let mut flat = 0usize;
    for _ in 0..outer.max(1) {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(flat, ia, ib);
            flat += 1;
            ia += sa[rank - 1];
            ib += sb[rank - 1];
        }
        // odometer increment over the outer dimensions
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base_a -= sa[d] * out_shape[d];
            base_b -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

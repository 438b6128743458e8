//! Raw compute kernels behind the tape operations: blocked matrix products,
//! im2col/col2im and pooling loops. All kernels write each output slot from
//! exactly one place (or accumulate in a fixed order), so results are
//! reproducible run to run.
//!
//! Convolution batches the whole mini-batch into one patch matrix
//! `[c_in·k·k, N·oh·ow]` before multiplying. That keeps the contiguous inner
//! dimension of every product long even for deep layers with tiny spatial
//! extent, where per-sample products degrade into short-row traversals.

use super::Scalar;

/// Column-block width for the streaming products: a block of `c` and `b`
/// rows this wide stays resident in L1 while the `k` dimension is swept.
const COL_BLOCK: usize = 1024;

/// `c[m×n] += a[m×k] · b[k×n]`, row-major. Columns are processed in blocks;
/// within a block the `ikj` order keeps the inner loop contiguous in both `b`
/// and `c` so it vectorizes, and the `c` row segment is revisited from cache
/// for every `k`.
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(COL_BLOCK) {
        let jl = COL_BLOCK.min(n - j0);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + j0..][..jl];
            for (kk, &aik) in arow.iter().enumerate() {
                if aik == S::zero() {
                    continue;
                }
                let brow = &b[kk * n + j0..][..jl];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj += aik * bj;
                }
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored `[k×m]` and `b` is `[k×n]`. Same
/// column blocking as [`matmul_acc`]; the `a` loads are strided but tiny.
pub fn matmul_ta_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(COL_BLOCK) {
        let jl = COL_BLOCK.min(n - j0);
        for i in 0..m {
            let crow = &mut c[i * n + j0..][..jl];
            for kk in 0..k {
                let aki = a[kk * m + i];
                if aki == S::zero() {
                    continue;
                }
                let brow = &b[kk * n + j0..][..jl];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj += aki * bj;
                }
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `a` is `[m×l]` and `b` is `[n×l]`; inner dot
/// products run over contiguous rows of both operands. The dot is split into
/// `LANES` independent partial sums so the floating-point adds pipeline
/// instead of forming one long dependency chain; the split is fixed, so
/// results do not depend on `l`.
pub fn matmul_abt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, l: usize, n: usize) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);
    const LANES: usize = 64;
    for i in 0..m {
        let arow = &a[i * l..(i + 1) * l];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * l..(j + 1) * l];
            let mut acc = [S::zero(); LANES];
            let mut a_chunks = arow.chunks_exact(LANES);
            let mut b_chunks = brow.chunks_exact(LANES);
            for (ac, bc) in (&mut a_chunks).zip(&mut b_chunks) {
                for u in 0..LANES {
                    acc[u] += ac[u] * bc[u];
                }
            }
            // Mop up the remainder at a narrower width, then scalar.
            let mut a_rest = a_chunks.remainder().chunks_exact(LANES / 4);
            let mut b_rest = b_chunks.remainder().chunks_exact(LANES / 4);
            for (ac, bc) in (&mut a_rest).zip(&mut b_rest) {
                for u in 0..LANES / 4 {
                    acc[u] += ac[u] * bc[u];
                }
            }
            let mut total = S::zero();
            for (&av, &bv) in a_rest.remainder().iter().zip(b_rest.remainder()) {
                total += av * bv;
            }
            for &v in &acc {
                total += v;
            }
            *cj += total;
        }
    }
}

/// Geometry of one 2-D convolution (square kernel, symmetric zero padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn new(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if k == 0 || stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(ConvDims { c_in, h, w, c_out, k, stride, pad, oh, ow })
    }

    /// Rows of the unrolled patch matrix (`c_in · k · k`).
    pub fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Columns of the unrolled patch matrix (`oh · ow`).
    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// For kernel tap `kx`, the output-column range whose input column
/// `ox·stride + kx − pad` lands inside `[0, w)`, plus the first valid input
/// column. Empty ranges come back as `(ow, ow, 0)`.
fn tap_span(d: &ConvDims, kx: usize) -> (usize, usize, usize) {
    let lo = if d.pad > kx { (d.pad - kx).div_ceil(d.stride) } else { 0 };
    if kx > d.w - 1 + d.pad || lo >= d.ow {
        return (d.ow, d.ow, 0);
    }
    let hi = (((d.w - 1 + d.pad - kx) / d.stride) + 1).min(d.ow);
    (lo, hi, lo * d.stride + kx - d.pad)
}

/// Unroll one sample `[c_in, h, w]` into its column block of the batched
/// patch matrix: rows are `row_stride` wide and the block starts at column
/// `col0`. Padding positions become zeros.
pub fn im2col<S: Scalar>(x: &[S], d: &ConvDims, col: &mut [S], col0: usize, row_stride: usize) {
    debug_assert_eq!(x.len(), d.c_in * d.h * d.w);
    debug_assert!(col0 + d.col_cols() <= row_stride);
    debug_assert_eq!(col.len(), d.col_rows() * row_stride);
    for c in 0..d.c_in {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let (lo, hi, ix0) = tap_span(d, kx);
                let row = &mut col[((c * d.k + ky) * d.k + kx) * row_stride + col0..][..d.col_cols()];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    dst[..lo].fill(S::zero());
                    dst[hi..].fill(S::zero());
                    if d.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (t, slot) in dst[lo..hi].iter_mut().enumerate() {
                            *slot = src[ix0 + t * d.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add one sample's column block of a patch-matrix gradient back onto
/// the input layout (the adjoint of [`im2col`]).
pub fn col2im_acc<S: Scalar>(col: &[S], d: &ConvDims, dx: &mut [S], col0: usize, row_stride: usize) {
    debug_assert_eq!(dx.len(), d.c_in * d.h * d.w);
    debug_assert!(col0 + d.col_cols() <= row_stride);
    debug_assert_eq!(col.len(), d.col_rows() * row_stride);
    for c in 0..d.c_in {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let (lo, hi, ix0) = tap_span(d, kx);
                let row = &col[((c * d.k + ky) * d.k + kx) * row_stride + col0..][..d.col_cols()];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &row[oy * d.ow..(oy + 1) * d.ow];
                    let drow = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    if d.stride == 1 {
                        for (dv, &v) in drow[ix0..ix0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *dv += v;
                        }
                    } else {
                        for (t, &v) in src[lo..hi].iter().enumerate() {
                            drow[ix0 + t * d.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution forward. All samples are unrolled into one patch
/// matrix `cols[col_rows, n·col_cols]` (kept for the backward pass), a single
/// product against the kernel matrix produces `[c_out, n·col_cols]`, and the
/// result is scattered back into the per-sample output layout.
pub fn conv2d_forward<S: Scalar>(
    x: &[S],
    w: &[S],
    bias: Option<&[S]>,
    n: usize,
    d: &ConvDims,
    y: &mut [S],
    cols: &mut [S],
) {
    let xs = d.c_in * d.h * d.w;
    let l = d.col_cols();
    let big_l = n * l;
    debug_assert_eq!(x.len(), n * xs);
    debug_assert_eq!(y.len(), n * d.c_out * l);
    debug_assert_eq!(cols.len(), d.col_rows() * big_l);
    for s in 0..n {
        im2col(&x[s * xs..(s + 1) * xs], d, cols, s * l, big_l);
    }
    let mut ybuf = vec![S::zero(); d.c_out * big_l];
    if let Some(b) = bias {
        for (c, row) in ybuf.chunks_exact_mut(big_l).enumerate() {
            row.fill(b[c]);
        }
    }
    matmul_acc(w, cols, &mut ybuf, d.c_out, d.col_rows(), big_l);
    for s in 0..n {
        for c in 0..d.c_out {
            y[(s * d.c_out + c) * l..][..l].copy_from_slice(&ybuf[c * big_l + s * l..][..l]);
        }
    }
}

/// Batched convolution backward. `dx` may be `None` when the input needs no
/// gradient. The output gradient is first regrouped into `[c_out, n·col_cols]`
/// so the weight and input-gradient products run over the batched layout.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    dy: &[S],
    w: &[S],
    cols: &[S],
    n: usize,
    d: &ConvDims,
    dx: Option<&mut [S]>,
    dw: &mut [S],
    db: Option<&mut [S]>,
) {
    let l = d.col_cols();
    let big_l = n * l;
    let mut dyt = vec![S::zero(); d.c_out * big_l];
    for s in 0..n {
        for c in 0..d.c_out {
            dyt[c * big_l + s * l..][..l].copy_from_slice(&dy[(s * d.c_out + c) * l..][..l]);
        }
    }
    matmul_abt_acc(&dyt, cols, dw, d.c_out, big_l, d.col_rows());
    if let Some(db) = db {
        for (c, row) in dyt.chunks_exact(big_l).enumerate() {
            let mut acc = S::zero();
            for &v in row {
                acc += v;
            }
            db[c] += acc;
        }
    }
    if let Some(dx) = dx {
        let xs = d.c_in * d.h * d.w;
        let mut dcol = vec![S::zero(); d.col_rows() * big_l];
        matmul_ta_acc(w, &dyt, &mut dcol, d.col_rows(), d.c_out, big_l);
        for s in 0..n {
            col2im_acc(&dcol, d, &mut dx[s * xs..(s + 1) * xs], s * l, big_l);
        }
    }
}

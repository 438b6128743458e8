//! Per-pixel local measurement entropy.
//!
//! Each pixel receives the Shannon entropy (base 2) of the histogram of
//! values in its window×window neighborhood, normalized by `log2(bins)` so
//! the result lies in `[0,1]`. Uniform regions score near 0; edges, corners,
//! and noisy measurements score high. Sparse modalities exclude pixels
//! without a real measurement via the validity mask; a window with no valid
//! sample at all scores 0.
//!
//! The RGB map is computed on luma with 32 bins, the depth map on
//! max-normalized depth with 16 bins, both over a 9×9 window, and the two are
//! fused per pixel by taking the maximum.

use crate::error::{Error, Result};
use crate::raster::{BoolRaster, Raster, RgbRaster};

/// Neighborhood side length used throughout the pipeline.
pub const WINDOW: usize = 9;
/// Histogram resolution for max-normalized depth.
pub const DEPTH_BINS: usize = 16;
/// Histogram resolution for RGB luma.
pub const RGB_BINS: usize = 32;

/// Sliding-window normalized Shannon entropy of `raster` under `valid`.
///
/// `raster` values must already be normalized to `[0,1]`; `window` must be
/// odd and ≥ 3; `bins` ≥ 2. Windows are reflected at the borders (the border
/// pixel itself is duplicated). Runs one histogram per row, slid column by
/// column, so cost is `O(h·w·window)` rather than `O(h·w·window²)`.
pub fn local_entropy(
    raster: &Raster,
    valid: &BoolRaster,
    window: usize,
    bins: usize,
) -> Result<Raster> {
    if window.is_multiple_of(2) || window < 3 {
        return Err(Error::arg("local_entropy", format!("window must be odd and ≥ 3, got {window}")));
    }
    if bins < 2 {
        return Err(Error::arg("local_entropy", format!("bins must be ≥ 2, got {bins}")));
    }
    if (valid.h(), valid.w()) != (raster.h(), raster.w()) {
        return Err(Error::shape(
            "local_entropy",
            format!("mask is {}×{}, raster is {}×{}", valid.h(), valid.w(), raster.h(), raster.w()),
        ));
    }
    let (h, w) = (raster.h(), raster.w());
    let rad = (window / 2) as isize;

    // k·log2(k) lookup so per-pixel entropy is a sum over bins:
    //   H = log2(n) − Σ_k count_k·log2(count_k) / n
    let xlog: Vec<f64> = (0..=window * window)
        .map(|k| if k == 0 { 0.0 } else { k as f64 * (k as f64).log2() })
        .collect();
    let norm = (bins as f64).log2();
    let bin_of = |v: f32| ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1);

    let mut out = Raster::new(h, w);
    let mut hist = vec![0u32; bins];
    for r in 0..h {
        let rows: Vec<usize> = (r as isize - rad..=r as isize + rad).map(|i| reflect(i, h)).collect();
        hist.fill(0);
        let mut n_valid = 0u32;
        let column = |hist: &mut [u32], n_valid: &mut u32, ci: isize, sign: i32| {
            let c = reflect(ci, w);
            for &rr in &rows {
                if valid.at(rr, c) {
                    let b = bin_of(raster.at(rr, c));
                    if sign > 0 {
                        hist[b] += 1;
                        *n_valid += 1;
                    } else {
                        hist[b] -= 1;
                        *n_valid -= 1;
                    }
                }
            }
        };
        for ci in -rad..=rad {
            column(&mut hist, &mut n_valid, ci, 1);
        }
        for c in 0..w {
            let e = if n_valid == 0 {
                0.0
            } else {
                let n = n_valid as f64;
                let sum: f64 = hist.iter().map(|&k| xlog[k as usize]).sum();
                ((n.log2() - sum / n) / norm) as f32
            };
            out.set(r, c, e.clamp(0.0, 1.0));
            if c + 1 < w {
                column(&mut hist, &mut n_valid, c as isize - rad, -1);
                column(&mut hist, &mut n_valid, c as isize + 1 + rad, 1);
            }
        }
    }
    Ok(out)
}

/// Mirror out-of-range indices back into `[0, n)`, duplicating the border
/// pixel (−1 → 0, n → n−1), folding repeatedly for small rasters.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - 1 - i;
    }
    i as usize
}

/// Per-pixel maximum of two entropy maps.
pub fn max_fusion(e_a: &Raster, e_b: &Raster) -> Result<Raster> {
    if (e_a.h(), e_a.w()) != (e_b.h(), e_b.w()) {
        return Err(Error::shape(
            "max_fusion",
            format!("{}×{} vs {}×{}", e_a.h(), e_a.w(), e_b.h(), e_b.w()),
        ));
    }
    let data = e_a.data().iter().zip(e_b.data()).map(|(&a, &b)| a.max(b)).collect();
    Raster::from_vec(e_a.h(), e_a.w(), data)
}

/// Average-pool an entropy map down to the resolution of a feature map.
/// Window and stride both equal `factor`; dims must divide evenly.
pub fn downscale_entropy(e: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::arg("downscale_entropy", "factor must be ≥ 1".to_string()));
    }
    if !e.h().is_multiple_of(factor) || !e.w().is_multiple_of(factor) {
        return Err(Error::shape(
            "downscale_entropy",
            format!("{}×{} not divisible by {factor}", e.h(), e.w()),
        ));
    }
    let (oh, ow) = (e.h() / factor, e.w() / factor);
    let inv = 1.0 / (factor * factor) as f32;
    Ok(Raster::from_fn(oh, ow, |r, c| {
        let mut acc = 0.0;
        for dr in 0..factor {
            for dc in 0..factor {
                acc += e.at(r * factor + dr, c * factor + dc);
            }
        }
        acc * inv
    }))
}

/// RGB entropy map: luma histogram, 9×9 window, 32 bins, every pixel valid.
pub fn rgb_entropy(rgb: &RgbRaster) -> Result<Raster> {
    let all = BoolRaster::full(rgb.h(), rgb.w(), true);
    local_entropy(&rgb.luma(), &all, WINDOW, RGB_BINS)
}

/// Depth entropy map: depth normalized by `d_max`, 9×9 window, 16 bins,
/// pixels without a return excluded.
pub fn depth_entropy(depth: &Raster, valid: &BoolRaster, d_max: f32) -> Result<Raster> {
    if d_max <= 0.0 {
        return Err(Error::arg("depth_entropy", format!("d_max must be > 0, got {d_max}")));
    }
    let normalized = Raster::from_vec(
        depth.h(),
        depth.w(),
        depth.data().iter().map(|&v| v / d_max).collect(),
    )?;
    local_entropy(&normalized, valid, WINDOW, DEPTH_BINS)
}

//! Anchor estimation: k-means over ground-truth box sizes.
//!
//! Three (w, h) centroids are fit to the source-split annotations with plain
//! Lloyd iterations under Euclidean distance. Initialization is
//! deterministic — boxes are sorted by area and the centroids seeded from the
//! 1/6, 3/6, and 5/6 quantiles — so the same boxes always yield the same
//! anchors, keeping end-to-end runs reproducible without threading an RNG
//! through dataset preparation.

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;

fn dist2(a: &[f32; 2], b: &[f32; 2]) -> f64 {
    let dw = (a[0] - b[0]) as f64;
    let dh = (a[1] - b[1]) as f64;
    dw * dw + dh * dh
}

/// Fit three (w, h) anchor priors to the given box sizes, returned in
/// ascending area order so they line up with the P3/P4/P5 scales.
pub fn estimate_anchors(sizes: &[[f32; 2]]) -> Result<[[f32; 2]; 3]> {
    if sizes.len() < 3 {
        return Err(Error::arg("estimate_anchors", format!("need at least 3 boxes, got {}", sizes.len())));
    }
    for (i, s) in sizes.iter().enumerate() {
        if s.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::arg("estimate_anchors", format!("box {i} = {s:?} must be positive and finite")));
        }
    }

    let mut sorted: Vec<[f32; 2]> = sizes.to_vec();
    sorted.sort_by(|a, b| (a[0] * a[1]).total_cmp(&(b[0] * b[1])));
    let n = sorted.len();
    let mut centroids = [sorted[n / 6], sorted[n / 2], sorted[5 * n / 6]];

    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, s) in sorted.iter().enumerate() {
            let best = (0..3)
                .min_by(|&a, &b| dist2(s, &centroids[a]).total_cmp(&dist2(s, &centroids[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = [[0.0f64; 2]; 3];
        let mut counts = [0usize; 3];
        for (i, s) in sorted.iter().enumerate() {
            sums[assign[i]][0] += s[0] as f64;
            sums[assign[i]][1] += s[1] as f64;
            counts[assign[i]] += 1;
        }
        for k in 0..3 {
            if counts[k] == 0 {
                // Reseed a starved cluster at the point farthest from its
                // centroid so three distinct anchors always come out.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&sorted[a], &centroids[assign[a]]).total_cmp(&dist2(&sorted[b], &centroids[assign[b]]))
                    })
                    .unwrap();
                centroids[k] = sorted[far];
                changed = true;
            } else {
                centroids[k] = [(sums[k][0] / counts[k] as f64) as f32, (sums[k][1] / counts[k] as f64) as f32];
            }
        }
        if !changed {
            break;
        }
    }

    centroids.sort_by(|a, b| (a[0] * a[1]).total_cmp(&(b[0] * b[1])));
    Ok(centroids)
}

//! Source-domain training augmentations: lidar-style depth degradation
//! (dropout, noise, backscatter clutter), RGB color jitter, and geometric
//! transforms applied identically to both modalities and the box labels.
//!
//! Every function is deterministic given its random generator, and identity
//! parameter values take exact skip paths — an augmentation dialed to zero
//! returns the input bit for bit, not merely within rounding error.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{BoolRaster, Raster, RgbRaster};
use crate::synthdata::Sample;

/// Augmentation strengths. Defaults follow the training recipe: depth dropout
/// rate drawn per sample from [0, 0.4], depth noise at 1% of the range,
/// clutter points added at rate 0.1 below 20% of the range.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Per-sample dropout rate is drawn uniformly from [0, this].
    pub p_dropout_max: f32,
    /// Depth noise σ as a fraction of d_max.
    pub noise_sigma_frac: f32,
    /// Probability that an empty pixel gains a clutter return.
    pub p_backscatter: f32,
    /// Clutter depths are drawn below this fraction of d_max.
    pub backscatter_depth_frac: f32,
    /// Hue rotation is drawn from ± this many turns.
    pub hue_max_shift: f32,
    pub saturation_range: (f32, f32),
    pub contrast_range: (f32, f32),
    pub flip_prob: f32,
    pub scale_range: (f32, f32),
    /// Translation is drawn from ± this fraction of each frame dimension.
    pub translate_frac: f32,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_dropout_max: 0.4,
            noise_sigma_frac: 0.01,
            p_backscatter: 0.1,
            backscatter_depth_frac: 0.2,
            hue_max_shift: 0.1,
            saturation_range: (0.6, 1.4),
            contrast_range: (0.6, 1.4),
            flip_prob: 0.5,
            scale_range: (0.9, 1.1),
            translate_frac: 0.1,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Reject out-of-range strengths. Probabilities live in [0,1]; the two
    /// depth fractions must be positive (use the ops directly for a
    /// no-noise/no-clutter pipeline).
    pub fn validate(&self) -> Result<()> {
        let prob = |field: &str, v: f32| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is not a probability")))
            }
        };
        prob("augment.p_dropout_max", self.p_dropout_max)?;
        prob("augment.p_backscatter", self.p_backscatter)?;
        prob("augment.flip_prob", self.flip_prob)?;
        for (field, v) in [
            ("augment.noise_sigma_frac", self.noise_sigma_frac),
            ("augment.backscatter_depth_frac", self.backscatter_depth_frac),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(field, format!("{v} outside (0, 1]")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue_max_shift) {
            return Err(Error::config(
                "augment.hue_max_shift",
                format!("{} outside [0, 0.5] turns", self.hue_max_shift),
            ));
        }
        for (field, (lo, hi)) in [
            ("augment.saturation_range", self.saturation_range),
            ("augment.contrast_range", self.contrast_range),
            ("augment.scale_range", self.scale_range),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::config(field, format!("({lo}, {hi}) is not a positive range")));
            }
        }
        if !(0.0..=1.0).contains(&self.translate_frac) {
            return Err(Error::config(
                "augment.translate_frac",
                format!("{} outside [0, 1]", self.translate_frac),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// depth ops
// ---------------------------------------------------------------------------

/// Invalidate each valid pixel independently with probability `p`, writing
/// the sentinel depth 0. This is the forced-rate hook; training draws the
/// rate via [`points_dropout`].
pub fn dropout_with_rate(depth: &mut Raster, mask: &mut BoolRaster, p: f32, rng: &mut impl Rng) {
    assert!((0.0..=1.0).contains(&p), "dropout rate {p} outside [0,1]");
    if p == 0.0 {
        return;
    }
    for (d, m) in depth.data_mut().iter_mut().zip(mask.data_mut()) {
        if *m && rng.gen_bool(p as f64) {
            *m = false;
            *d = 0.0;
        }
    }
}

/// Draw a dropout rate uniformly from [0, `p_dropout_max`] once, then thin
/// the valid returns at that rate.
pub fn points_dropout(
    depth: &mut Raster,
    mask: &mut BoolRaster,
    p_dropout_max: f32,
    rng: &mut impl Rng,
) {
    assert!((0.0..=1.0).contains(&p_dropout_max));
    if p_dropout_max == 0.0 {
        return;
    }
    let p = rng.gen_range(0.0..=p_dropout_max);
    dropout_with_rate(depth, mask, p, rng);
}

/// Add i.i.d. zero-mean Gaussian noise with standard deviation `sigma` to
/// every valid depth, clamped back into [0, `d_max`]. Invalid pixels are
/// untouched; `sigma == 0` is an exact identity.
pub fn depth_noise(
    depth: &mut Raster,
    mask: &BoolRaster,
    sigma: f32,
    d_max: f32,
    rng: &mut impl Rng,
) {
    assert!(sigma >= 0.0 && d_max > 0.0);
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, sigma).expect("σ is finite and positive");
    for (d, m) in depth.data_mut().iter_mut().zip(mask.data()) {
        if *m {
            *d = (*d + normal.sample(rng)).clamp(0.0, d_max);
        }
    }
}

/// Turn each invalid pixel into a spurious near return with probability `p`;
/// clutter depths are uniform on the open interval (0, `depth_frac`·`d_max`).
pub fn backscatter(
    depth: &mut Raster,
    mask: &mut BoolRaster,
    p: f32,
    depth_frac: f32,
    d_max: f32,
    rng: &mut impl Rng,
) {
    assert!((0.0..=1.0).contains(&p) && depth_frac > 0.0 && depth_frac <= 1.0 && d_max > 0.0);
    if p == 0.0 {
        return;
    }
    let hi = depth_frac * d_max;
    for (d, m) in depth.data_mut().iter_mut().zip(mask.data_mut()) {
        if !*m && rng.gen_bool(p as f64) {
            // reject the (measure-zero but reachable) exact 0.0 draw so
            // clutter is never confused with the invalid sentinel
            *d = loop {
                let z = rng.gen_range(0.0..hi);
                if z > 0.0 {
                    break z;
                }
            };
            *m = true;
        }
    }
}

// ---------------------------------------------------------------------------
// color jitter
// ---------------------------------------------------------------------------

/// Hue angle in turns, saturation, value — all in [0,1].
fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let d = max - min;
    let s = if max == 0.0 { 0.0 } else { d / max };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    if s == 0.0 {
        // achromatic: return the value channel untouched so gray pixels
        // survive the round trip bit-exactly
        return (v, v, v);
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as i32).min(5);
    let f = h6 - i as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Apply fixed jitter factors: rotate hue by `hue_shift` turns, scale
/// saturation, then scale contrast about the image's global mean. Factors at
/// their identity values skip their stage entirely, so
/// `rgb_jitter_with(x, 0.0, 1.0, 1.0)` is bit-exact.
pub fn rgb_jitter_with(rgb: &mut RgbRaster, hue_shift: f32, sat_factor: f32, contrast: f32) {
    if hue_shift != 0.0 || sat_factor != 1.0 {
        for r in 0..rgb.h() {
            for c in 0..rgb.w() {
                let (h, s, v) = rgb_to_hsv(rgb.at(0, r, c), rgb.at(1, r, c), rgb.at(2, r, c));
                let h = (h + hue_shift).rem_euclid(1.0);
                let s = (s * sat_factor).clamp(0.0, 1.0);
                let (nr, ng, nb) = hsv_to_rgb(h, s, v);
                rgb.set_pixel(r, c, [nr, ng, nb]);
            }
        }
    }
    if contrast != 1.0 {
        let data = rgb.data_mut();
        let m = data.iter().sum::<f32>() / data.len() as f32;
        for v in data.iter_mut() {
            *v = (m + (*v - m) * contrast).clamp(0.0, 1.0);
        }
    }
}

/// Draw hue/saturation/contrast factors from the configured ranges and apply
/// them.
pub fn rgb_jitter(rgb: &mut RgbRaster, cfg: &AugmentConfig, rng: &mut impl Rng) {
    let hue = rng.gen_range(-cfg.hue_max_shift..=cfg.hue_max_shift);
    let sat = rng.gen_range(cfg.saturation_range.0..=cfg.saturation_range.1);
    let con = rng.gen_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    rgb_jitter_with(rgb, hue, sat, con);
}

// ---------------------------------------------------------------------------
// paired geometric transform
// ---------------------------------------------------------------------------

/// One sampled geometric transform: horizontal flip, then scale about the
/// frame center, then translation (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricDraw {
    pub flip: bool,
    pub scale: f32,
    pub tx: f32,
    pub ty: f32,
}

impl GeometricDraw {
    pub const IDENTITY: GeometricDraw =
        GeometricDraw { flip: false, scale: 1.0, tx: 0.0, ty: 0.0 };

    pub fn is_identity(&self) -> bool {
        !self.flip && self.scale == 1.0 && self.tx == 0.0 && self.ty == 0.0
    }

    pub fn sample(cfg: &AugmentConfig, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        GeometricDraw {
            flip: rng.gen_bool(cfg.flip_prob as f64),
            scale: rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1),
            tx: rng.gen_range(-cfg.translate_frac..=cfg.translate_frac) * w as f32,
            ty: rng.gen_range(-cfg.translate_frac..=cfg.translate_frac) * h as f32,
        }
    }
}

/// Apply one geometric draw to RGB, depth, validity mask, and labels, all
/// through the same coordinate map, then recompute the entropy maps.
///
/// Rasters are resampled by inverse mapping with nearest-neighbor lookup —
/// depth values are moved, never blended, so sparse returns stay physically
/// meaningful. Pixels whose source falls outside the frame become empty
/// (black RGB, invalid depth). Boxes are mapped forward, clipped to the
/// frame, and dropped entirely when nothing remains. The identity draw
/// returns an exact copy.
pub fn geometric_with(sample: &Sample, draw: GeometricDraw, d_max: f32) -> Result<Sample> {
    if draw.is_identity() {
        return Ok(sample.clone());
    }
    if !(draw.scale > 0.0 && draw.scale.is_finite()) {
        return Err(Error::arg("geometric", format!("scale {} must be positive", draw.scale)));
    }
    let (h, w) = (sample.depth.h(), sample.depth.w());
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let mut rgb = RgbRaster::new(h, w);
    let mut depth = Raster::new(h, w);
    let mut mask = BoolRaster::full(h, w, false);
    for r in 0..h {
        let v1 = (r as f32 + 0.5) - draw.ty;
        let sv = cy + (v1 - cy) / draw.scale;
        if !(0.0..h as f32).contains(&sv) {
            continue;
        }
        let sr = sv as usize;
        for c in 0..w {
            let u1 = (c as f32 + 0.5) - draw.tx;
            let u2 = cx + (u1 - cx) / draw.scale;
            let su = if draw.flip { w as f32 - u2 } else { u2 };
            if !(0.0..w as f32).contains(&su) {
                continue;
            }
            let sc = su as usize;
            rgb.set_pixel(
                r,
                c,
                [sample.rgb.at(0, sr, sc), sample.rgb.at(1, sr, sc), sample.rgb.at(2, sr, sc)],
            );
            depth.set(r, c, sample.depth.at(sr, sc));
            mask.set(r, c, sample.valid_mask.at(sr, sc));
        }
    }

    let mut labels = Vec::with_capacity(sample.labels.len());
    for a in &sample.labels {
        let [x1, y1, x2, y2] = a.bbox;
        let (fx1, fx2) = if draw.flip { (w as f32 - x2, w as f32 - x1) } else { (x1, x2) };
        let nx1 = (cx + (fx1 - cx) * draw.scale + draw.tx).max(0.0);
        let nx2 = (cx + (fx2 - cx) * draw.scale + draw.tx).min(w as f32);
        let ny1 = (cy + (y1 - cy) * draw.scale + draw.ty).max(0.0);
        let ny2 = (cy + (y2 - cy) * draw.scale + draw.ty).min(h as f32);
        if nx1 < nx2 && ny1 < ny2 {
            labels.push(crate::synthdata::Annotation {
                class_id: a.class_id,
                bbox: [nx1, ny1, nx2, ny2],
            });
        }
    }

    let mut out = Sample {
        rgb,
        depth,
        valid_mask: mask,
        e_rgb: Raster::new(h, w),
        e_depth: Raster::new(h, w),
        e_max: Raster::new(h, w),
        labels,
        labels_eval_only: sample.labels_eval_only,
        domain: sample.domain,
    };
    out.refresh_entropy(d_max)?;
    Ok(out)
}

/// Draw a geometric transform from the config and apply it to the whole
/// sample.
pub fn paired_geometric(
    sample: &Sample,
    cfg: &AugmentConfig,
    d_max: f32,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let draw = GeometricDraw::sample(cfg, sample.depth.h(), sample.depth.w(), rng);
    geometric_with(sample, draw, d_max)
}

// ---------------------------------------------------------------------------
// sample-level pipelines
// ---------------------------------------------------------------------------

/// Full source-domain pipeline: depth dropout → depth noise → backscatter →
/// color jitter → paired geometric transform, with entropy maps recomputed on
/// the final rasters.
pub fn augment_sample(
    sample: &Sample,
    cfg: &AugmentConfig,
    d_max: f32,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let mut out = sample.clone();
    points_dropout(&mut out.depth, &mut out.valid_mask, cfg.p_dropout_max, rng);
    depth_noise(&mut out.depth, &out.valid_mask, cfg.noise_sigma_frac * d_max, d_max, rng);
    backscatter(
        &mut out.depth,
        &mut out.valid_mask,
        cfg.p_backscatter,
        cfg.backscatter_depth_frac,
        d_max,
        rng,
    );
    rgb_jitter(&mut out.rgb, cfg, rng);
    let draw = GeometricDraw::sample(cfg, out.depth.h(), out.depth.w(), rng);
    if draw.is_identity() {
        out.refresh_entropy(d_max)?;
        return Ok(out);
    }
    // entropy is stale here; geometric_with recomputes it on the moved rasters
    geometric_with(&out, draw, d_max)
}

/// Target-domain pipeline: geometric transforms only. The weather corruption
/// is the domain itself; re-corrupting shifted frames would double-degrade
/// them, so unlabeled data gets spatial augmentation alone.
pub fn augment_geometric_only(
    sample: &Sample,
    cfg: &AugmentConfig,
    d_max: f32,
    rng: &mut impl Rng,
) -> Result<Sample> {
    paired_geometric(sample, cfg, d_max, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn speckled(seed: u64, h: usize, w: usize) -> (Raster, BoolRaster) {
        let mut r = rng(seed);
        let mut depth = Raster::new(h, w);
        let mut mask = BoolRaster::full(h, w, false);
        for i in 0..h * w {
            if r.gen_bool(0.5) {
                depth.data_mut()[i] = r.gen_range(0.1..50.0);
                mask.data_mut()[i] = true;
            }
        }
        (depth, mask)
    }

    #[test]
    fn zero_strength_depth_ops_are_exact_identities() {
        let (depth, mask) = speckled(1, 20, 20);
        let (mut d2, mut m2) = (depth.clone(), mask.clone());
        points_dropout(&mut d2, &mut m2, 0.0, &mut rng(2));
        depth_noise(&mut d2, &mask, 0.0, 50.0, &mut rng(2));
        backscatter(&mut d2, &mut m2, 0.0, 0.2, 50.0, &mut rng(2));
        assert_eq!(depth, d2);
        assert_eq!(mask, m2);
    }

    #[test]
    fn forced_full_dropout_empties_the_mask() {
        let (mut depth, mut mask) = speckled(3, 20, 20);
        dropout_with_rate(&mut depth, &mut mask, 1.0, &mut rng(4));
        assert_eq!(mask.count(), 0);
        assert!(depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn noise_leaves_invalid_pixels_untouched() {
        let (depth, mask) = speckled(5, 30, 30);
        let mut noisy = depth.clone();
        depth_noise(&mut noisy, &mask, 0.5, 50.0, &mut rng(6));
        let mut changed = 0;
        for i in 0..depth.data().len() {
            if mask.data()[i] {
                changed += (noisy.data()[i] != depth.data()[i]) as usize;
            } else {
                assert_eq!(noisy.data()[i].to_bits(), depth.data()[i].to_bits());
            }
        }
        assert!(changed > 300, "noise changed only {changed} pixels");
    }

    #[test]
    fn backscatter_adds_only_near_returns_on_empty_pixels() {
        let (depth, mask) = speckled(7, 40, 40);
        let (mut d2, mut m2) = (depth.clone(), mask.clone());
        backscatter(&mut d2, &mut m2, 0.5, 0.2, 50.0, &mut rng(8));
        for i in 0..d2.data().len() {
            if mask.data()[i] {
                assert_eq!(d2.data()[i].to_bits(), depth.data()[i].to_bits());
            } else if m2.data()[i] {
                assert!(d2.data()[i] > 0.0 && d2.data()[i] < 0.2 * 50.0);
            }
        }
        assert!(m2.count() > mask.count());
    }

    #[test]
    fn identity_jitter_is_bit_exact() {
        let mut r = rng(9);
        let mut rgb = RgbRaster::new(8, 8);
        for v in rgb.data_mut() {
            *v = r.gen_range(0.0..1.0);
        }
        let before = rgb.clone();
        rgb_jitter_with(&mut rgb, 0.0, 1.0, 1.0);
        assert_eq!(before, rgb);
        let cfg = AugmentConfig {
            hue_max_shift: 0.0,
            saturation_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            ..AugmentConfig::default()
        };
        rgb_jitter(&mut rgb, &cfg, &mut rng(10));
        assert_eq!(before, rgb);
    }

    #[test]
    fn hue_rotation_fixes_grayscale_pixels() {
        let mut rgb = RgbRaster::new(4, 4);
        let mut r = rng(11);
        for i in 0..16 {
            let g = r.gen_range(0.0..1.0);
            rgb.set_pixel(i / 4, i % 4, [g, g, g]);
        }
        let before = rgb.clone();
        rgb_jitter_with(&mut rgb, 0.37, 1.0, 1.0);
        assert_eq!(before, rgb);
    }

    #[test]
    fn contrast_doubles_deviations_about_the_mean() {
        let mut rgb = RgbRaster::from_vec(1, 2, vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.75]).unwrap();
        rgb_jitter_with(&mut rgb, 0.0, 1.0, 2.0);
        for c in 0..3 {
            assert_eq!(rgb.at(c, 0, 0), 0.0);
            assert_eq!(rgb.at(c, 0, 1), 1.0);
        }
    }

    #[test]
    fn hue_rotation_by_a_full_turn_round_trips() {
        let mut r = rng(12);
        let mut rgb = RgbRaster::new(6, 6);
        for v in rgb.data_mut() {
            *v = r.gen_range(0.0..1.0);
        }
        let before = rgb.clone();
        let mut once = rgb.clone();
        rgb_jitter_with(&mut once, 1.0 / 3.0, 1.0, 1.0);
        rgb_jitter_with(&mut once, 1.0 / 3.0, 1.0, 1.0);
        rgb_jitter_with(&mut once, 1.0 / 3.0, 1.0, 1.0);
        for (a, b) in before.data().iter().zip(once.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b} after 3×120° hue rotation");
        }
    }

    #[test]
    fn config_validation_rejects_out_of_range_fields() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig { p_dropout_max: 1.5, ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig { noise_sigma_frac: 0.0, ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig { scale_range: (1.1, 0.9), ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig { hue_max_shift: 0.7, ..AugmentConfig::default() };
        assert!(bad.validate().is_err());
    }
}

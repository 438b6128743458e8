//! Domain-shift corruptions: turn a clear-day frame into a frame from one of
//! the adverse target domains.
//!
//! Each target domain degrades the two modalities differently — fog crushes
//! RGB contrast and scatters lidar returns, night darkens RGB but leaves
//! lidar alone, snow does a little of everything. The magnitudes are tuned so
//! a detector trained only on clear data loses substantial accuracy on every
//! target, giving adaptation something real to recover.

use rand::Rng;

use super::{Domain, Sample};
use crate::augment::{backscatter, dropout_with_rate};
use crate::error::{Error, Result};

/// Per-domain corruption strengths.
///
/// RGB: `out = clamp(((x − ½)·contrast + ½)·brightness + noise)`, i.e.
/// contrast compresses toward mid-gray, brightness rescales, and `noise_sigma`
/// adds Gaussian sensor noise. Depth: valid returns are dropped at
/// `dropout`, and empty pixels gain near-range clutter at `backscatter`
/// below `backscatter_depth_frac` of the range.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub contrast: f32,
    pub brightness: f32,
    pub noise_sigma: f32,
    pub dropout: f32,
    pub backscatter: f32,
    pub backscatter_depth_frac: f32,
}

impl DomainSpec {
    /// The built-in corruption table. `clear_day` is the identity.
    pub fn for_domain(domain: Domain) -> Self {
        // backscatter applies per empty pixel and the frames are ~85% empty,
        // so small rates already add hundreds of clutter returns; dense fog
        // must still lose far more returns than it gains
        let (contrast, brightness, noise_sigma, dropout, backscatter) = match domain {
            Domain::ClearDay => (1.0, 1.0, 0.0, 0.0, 0.0),
            Domain::LightFog => (0.55, 1.1, 0.0, 0.45, 0.01),
            Domain::DenseFog => (0.30, 1.15, 0.0, 0.75, 0.03),
            Domain::Snow => (0.70, 1.2, 0.04, 0.35, 0.06),
            Domain::Night => (1.0, 0.4, 0.01, 0.0, 0.0),
        };
        DomainSpec {
            domain,
            contrast,
            brightness,
            noise_sigma,
            dropout,
            backscatter,
            backscatter_depth_frac: 0.2,
        }
    }

    /// Look up the corruption table by tag, rejecting unknown domains.
    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(DomainSpec::for_domain(tag.parse()?))
    }

    pub fn is_identity(&self) -> bool {
        self.contrast == 1.0
            && self.brightness == 1.0
            && self.noise_sigma == 0.0
            && self.dropout == 0.0
            && self.backscatter == 0.0
    }
}

/// Corrupt a clear-day frame into `spec.domain`. Labels keep their exact
/// coordinates and classes but are flagged evaluation-only on every non-clear
/// output; entropy maps are recomputed on the corrupted rasters. The
/// clear-day spec returns the input unchanged.
pub fn apply_domain_shift(
    sample: &Sample,
    spec: &DomainSpec,
    d_max: f32,
    rng: &mut impl Rng,
) -> Result<Sample> {
    if sample.domain != Domain::ClearDay {
        return Err(Error::arg(
            "apply_domain_shift",
            format!("input must be clear_day, got {}", sample.domain),
        ));
    }
    if spec.domain == Domain::ClearDay {
        if !spec.is_identity() {
            return Err(Error::arg("apply_domain_shift", "clear_day spec must be identity"));
        }
        return Ok(sample.clone());
    }

    let mut out = sample.clone();
    for v in out.rgb.data_mut() {
        let mut y = ((*v - 0.5) * spec.contrast + 0.5) * spec.brightness;
        if spec.noise_sigma > 0.0 {
            y += rng.sample::<f32, _>(rand_distr::StandardNormal) * spec.noise_sigma;
        }
        *v = y.clamp(0.0, 1.0);
    }
    // persisted RGB is 8-bit; quantize now so the corrupted frame round-trips
    // through disk bit-exactly
    out.rgb.quantize_8bit();

    if spec.dropout > 0.0 {
        dropout_with_rate(&mut out.depth, &mut out.valid_mask, spec.dropout, rng);
    }
    if spec.backscatter > 0.0 {
        backscatter(
            &mut out.depth,
            &mut out.valid_mask,
            spec.backscatter,
            spec.backscatter_depth_frac,
            d_max,
            rng,
        );
    }

    out.domain = spec.domain;
    out.labels_eval_only = true;
    out.refresh_entropy(d_max)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_scene, SceneSpec};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clear_sample(seed: u64) -> (Sample, SceneSpec) {
        let spec = SceneSpec::desk_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (generate_scene(&mut rng, &spec).unwrap(), spec)
    }

    #[test]
    fn clear_day_spec_is_the_exact_identity() {
        let (s, scene) = clear_sample(1);
        let spec = DomainSpec::for_domain(Domain::ClearDay);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = apply_domain_shift(&s, &spec, scene.d_max, &mut rng).unwrap();
        assert_eq!(s, out);
        assert!(!out.labels_eval_only);
    }

    #[test]
    fn unknown_tags_are_rejected() {
        assert!(DomainSpec::from_tag("heavy_rain").is_err());
        assert!(DomainSpec::from_tag("night").is_ok());
    }

    #[test]
    fn shifted_input_is_rejected() {
        let (s, scene) = clear_sample(3);
        let fog = DomainSpec::for_domain(Domain::DenseFog);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let night = apply_domain_shift(&s, &fog, scene.d_max, &mut rng).unwrap();
        assert!(apply_domain_shift(&night, &fog, scene.d_max, &mut rng).is_err());
    }

    #[test]
    fn labels_survive_every_shift_untouched() {
        let (s, scene) = clear_sample(5);
        for domain in Domain::TARGETS {
            let spec = DomainSpec::for_domain(domain);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let out = apply_domain_shift(&s, &spec, scene.d_max, &mut rng).unwrap();
            assert_eq!(s.labels, out.labels, "{domain}");
            assert!(out.labels_eval_only);
            assert_eq!(out.domain, domain);
            out.validate(scene.d_max).unwrap();
        }
    }

    #[test]
    fn shifts_are_deterministic_given_the_seed() {
        let (s, scene) = clear_sample(7);
        let spec = DomainSpec::for_domain(Domain::Snow);
        let a = apply_domain_shift(&s, &spec, scene.d_max, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let b = apply_domain_shift(&s, &spec, scene.d_max, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        assert_eq!(a, b);
    }
}

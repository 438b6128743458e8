//! Procedural multimodal driving-scene data: RGB + sparse lidar depth frames
//! with box labels, weather-style domain corruptions, on-disk persistence,
//! and the samplers that feed training.
//!
//! A scene is a ground plane seen from a fixed camera with up to a handful of
//! non-occluding textured shapes standing on it — rectangles, ellipses, and
//! triangles playing the roles of cars, pedestrians, and ridable vehicles.
//! Depth comes from a synthetic point cloud (lidar-like rings on the ground,
//! denser returns on object surfaces) projected through a pinhole camera, so
//! it is sparse and row-banded like real projected lidar.

mod dataset;
mod project;
mod sampler;
mod scene;
mod shift;

pub use dataset::{
    load_index, load_sample, sample_dir, write_dataset, write_sample, DatasetIndex, DomainCounts,
    GenerateSpec, Split,
};
pub use project::{back_project, project_pointcloud, project_uv, Intrinsics};
pub use sampler::{ProportionalSampler, UniformDomainSampler};
pub use scene::{generate_scene, SceneSpec};
pub use shift::{apply_domain_shift, DomainSpec};

use crate::entropy;
use crate::error::{Error, Result};
use crate::raster::{BoolRaster, Raster, RgbRaster};

/// The weather/lighting conditions a frame can come from. `ClearDay` is the
/// labeled source domain; the other four are adaptation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    ClearDay,
    LightFog,
    DenseFog,
    Snow,
    Night,
}

impl Domain {
    pub const ALL: [Domain; 5] =
        [Domain::ClearDay, Domain::LightFog, Domain::DenseFog, Domain::Snow, Domain::Night];
    /// The four adaptation targets, in canonical order.
    pub const TARGETS: [Domain; 4] =
        [Domain::LightFog, Domain::DenseFog, Domain::Snow, Domain::Night];

    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::ClearDay => "clear_day",
            Domain::LightFog => "light_fog",
            Domain::DenseFog => "dense_fog",
            Domain::Snow => "snow",
            Domain::Night => "night",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::arg("domain", format!("unknown domain tag `{s}`")))
    }
}

/// One labeled object: class index and `[x1, y1, x2, y2]` pixel box.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Annotation {
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
}

/// Number of object classes (rectangle, ellipse, triangle).
pub const NUM_CLASSES: usize = 3;

/// One multimodal frame with its entropy maps and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: RgbRaster,
    /// Sparse depth in meters; 0 wherever `valid_mask` is false.
    pub depth: Raster,
    pub valid_mask: BoolRaster,
    pub e_rgb: Raster,
    pub e_depth: Raster,
    pub e_max: Raster,
    pub labels: Vec<Annotation>,
    /// True on domain-shifted frames: the labels exist for evaluation but the
    /// adaptation trainer must not read them (oracle mode excepted).
    pub labels_eval_only: bool,
    pub domain: Domain,
}

impl Sample {
    /// Recompute all three entropy maps from the current rasters. Call after
    /// any change to RGB, depth, or the validity mask.
    pub fn refresh_entropy(&mut self, d_max: f32) -> Result<()> {
        self.e_rgb = entropy::rgb_entropy(&self.rgb)?;
        self.e_depth = entropy::depth_entropy(&self.depth, &self.valid_mask, d_max)?;
        self.e_max = entropy::max_fusion(&self.e_rgb, &self.e_depth)?;
        Ok(())
    }

    /// Check the cross-field invariants; used by tests and by dataset loading.
    pub fn validate(&self, d_max: f32) -> Result<()> {
        let (h, w) = (self.depth.h(), self.depth.w());
        if (self.rgb.h(), self.rgb.w()) != (h, w) || (self.valid_mask.h(), self.valid_mask.w()) != (h, w) {
            return Err(Error::shape("sample", "raster dims disagree".to_string()));
        }
        for e in [&self.e_rgb, &self.e_depth, &self.e_max] {
            if (e.h(), e.w()) != (h, w) {
                return Err(Error::shape("sample", "entropy map dims disagree".to_string()));
            }
        }
        for (i, (&d, &m)) in self.depth.data().iter().zip(self.valid_mask.data()).enumerate() {
            if !m && d != 0.0 {
                return Err(Error::arg("sample", format!("pixel {i} invalid but depth {d} ≠ 0")));
            }
            if !(0.0..=d_max).contains(&d) {
                return Err(Error::arg("sample", format!("pixel {i} depth {d} outside [0, {d_max}]")));
            }
        }
        for a in &self.labels {
            let [x1, y1, x2, y2] = a.bbox;
            if !(0.0 <= x1 && x1 < x2 && x2 <= w as f32 && 0.0 <= y1 && y1 < y2 && y2 <= h as f32) {
                return Err(Error::arg("sample", format!("box {:?} malformed for {w}×{h}", a.bbox)));
            }
            if a.class_id >= NUM_CLASSES {
                return Err(Error::arg("sample", format!("class {} out of range", a.class_id)));
            }
        }
        Ok(())
    }
}

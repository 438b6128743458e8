//! The two-branch entropy-fusion detector.
//!
//! An RGB stream and a depth stream run through four stride-2 conv stages
//! each. After every stage an [`EntropyFusionModule`] merges the two streams
//! under the entropy gate, and the merged map is what *both* streams consume
//! next, so the branches re-diverge only through their separate weights. Three
//! detection heads tap the last two merged maps — P3 at stride 8 from stage 3,
//! P4 and P5 at strides 16/32 from stage 4 — each with its own short
//! two-branch block and a seventh fusion site, then a 1×1 conv emitting the
//! raw grid `[N, 5+classes, H/stride, W/stride]`.
//!
//! The post-head-fusion maps `f¹..f³` are returned alongside the grids; they
//! are the features the adaptation losses align. All three are narrowed to a
//! common width so the per-scale discriminators see same-sized inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{Sample, NUM_CLASSES};
use crate::tensor::{Scalar, Tensor};

use super::blocks::{Conv2dSpec, ConvBlock};
use super::decode::RawGrid;
use super::fusion::EntropyFusionModule;
use super::params::{Fwd, ParamStore};

/// Detection scales P3/P4/P5: output grid cells cover this many input pixels.
pub const STRIDES: [usize; 3] = [8, 16, 32];

/// Per-cell channels before the class scores: tx, ty, tw, th, objectness.
pub const BOX_CHANNELS: usize = 5;

/// Which entropy map drives the fusion gates (and the entropy weighting of
/// the alignment losses). Switching the source never changes the parameter
/// set — the gate conv always sees one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySource {
    /// Pointwise max of the RGB and depth entropy maps.
    MaxFusion,
    /// RGB-branch entropy only.
    RgbOnly,
    /// Depth-branch entropy only.
    DepthOnly,
}

/// Which feature map the detection convs read. `Fused` is the intended
/// design; the branch variants reproduce the single-stream routings that the
/// fused design is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    Fused,
    RgbBranch,
    DepthBranch,
}

/// Static description of the detector: widths, anchors, routing switches,
/// and decode thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionDetectorConfig {
    /// Channel widths of the four backbone stages.
    pub widths: [usize; 4],
    /// Common width of the three head feature maps f¹..f³.
    pub head_width: usize,
    pub num_classes: usize,
    /// One (w, h) box prior per scale, pixels, ordered P3/P4/P5.
    pub anchors: [[f32; 2]; 3],
    pub entropy_source: EntropySource,
    pub head_input: HeadInput,
    /// Decode-time confidence floor.
    pub conf_threshold: f32,
    /// Greedy per-class NMS overlap threshold.
    pub nms_iou: f32,
}

impl Default for FusionDetectorConfig {
    fn default() -> Self {
        FusionDetectorConfig {
            widths: [16, 32, 64, 128],
            head_width: 64,
            num_classes: NUM_CLASSES,
            // Rough priors for the synthetic object-size distribution; real
            // runs replace them with k-means estimates from the source train
            // split (see `estimate_anchors`).
            anchors: [[8.0, 10.0], [18.0, 16.0], [40.0, 26.0]],
            entropy_source: EntropySource::MaxFusion,
            head_input: HeadInput::Fused,
            conf_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

impl FusionDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::config("detector.widths", "stage widths must be nonzero"));
        }
        if self.head_width == 0 {
            return Err(Error::config("detector.head_width", "head width must be nonzero"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("detector.num_classes", "need at least one class"));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if a.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(Error::config("detector.anchors", format!("anchor {i} = {a:?} must be positive and finite")));
            }
        }
        for (field, v) in [("detector.conf_threshold", self.conf_threshold), ("detector.nms_iou", self.nms_iou)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::config(field, format!("{v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Channels of each raw detection grid.
    pub fn grid_channels(&self) -> usize {
        BOX_CHANNELS + self.num_classes
    }
}

/// Wiring of the full detector. Construction validates the config; weights
/// are created separately by [`FusionDetector::init_params`] so one wiring
/// can serve stores of either element type.
#[derive(Debug, Clone)]
pub struct FusionDetector {
    config: FusionDetectorConfig,
    stage_rgb: Vec<ConvBlock>,
    stage_depth: Vec<ConvBlock>,
    stage_fuse: Vec<EntropyFusionModule>,
    head_rgb: Vec<ConvBlock>,
    head_depth: Vec<ConvBlock>,
    head_fuse: Vec<EntropyFusionModule>,
    detect: Vec<Conv2dSpec>,
}

/// Raw grids and fused head features of one forward pass.
pub struct ForwardOutput<S: Scalar> {
    /// `[N, 5+classes, H/8, W/8]`, `[…/16…]`, `[…/32…]`.
    pub grids: [Tensor<S>; 3],
    /// Post-fusion head features f¹..f³ at the same three scales.
    pub fused: [Tensor<S>; 3],
}

impl<S: Scalar> ForwardOutput<S> {
    /// Copy one sample's three raw grids out as plain float planes for
    /// decoding.
    pub fn sample_grids(&self, n: usize) -> Result<[RawGrid; 3]> {
        let mut out = Vec::with_capacity(3);
        for g in &self.grids {
            let (batch, c, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]);
            if n >= batch {
                return Err(Error::arg("sample_grids", format!("sample {n} out of batch {batch}")));
            }
            let plane = c * h * w;
            let data = g.data()[n * plane..(n + 1) * plane].iter().map(|v| v.to_f32c()).collect();
            out.push(RawGrid { channels: c, h, w, data });
        }
        out.try_into().map_err(|_| Error::arg("sample_grids", "scale count"))
    }
}

impl FusionDetector {
    pub fn new(config: FusionDetectorConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let hw = config.head_width;
        let mut stage_rgb = Vec::new();
        let mut stage_depth = Vec::new();
        let mut stage_fuse = Vec::new();
        let mut c_in = (3, 2); // RGB channels; depth + validity channels
        for (i, &width) in w.iter().enumerate() {
            stage_rgb.push(ConvBlock::new(format!("det.s{i}.rgb"), c_in.0, width, 3, 2, 1));
            stage_depth.push(ConvBlock::new(format!("det.s{i}.depth"), c_in.1, width, 3, 2, 1));
            stage_fuse.push(EntropyFusionModule::new(&format!("det.s{i}.fuse"), width));
            c_in = (width, width);
        }
        // P3 taps the stride-8 merged map, P4 and P5 the stride-16 one (P5
        // through a stride-2 block). All heads narrow to the shared width.
        let taps = [(w[2], 1), (w[3], 1), (w[3], 2)];
        let mut head_rgb = Vec::new();
        let mut head_depth = Vec::new();
        let mut head_fuse = Vec::new();
        let mut detect = Vec::new();
        for (k, &(tap_c, stride)) in taps.iter().enumerate() {
            head_rgb.push(ConvBlock::new(format!("det.h{k}.rgb"), tap_c, hw, 3, stride, 1));
            head_depth.push(ConvBlock::new(format!("det.h{k}.depth"), tap_c, hw, 3, stride, 1));
            head_fuse.push(EntropyFusionModule::new(&format!("det.h{k}.fuse"), hw));
            detect.push(Conv2dSpec::new(format!("det.h{k}.out"), hw, config.grid_channels(), 1, 1, 0, true));
        }
        Ok(FusionDetector { config, stage_rgb, stage_depth, stage_fuse, head_rgb, head_depth, head_fuse, detect })
    }

    pub fn config(&self) -> &FusionDetectorConfig {
        &self.config
    }

    /// Create and register every weight tensor.
    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        for i in 0..self.stage_rgb.len() {
            self.stage_rgb[i].init(store, rng)?;
            self.stage_depth[i].init(store, rng)?;
            self.stage_fuse[i].init(store, rng)?;
        }
        for k in 0..3 {
            self.head_rgb[k].init(store, rng)?;
            self.head_depth[k].init(store, rng)?;
            self.head_fuse[k].init(store, rng)?;
            self.detect[k].init(store, rng)?;
        }
        Ok(())
    }

    /// Run the network. `rgb` is `[N,3,H,W]`, `depth` `[N,2,H,W]` (normalized
    /// depth + validity plane), `entropy` `[N,1,H,W]` at full resolution —
    /// it is average-pooled down to each fusion site internally. H and W must
    /// be divisible by 32.
    pub fn forward<S: Scalar>(
        &self,
        fwd: &Fwd<'_, S>,
        rgb: &Tensor<S>,
        depth: &Tensor<S>,
        entropy: &Tensor<S>,
    ) -> Result<ForwardOutput<S>> {
        let (n, h, w) = self.check_inputs(rgb, depth, entropy)?;
        let _ = (n, h, w);

        // Entropy pyramid: one average-pooling halving per level, so each
        // fusion site reads the map at its own resolution.
        let mut e_levels = Vec::with_capacity(6);
        e_levels.push(entropy.clone());
        for _ in 0..5 {
            e_levels.push(avg_halve(fwd, e_levels.last().unwrap())?);
        }

        let mut r = rgb.clone();
        let mut d = depth.clone();
        let mut stage_out = Vec::with_capacity(4);
        for i in 0..self.stage_rgb.len() {
            let ri = self.stage_rgb[i].forward(fwd, &r)?;
            let di = self.stage_depth[i].forward(fwd, &d)?;
            let out = self.stage_fuse[i].forward(fwd, &ri, &di, &e_levels[i + 1])?;
            r = out.fused.clone();
            d = out.fused.clone();
            stage_out.push(out.fused);
        }

        let taps = [&stage_out[2], &stage_out[3], &stage_out[3]];
        let mut grids = Vec::with_capacity(3);
        let mut fused = Vec::with_capacity(3);
        for k in 0..3 {
            let hr = self.head_rgb[k].forward(fwd, taps[k])?;
            let hd = self.head_depth[k].forward(fwd, taps[k])?;
            let e_k = &e_levels[STRIDES[k].trailing_zeros() as usize];
            let out = self.head_fuse[k].forward(fwd, &hr, &hd, e_k)?;
            let head_in = match self.config.head_input {
                HeadInput::Fused => &out.fused,
                HeadInput::RgbBranch => &hr,
                HeadInput::DepthBranch => &hd,
            };
            grids.push(self.detect[k].forward(fwd, head_in)?);
            fused.push(out.fused);
        }
        Ok(ForwardOutput {
            grids: grids.try_into().map_err(|_| Error::arg("forward", "scale count"))?,
            fused: fused.try_into().map_err(|_| Error::arg("forward", "scale count"))?,
        })
    }

    fn check_inputs<S: Scalar>(
        &self,
        rgb: &Tensor<S>,
        depth: &Tensor<S>,
        entropy: &Tensor<S>,
    ) -> Result<(usize, usize, usize)> {
        for (what, t, c) in [("rgb", rgb, 3), ("depth", depth, 2), ("entropy", entropy, 1)] {
            if t.rank() != 4 || t.shape()[1] != c {
                return Err(Error::shape("detector", format!("{what} must be [N,{c},H,W], got {:?}", t.shape())));
            }
            if t.shape()[0] != rgb.shape()[0] || t.shape()[2..] != rgb.shape()[2..] {
                return Err(Error::shape(
                    "detector",
                    format!("{what} batch/spatial dims {:?} disagree with rgb {:?}", t.shape(), rgb.shape()),
                ));
            }
        }
        let (n, h, w) = (rgb.shape()[0], rgb.shape()[2], rgb.shape()[3]);
        if n == 0 {
            return Err(Error::shape("detector", "empty batch".to_string()));
        }
        if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::shape("detector", format!("frame {h}×{w} must be divisible by 32")));
        }
        Ok((n, h, w))
    }
}

/// Average-pool a one-channel map down by 2× (a constant 2×2 mean kernel).
pub(crate) fn avg_halve<S: Scalar>(fwd: &Fwd<'_, S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let kernel = Tensor::full(&[1, 1, 2, 2], 0.25);
    fwd.tape.conv2d(x, &kernel, None, 2, 0)
}

/// Pick the configured entropy map from a sample.
pub fn entropy_plane(sample: &Sample, source: EntropySource) -> &crate::raster::Raster {
    match source {
        EntropySource::MaxFusion => &sample.e_max,
        EntropySource::RgbOnly => &sample.e_rgb,
        EntropySource::DepthOnly => &sample.e_depth,
    }
}

/// Pack samples into the three input tensors: RGB planes as-is, depth
/// normalized by `d_max` alongside its validity plane, and the configured
/// entropy map.
pub fn batch_inputs<S: Scalar>(
    samples: &[&Sample],
    d_max: f32,
    source: EntropySource,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    if samples.is_empty() {
        return Err(Error::arg("batch_inputs", "empty batch"));
    }
    if d_max <= 0.0 {
        return Err(Error::arg("batch_inputs", format!("d_max must be > 0, got {d_max}")));
    }
    let (h, w) = (samples[0].depth.h(), samples[0].depth.w());
    let n = samples.len();
    let mut rgb = Vec::with_capacity(n * 3 * h * w);
    let mut depth = Vec::with_capacity(n * 2 * h * w);
    let mut ent = Vec::with_capacity(n * h * w);
    for (i, s) in samples.iter().enumerate() {
        if (s.depth.h(), s.depth.w()) != (h, w) {
            return Err(Error::shape("batch_inputs", format!("sample {i} is {}×{}, batch is {h}×{w}", s.depth.h(), s.depth.w())));
        }
        rgb.extend(s.rgb.data().iter().map(|&v| S::from_f32c(v)));
        depth.extend(s.depth.data().iter().map(|&v| S::from_f32c(v / d_max)));
        depth.extend(s.valid_mask.data().iter().map(|&m| if m { S::one() } else { S::zero() }));
        ent.extend(entropy_plane(s, source).data().iter().map(|&v| S::from_f32c(v)));
    }
    Ok((
        Tensor::from_vec(&[n, 3, h, w], rgb)?,
        Tensor::from_vec(&[n, 2, h, w], depth)?,
        Tensor::from_vec(&[n, 1, h, w], ent)?,
    ))
}

//! Two-branch RGB + depth object detector with entropy-gated fusion.
//!
//! The pieces, bottom up:
//!
//! - [`params`]: a name-keyed store owning every weight tensor and running
//!   buffer, plus the `Fwd` context bundling tape, store, and train/eval mode.
//! - [`blocks`]: conv / batch-norm / ReLU building blocks (crate-private).
//! - [`fusion`]: the entropy-gated fusion module merging the two branches.
//! - [`network`]: the full detector — four fused backbone stages, three
//!   detection heads at strides 8/16/32, raw grid outputs plus the fused
//!   head features the adaptation losses consume.
//! - [`decode`]: grid → boxes, confidence filtering, per-class NMS.
//! - [`anchors`]: deterministic k-means fit of the three box priors.
//! - [`checkpoint`]: manifest + per-tensor files, name-driven restore.

mod anchors;
mod blocks;
mod checkpoint;
mod decode;
mod fusion;
mod network;
mod params;

pub(crate) use blocks::Conv2dSpec;
pub(crate) use network::avg_halve;

pub use anchors::estimate_anchors;
pub use checkpoint::{load_into, read_manifest, save_checkpoint, CheckpointManifest};
pub use decode::{box_iou, decode, nms, Detection, RawGrid};
pub use network::{
    batch_inputs, entropy_plane, EntropySource, ForwardOutput, FusionDetector, FusionDetectorConfig, HeadInput,
    BOX_CHANNELS, STRIDES,
};
pub use params::{Fwd, ParamStore};

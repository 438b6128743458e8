//! Entropy-gated fusion of the RGB and depth feature streams.
//!
//! At each fusion site the local-entropy map (downscaled to the feature
//! resolution) passes through a trainable 1×1 conv and a sigmoid, producing a
//! per-pixel gate in (0,1). Both branch features are multiplied by the gate,
//! concatenated along channels, and reduced back to the per-branch width by a
//! 1×1 conv + batchnorm + ReLU. High-entropy pixels — edges, texture, sparse
//! depth discontinuities — therefore pass amplified features into the merge,
//! while flat regions are attenuated.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::blocks::{Conv2dSpec, ConvBlock};
use super::params::{Fwd, ParamStore};

/// One fusion site: gate conv over the entropy map plus the channel-reducing
/// merge block. `channels` is the per-branch feature width; the merge sees
/// `2·channels` and emits `channels` again, so fusion is width-preserving.
#[derive(Debug, Clone)]
pub(crate) struct EntropyFusionModule {
    channels: usize,
    gate: Conv2dSpec,
    reduce: ConvBlock,
}

/// Fusion forward results. The gated branch features are exposed separately
/// from the merged map because the gating invariants (monotonicity in the
/// entropy input) are stated on the pre-merge tensors.
pub(crate) struct FusionOut<S: Scalar> {
    // Only the tests read the pre-merge tensors; production consumers take
    // `fused`.
    #[allow(dead_code)]
    pub gated_rgb: Tensor<S>,
    #[allow(dead_code)]
    pub gated_depth: Tensor<S>,
    pub fused: Tensor<S>,
}

impl EntropyFusionModule {
    pub fn new(name: &str, channels: usize) -> Self {
        EntropyFusionModule {
            channels,
            gate: Conv2dSpec::new(format!("{name}.gate"), 1, 1, 1, 1, 0, true),
            reduce: ConvBlock::new(format!("{name}.reduce"), 2 * channels, channels, 1, 1, 0),
        }
    }

    /// Register parameters. The gate conv starts at weight 1, bias 0 — the
    /// gate is initially `sigmoid(entropy)`, an increasing function of the
    /// entropy map — and learns to re-scale from there. The merge block uses
    /// the standard He init.
    pub fn init<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        store.insert_param(&format!("{}.w", self.gate.name), Tensor::full(&[1, 1, 1, 1], 1.0))?;
        store.insert_param(&format!("{}.b", self.gate.name), Tensor::zeros(&[1]))?;
        self.reduce.init(store, rng)
    }

    /// Gate both branches by the entropy map and merge them. `rgb` and
    /// `depth` must be `[N, channels, h, w]`, `entropy` `[N, 1, h, w]` at the
    /// same resolution.
    pub fn forward<S: Scalar>(
        &self,
        fwd: &Fwd<'_, S>,
        rgb: &Tensor<S>,
        depth: &Tensor<S>,
        entropy: &Tensor<S>,
    ) -> Result<FusionOut<S>> {
        for (what, t) in [("rgb", rgb), ("depth", depth)] {
            if t.rank() != 4 || t.shape()[1] != self.channels {
                return Err(Error::shape(
                    "entropy_fusion",
                    format!("{what} features must be [N,{},h,w], got {:?}", self.channels, t.shape()),
                ));
            }
        }
        if entropy.rank() != 4
            || entropy.shape()[1] != 1
            || entropy.shape()[2..] != rgb.shape()[2..]
            || entropy.shape()[0] != rgb.shape()[0]
        {
            return Err(Error::shape(
                "entropy_fusion",
                format!("entropy must be [N,1,h,w] matching features, got {:?}", entropy.shape()),
            ));
        }
        let gate = fwd.tape.sigmoid(&self.gate.forward(fwd, entropy)?)?;
        let gated_rgb = fwd.tape.mul(rgb, &gate)?;
        let gated_depth = fwd.tape.mul(depth, &gate)?;
        let cat = fwd.tape.concat_c(&[&gated_rgb, &gated_depth])?;
        let fused = self.reduce.forward(fwd, &cat)?;
        Ok(FusionOut { gated_rgb, gated_depth, fused })
    }
}

//! Per-scale domain discriminators and the entropy weighting applied to
//! their inputs.
//!
//! One discriminator sits at each detection scale and scores feature maps as
//! source or target. The least-squares objectives in [`super::adversarial`]
//! want a real-valued map, so there is no output squashing. There is also no
//! normalization anywhere: source and target minibatches pass through
//! separately, and per-batch statistics would hand the domain away for free.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{avg_halve, Conv2dSpec, Fwd, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of strided conv layers, and the length of the activation list that
/// feature matching consumes.
pub const DISC_LAYERS: usize = 3;

/// Negative-side slope of the discriminator activations.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Shape of one scale's discriminator. The same config is reused for all
/// three scales because the detection heads share one output width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Channels of the feature maps being scored (the detector's head width).
    pub in_channels: usize,
    /// Output channels of the three stride-2 conv layers.
    pub widths: [usize; DISC_LAYERS],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { in_channels: 64, widths: [32, 64, 64] }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::config("discriminator.in_channels", "must be positive"));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("discriminator.widths", "must all be positive"));
        }
        Ok(())
    }
}

/// One scale's domain discriminator: three stride-2 3×3 convs with
/// leaky-ReLU activations, then a 1×1 linear head producing the score map.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    convs: [Conv2dSpec; DISC_LAYERS],
    head: Conv2dSpec,
}

impl Discriminator {
    /// `scale` indexes the detection scale this discriminator sits at; it
    /// only namespaces the parameters (`disc.k{scale}.*`).
    pub fn new(scale: usize, config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let p = format!("disc.k{scale}");
        let w = config.widths;
        let convs = [
            Conv2dSpec::new(format!("{p}.c0"), config.in_channels, w[0], 3, 2, 1, true),
            Conv2dSpec::new(format!("{p}.c1"), w[0], w[1], 3, 2, 1, true),
            Conv2dSpec::new(format!("{p}.c2"), w[1], w[2], 3, 2, 1, true),
        ];
        let head = Conv2dSpec::new(format!("{p}.out"), w[2], 1, 1, 1, 0, true);
        Ok(Discriminator { config, convs, head })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Register this discriminator's parameters.
    pub fn init_params<S: Scalar>(&self, store: &mut ParamStore<S>, rng: &mut impl Rng) -> Result<()> {
        for conv in &self.convs {
            conv.init(store, rng)?;
        }
        self.head.init(store, rng)
    }

    /// Score a batch of feature maps `[N, in_channels, h, w]`. Returns the
    /// score map and the per-layer activations feature matching compares.
    pub fn forward<S: Scalar>(&self, fwd: &Fwd<'_, S>, features: &Tensor<S>) -> Result<DiscriminatorOutput<S>> {
        if features.rank() != 4 || features.shape()[1] != self.config.in_channels {
            return Err(Error::shape(
                "discriminator",
                format!("expected [N, {}, h, w] features, got {:?}", self.config.in_channels, features.shape()),
            ));
        }
        let mut x = features.clone();
        let mut layers = Vec::with_capacity(DISC_LAYERS);
        for conv in &self.convs {
            x = fwd.tape.leaky_relu(&conv.forward(fwd, &x)?, LEAKY_SLOPE)?;
            layers.push(x.clone());
        }
        let score = self.head.forward(fwd, &x)?;
        Ok(DiscriminatorOutput { score, layers })
    }
}

/// What one discriminator pass produces.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput<S: Scalar> {
    /// Real-valued domain score map `[N, 1, h', w']`.
    pub score: Tensor<S>,
    /// Post-activation output of each strided layer, length [`DISC_LAYERS`].
    pub layers: Vec<Tensor<S>>,
}

/// The score maps of a set of per-scale outputs, in the form the adversarial
/// losses take.
pub fn score_maps<S: Scalar>(outputs: &[DiscriminatorOutput<S>]) -> Vec<Tensor<S>> {
    outputs.iter().map(|o| o.score.clone()).collect()
}

/// The layer activations of a set of per-scale outputs, in the form
/// feature matching takes.
pub fn layer_activations<S: Scalar>(outputs: &[DiscriminatorOutput<S>]) -> Vec<Vec<Tensor<S>>> {
    outputs.iter().map(|o| o.layers.clone()).collect()
}

/// Downscale a full-resolution entropy map `[N, 1, H, W]` to the three
/// detection strides — the same repeated 2×2 average pooling the detector's
/// fusion gates consume, so the weighting and the gating see one pyramid.
pub fn entropy_at_strides<S: Scalar>(fwd: &Fwd<'_, S>, entropy: &Tensor<S>) -> Result<[Tensor<S>; 3]> {
    if entropy.rank() != 4 || entropy.shape()[1] != 1 {
        return Err(Error::shape("entropy_at_strides", format!("expected [N, 1, H, W], got {:?}", entropy.shape())));
    }
    let (h, w) = (entropy.shape()[2], entropy.shape()[3]);
    if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
        return Err(Error::shape("entropy_at_strides", format!("map {h}×{w} must be divisible by 32")));
    }
    let mut e = entropy.clone();
    for _ in 0..3 {
        e = avg_halve(fwd, &e)?;
    }
    let e8 = e;
    let e16 = avg_halve(fwd, &e8)?;
    let e32 = avg_halve(fwd, &e16)?;
    Ok([e8, e16, e32])
}

/// Weight per-scale feature maps by the matching downscaled entropy map
/// (broadcast over channels): the discriminators' input. The entropy tensor
/// is full resolution; `features` come in stride 8/16/32 order.
pub fn weight_features<S: Scalar>(
    fwd: &Fwd<'_, S>,
    features: &[Tensor<S>; 3],
    entropy: &Tensor<S>,
) -> Result<[Tensor<S>; 3]> {
    let e = entropy_at_strides(fwd, entropy)?;
    Ok([
        fwd.tape.mul(&features[0], &e[0])?,
        fwd.tape.mul(&features[1], &e[1])?,
        fwd.tape.mul(&features[2], &e[2])?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Discriminator, ParamStore<f32>) {
        let disc = Discriminator::new(0, DiscriminatorConfig::default()).unwrap();
        let mut store = ParamStore::new();
        disc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        (disc, store)
    }

    #[test]
    fn forward_shapes_halve_per_layer_and_score_is_one_channel() {
        let (disc, store) = fixture();
        let tape = Tape::inference();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        let x = Tensor::randn(&[2, 64, 12, 12], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let out = disc.forward(&fwd, &x).unwrap();
        assert_eq!(out.layers.len(), DISC_LAYERS);
        assert_eq!(out.layers[0].shape(), [2, 32, 6, 6]);
        assert_eq!(out.layers[1].shape(), [2, 64, 3, 3]);
        assert_eq!(out.layers[2].shape(), [2, 64, 2, 2]);
        assert_eq!(out.score.shape(), [2, 1, 2, 2]);
        // A real-valued score map should go negative somewhere on random
        // input; a stray squashing layer would keep it positive.
        assert!(out.score.data().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn has_no_normalization_parameters() {
        let (_, store) = fixture();
        for (name, _) in store.params() {
            assert!(!name.contains(".bn."), "unexpected norm parameter {name}");
        }
        assert_eq!(store.buffers().count(), 0);
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let (disc, store) = fixture();
        let tape = Tape::inference();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        let x = Tensor::<f32>::zeros(&[2, 3, 12, 12]);
        assert!(disc.forward(&fwd, &x).is_err());
    }

    #[test]
    fn entropy_pyramid_averages_down_to_each_stride() {
        let tape = Tape::inference();
        let store = ParamStore::<f32>::new();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        let e = Tensor::full(&[1, 1, 96, 64], 0.7);
        let levels = entropy_at_strides(&fwd, &e).unwrap();
        assert_eq!(levels[0].shape(), [1, 1, 12, 8]);
        assert_eq!(levels[1].shape(), [1, 1, 6, 4]);
        assert_eq!(levels[2].shape(), [1, 1, 3, 2]);
        for level in &levels {
            for &v in level.data().iter() {
                assert!((v - 0.7).abs() < 1e-6, "averaging a constant map must preserve it, got {v}");
            }
        }
    }

    #[test]
    fn weighting_multiplies_each_channel_by_the_downscaled_entropy() {
        let tape = Tape::inference();
        let store = ParamStore::<f32>::new();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        // 32×32 map: strides land at 4×4, 2×2, 1×1.
        let mut e_data = vec![0.0f32; 32 * 32];
        for (i, v) in e_data.iter_mut().enumerate() {
            *v = (i % 7) as f32 / 7.0;
        }
        let e = Tensor::from_f32s(&[1, 1, 32, 32], &e_data).unwrap();
        let feats = [
            Tensor::full(&[1, 2, 4, 4], 2.0),
            Tensor::full(&[1, 2, 2, 2], 2.0),
            Tensor::full(&[1, 2, 1, 1], 2.0),
        ];
        let weighted = weight_features(&fwd, &feats, &e).unwrap();
        let levels = entropy_at_strides(&fwd, &e).unwrap();
        for (w, l) in weighted.iter().zip(&levels) {
            let wd = w.to_f32_vec();
            let ld = l.to_f32_vec();
            // Both channels must carry feature · entropy at every pixel.
            for c in 0..2 {
                for (i, &lv) in ld.iter().enumerate() {
                    assert!((wd[c * ld.len() + i] - 2.0 * lv).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_entropy_shapes() {
        let tape = Tape::inference();
        let store = ParamStore::<f32>::new();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        assert!(entropy_at_strides(&fwd, &Tensor::<f32>::zeros(&[1, 2, 32, 32])).is_err());
        assert!(entropy_at_strides(&fwd, &Tensor::<f32>::zeros(&[1, 1, 30, 32])).is_err());
    }
}

//! Training objectives: the supervised detection loss, the least-squares
//! adversarial pair with its feature-matching regularizer, and the pretext
//! classification loss.
//!
//! Everything here is a pure graph construction on the caller's tape — no
//! loss owns parameters or steps an optimizer. The split of who trains on
//! what (which parameters are frozen for which term) is the trainer's
//! responsibility; the parameter-partition tests in this module demonstrate
//! the contract.

mod adversarial;
mod detection;
mod discriminator;
mod ssl;

pub use adversarial::{adv_discriminator_loss, adv_feature_loss, feature_matching_loss, SCALES};
pub use detection::{detection_loss, DetectionLoss, DetectionLossWeights};
pub use discriminator::{
    entropy_at_strides, layer_activations, score_maps, weight_features, Discriminator, DiscriminatorConfig,
    DiscriminatorOutput, DISC_LAYERS, LEAKY_SLOPE,
};
pub use ssl::{pretext_loss, PRETEXT_CLASSES};

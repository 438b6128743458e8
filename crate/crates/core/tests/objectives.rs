//! Optimization-level checks on the training objectives: the detection loss
//! must actually be minimizable through the detector it supervises.

use fogbridge_core::detector::{
    batch_inputs, EntropySource, Fwd, FusionDetector, FusionDetectorConfig, ParamStore, STRIDES,
};
use fogbridge_core::objectives::{detection_loss, DetectionLossWeights};
use fogbridge_core::synthdata::{generate_scene, SceneSpec};
use fogbridge_core::tensor::{zero_grads, Sgd, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A slimmed-down detector: full architecture, quarter widths, so 200
/// optimization steps stay cheap.
fn small_config() -> FusionDetectorConfig {
    FusionDetectorConfig { widths: [8, 16, 24, 32], head_width: 16, ..Default::default() }
}

#[test]
fn detection_loss_overfits_a_single_scene() {
    let spec = SceneSpec::desk_scale();
    let sample = generate_scene(&mut ChaCha8Rng::seed_from_u64(2024), &spec).unwrap();
    assert!(!sample.labels.is_empty(), "the scene must contain objects to learn");

    let config = small_config();
    let detector = FusionDetector::new(config.clone()).unwrap();
    let mut store = ParamStore::<f64>::new();
    detector.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();

    let (rgb, depth, entropy) =
        batch_inputs::<f64>(&[&sample], spec.d_max, EntropySource::MaxFusion).unwrap();
    let labels = [sample.labels.as_slice()];
    let params: Vec<Tensor<f64>> = store.params().map(|(_, t)| t.clone()).collect();
    // A single sample gives batch statistics no meaning, so the forward runs
    // with frozen normalization statistics; scale and shift still train.
    let mut sgd = Sgd::new(1.5e-3, 0.95);
    let weights = DetectionLossWeights::default();

    let mut history = Vec::with_capacity(201);
    for _ in 0..=200 {
        let tape = Tape::new();
        let fwd = Fwd { tape: &tape, store: &store, train: false };
        let out = detector.forward(&fwd, &rgb, &depth, &entropy).unwrap();
        let loss =
            detection_loss(&tape, &out.grids, &labels, &config.anchors, &STRIDES, &weights).unwrap();
        let value = loss.total.item().unwrap();
        assert!(value.is_finite(), "loss must stay finite, got {value}");
        history.push(value);
        tape.backward(&loss.total).unwrap();
        sgd.step(&params).unwrap();
        zero_grads(&params);
    }

    for (step, pair) in history.windows(2).enumerate() {
        assert!(
            pair[1] <= pair[0] * 1.000001,
            "loss rose at step {step}: {} -> {}",
            pair[0],
            pair[1]
        );
    }
    let (first, last) = (history[0], *history.last().unwrap());
    assert!(
        last < 0.1 * first,
        "200 steps must reach a tenth of the initial loss: started {first}, ended {last}"
    );
}

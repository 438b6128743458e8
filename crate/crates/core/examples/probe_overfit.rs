//! Scratch probe: sweep optimizer settings on the single-scene overfit to
//! pick one where the loss decreases monotonically to under 10%.

use fogbridge_core::detector::{
    batch_inputs, EntropySource, Fwd, FusionDetector, FusionDetectorConfig, ParamStore, STRIDES,
};
use fogbridge_core::objectives::{detection_loss, DetectionLossWeights};
use fogbridge_core::synthdata::{generate_scene, SceneSpec};
use fogbridge_core::tensor::{zero_grads, Adam, Sgd, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

enum Opt {
    SgdDecay { lr0: f64, tau: f64 },
    SgdMom { lr: f64, m: f64 },
    Adam { lr: f64 },
}

fn main() {
    let spec = SceneSpec::desk_scale();
    let sample = generate_scene(&mut ChaCha8Rng::seed_from_u64(2024), &spec).unwrap();
    println!("scene has {} objects", sample.labels.len());

    let runs = [
        ("sgd mom.9 3e-3   ", Opt::SgdMom { lr: 3e-3, m: 0.9 }),
        ("sgd mom.9 2.5e-3 ", Opt::SgdMom { lr: 2.5e-3, m: 0.9 }),
        ("sgd mom.92 2e-3  ", Opt::SgdMom { lr: 2e-3, m: 0.92 }),
        ("sgd mom.95 1.5e-3", Opt::SgdMom { lr: 1.5e-3, m: 0.95 }),
        ("sgd mom.95 1e-3  ", Opt::SgdMom { lr: 1e-3, m: 0.95 }),
    ];
    for (name, opt) in runs {
        let config = FusionDetectorConfig { widths: [8, 16, 24, 32], head_width: 16, ..Default::default() };
        let detector = FusionDetector::new(config.clone()).unwrap();
        let mut store = ParamStore::<f64>::new();
        detector.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let (rgb, depth, entropy) = batch_inputs::<f64>(&[&sample], spec.d_max, EntropySource::MaxFusion).unwrap();
        let labels = [sample.labels.as_slice()];
        let params: Vec<Tensor<f64>> = store.params().map(|(_, t)| t.clone()).collect();
        let weights = DetectionLossWeights::default();
        let mut adam = if let Opt::Adam { lr } = opt { Some(Adam::with_defaults(lr)) } else { None };
        let mut sgd_mom = if let Opt::SgdMom { lr, m } = opt { Some(Sgd::new(lr, m)) } else { None };

        let mut history = Vec::new();
        for t in 0..=200 {
            let tape = Tape::new();
            let fwd = Fwd { tape: &tape, store: &store, train: false };
            let out = detector.forward(&fwd, &rgb, &depth, &entropy).unwrap();
            let loss = detection_loss(&tape, &out.grids, &labels, &config.anchors, &STRIDES, &weights).unwrap();
            history.push(loss.total.item().unwrap());
            tape.backward(&loss.total).unwrap();
            match &opt {
                Opt::SgdDecay { lr0, tau } => {
                    Sgd::new(lr0 / (1.0 + t as f64 / tau), 0.0).step(&params).unwrap();
                }
                Opt::SgdMom { .. } => sgd_mom.as_mut().unwrap().step(&params).unwrap(),
                Opt::Adam { .. } => adam.as_mut().unwrap().step(&params).unwrap(),
            }
            zero_grads(&params);
        }
        let rise_steps: Vec<usize> =
            history.windows(2).enumerate().filter(|(_, p)| p[1] > p[0]).map(|(i, _)| i).collect();
        let worst = history.windows(2).map(|p| (p[1] - p[0]) / p[0]).fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{name}: initial {:>7.4} final {:>7.4} ratio {:.4} rises {} worst +{:.2e} first {:?}",
            history[0],
            history.last().unwrap(),
            history.last().unwrap() / history[0],
            rise_steps.len(),
            worst,
            &rise_steps[..rise_steps.len().min(8)]
        );
    }
}

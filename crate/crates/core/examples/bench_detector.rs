use fogbridge_core::detector::*;
use fogbridge_core::tensor::{Tape, Tensor, Sgd};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let det = FusionDetector::new(FusionDetectorConfig::default()).unwrap();
    let mut store = ParamStore::<f32>::new();
    det.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let total: usize = store.params().map(|(_, t)| t.numel()).sum();
    println!("{} param tensors, {} scalars", store.param_count(), total);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rgb = Tensor::<f32>::randn(&[10, 3, 96, 96], 0.5, &mut rng);
    let depth = Tensor::<f32>::randn(&[10, 2, 96, 96], 0.5, &mut rng);
    let ent = Tensor::<f32>::randn(&[10, 1, 96, 96], 0.3, &mut rng);

    let params: Vec<Tensor<f32>> = store.params().map(|(_, t)| t.clone()).collect();
    let mut opt = Sgd::new(0.001, 0.9);

    // Warm-up + timed loop.
    for pass in 0..2 {
        let iters = if pass == 0 { 2 } else { 10 };
        let t0 = Instant::now();
        for _ in 0..iters {
            let tape = Tape::new();
            let out = det.forward(&Fwd { tape: &tape, store: &store, train: true }, &rgb, &depth, &ent).unwrap();
            let mut loss = Tensor::scalar(0.0);
            for g in &out.grids {
                loss = tape.add(&loss, &tape.mean(g).unwrap()).unwrap();
            }
            tape.backward(&loss).unwrap();
            opt.step(&params).unwrap();
        }
        let dt = t0.elapsed().as_secs_f64() / iters as f64;
        if pass == 1 {
            println!("train step (fwd+bwd+sgd, batch 10 @ 96x96): {:.1} ms", dt * 1000.0);
        }
    }

    // Eval forward, batch 10.
    let t0 = Instant::now();
    for _ in 0..10 {
        let tape = Tape::inference();
        det.forward(&Fwd { tape: &tape, store: &store, train: false }, &rgb, &depth, &ent).unwrap();
    }
    println!("eval forward (batch 10 @ 96x96): {:.1} ms", t0.elapsed().as_secs_f64() * 100.0);
}

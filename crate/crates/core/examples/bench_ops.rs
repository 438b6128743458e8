use fogbridge_core::tensor::{Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn bench<F: FnMut()>(label: &str, mut f: F) {
    f();
    let t0 = Instant::now();
    let mut iters = 0u32;
    while t0.elapsed().as_secs_f64() < 0.4 {
        f();
        iters += 1;
    }
    println!("{label:34} {:8.2} ms", t0.elapsed().as_secs_f64() * 1e3 / iters as f64);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Stage shapes for batch 10 @ 96x96.
    let shapes: [(usize, usize, usize, usize, usize); 4] =
        [(3, 16, 96, 2, 1), (16, 32, 48, 2, 1), (32, 64, 24, 2, 1), (64, 128, 12, 2, 1)];
    for (ci, co, hin, stride, pad) in shapes {
        let x = Tensor::<f32>::randn(&[10, ci, hin, hin], 0.5, &mut rng).requiring_grad();
        let w = Tensor::<f32>::randn(&[co, ci, 3, 3], 0.1, &mut rng).requiring_grad();
        bench(&format!("conv {ci}->{co} @{hin} fwd+bwd"), || {
            let tape = Tape::new();
            let y = tape.conv2d(&x, &w, None, stride, pad).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
    }
    // Fusion-site shapes: reduce conv 1x1 2C->C plus gate mul.
    for (c, h) in [(16usize, 48usize), (32, 24), (64, 12), (128, 6)] {
        let x = Tensor::<f32>::randn(&[10, 2 * c, h, h], 0.5, &mut rng).requiring_grad();
        let w = Tensor::<f32>::randn(&[c, 2 * c, 1, 1], 0.1, &mut rng).requiring_grad();
        bench(&format!("reduce1x1 {}->{c} @{h} fwd+bwd", 2 * c), || {
            let tape = Tape::new();
            let y = tape.conv2d(&x, &w, None, 1, 0).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
    }
    for (c, h) in [(16usize, 48usize), (32, 24), (64, 12)] {
        let x = Tensor::<f32>::randn(&[10, c, h, h], 0.5, &mut rng).requiring_grad();
        let g = Tensor::<f32>::randn(&[c], 0.1, &mut rng).requiring_grad();
        let b = Tensor::<f32>::randn(&[c], 0.1, &mut rng).requiring_grad();
        bench(&format!("bn train c{c} @{h} fwd+bwd"), || {
            let tape = Tape::new();
            let y = tape.batch_norm_train(&x, &g, &b, 0.1, 1e-5, None).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
        bench(&format!("relu c{c} @{h} fwd+bwd"), || {
            let tape = Tape::new();
            let y = tape.relu(&x).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
        let gate = Tensor::<f32>::randn(&[10, 1, h, h], 0.5, &mut rng).requiring_grad();
        bench(&format!("bcast mul c{c} @{h} fwd+bwd"), || {
            let tape = Tape::new();
            let y = tape.mul(&x, &gate).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
        let x2 = Tensor::<f32>::randn(&[10, c, h, h], 0.5, &mut rng).requiring_grad();
        bench(&format!("concat_c c{c} @{h} fwd+bwd"), || {
            let tape = Tape::new();
            let y = tape.concat_c(&[&x, &x2]).unwrap();
            let l = tape.mean(&y).unwrap();
            tape.backward(&l).unwrap();
        });
    }
}

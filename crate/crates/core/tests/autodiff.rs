//! End-to-end checks of the tensor engine: hand-computed gradients, oracle
//! comparisons, and a finite-difference sweep across every differentiable op.

use fogbridge_core::tensor::{op_cases, Tape, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// forward-pass identities
// ---------------------------------------------------------------------------

#[test]
fn conv2d_identity_kernel_passes_input_through() {
    let tape: Tape<f32> = Tape::inference();
    let x = Tensor::from_f32s(&[1, 1, 1, 1], &[0.73]).unwrap();
    let w = Tensor::from_f32s(&[1, 1, 1, 1], &[1.0]).unwrap();
    let b = Tensor::from_f32s(&[1], &[0.0]).unwrap();
    let y = tape.conv2d(&x, &w, Some(&b), 1, 0).unwrap();
    assert_eq!(y.to_f32_vec(), vec![0.73]);
}

#[test]
fn conv2d_zero_kernel_gives_zero_output() {
    let tape: Tape<f32> = Tape::inference();
    let x = Tensor::<f32>::randn(&[2, 3, 7, 5], 1.0, &mut rng(42));
    let w = Tensor::from_f32s(&[4, 3, 3, 3], &[0.0; 4 * 3 * 9]).unwrap();
    let b = Tensor::from_f32s(&[4], &[0.0; 4]).unwrap();
    let y = tape.conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    assert!(y.to_f32_vec().iter().all(|&v| v == 0.0));
}

/// Nested-loop convolution, written independently of the im2col path.
fn conv_reference(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    (n, c, h, wd): (usize, usize, usize, usize),
    (f, k, stride, pad): (usize, usize, usize, usize),
) -> Vec<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x[((ni * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((fi * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    y[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

#[test]
fn conv2d_matches_nested_loop_reference() {
    let tape: Tape<f64> = Tape::inference();
    let x = Tensor::<f64>::randn(&[1, 2, 5, 5], 1.0, &mut rng(7));
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 1.0, &mut rng(8));
    let b = Tensor::<f64>::randn(&[3], 1.0, &mut rng(9));
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let got = tape.conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        let want = conv_reference(
            &x.to_f64_vec(),
            &w.to_f64_vec(),
            &b.to_f64_vec(),
            (1, 2, 5, 5),
            (3, 3, stride, pad),
        );
        for (g, e) in got.to_f64_vec().iter().zip(&want) {
            let rel = (g - e).abs() / e.abs().max(1e-12);
            assert!(rel < 1e-6, "stride {stride} pad {pad}: {g} vs {e} (rel {rel:e})");
        }
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let tape: Tape<f64> = Tape::inference();
    let x = Tensor::from_f64s(&[1], &[0.0]).unwrap();
    assert_eq!(tape.sigmoid(&x).unwrap().to_f64_vec(), vec![0.5]);
}

#[test]
fn mean_of_constant_tensor_is_that_constant() {
    let tape: Tape<f64> = Tape::inference();
    let x = Tensor::full(&[3, 4, 5], 2.5f64);
    assert!((tape.mean(&x).unwrap().item().unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn batch_norm_train_normalizes_each_channel() {
    let tape: Tape<f64> = Tape::inference();
    let x = Tensor::<f64>::randn(&[4, 8, 6, 6], 1.0, &mut rng(123));
    let gamma = Tensor::full(&[8], 1.0f64);
    let beta = Tensor::full(&[8], 0.0f64);
    let y = tape.batch_norm_train(&x, &gamma, &beta, 0.1, 1e-5, None).unwrap();
    let yd = y.to_f64_vec();
    let per_channel = 4 * 6 * 6;
    for ch in 0..8 {
        let mut vals = Vec::with_capacity(per_channel);
        for n in 0..4 {
            for s in 0..36 {
                vals.push(yd[(n * 8 + ch) * 36 + s]);
            }
        }
        let mean: f64 = vals.iter().sum::<f64>() / per_channel as f64;
        let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per_channel as f64;
        assert!(mean.abs() < 1e-4, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "channel {ch} variance {var}");
    }
}

// ---------------------------------------------------------------------------
// backward-pass identities
// ---------------------------------------------------------------------------

#[test]
fn sum_gradient_is_all_ones() {
    let tape: Tape<f64> = Tape::new();
    let x = Tensor::<f64>::randn(&[2, 3, 4], 1.0, &mut rng(11)).requiring_grad();
    let loss = tape.sum(&x).unwrap();
    tape.backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 24]);
}

#[test]
fn mean_of_squares_gradient_matches_analytic() {
    let tape: Tape<f64> = Tape::new();
    let x = Tensor::from_f64s(&[3], &[1.0, 2.0, 3.0]).unwrap().requiring_grad();
    let loss = tape.mean(&tape.square(&x).unwrap()).unwrap();
    tape.backward(&loss).unwrap();
    let g = x.grad().unwrap();
    let want = [2.0 / 3.0, 4.0 / 3.0, 2.0];
    for (gi, wi) in g.iter().zip(&want) {
        assert!((gi - wi).abs() < 1e-12, "{g:?} vs {want:?}");
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let tape: Tape<f64> = Tape::new();
    let x = Tensor::<f64>::randn(&[2, 2], 1.0, &mut rng(3)).requiring_grad();
    let y = tape.square(&x).unwrap();
    assert!(tape.backward(&y).is_err());
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let build = |x: &Tensor<f64>| -> Tape<f64> {
        let tape = Tape::new();
        let loss = tape.mean(&tape.square(x).unwrap()).unwrap();
        tape.backward(&loss).unwrap();
        tape
    };
    let x = Tensor::from_f64s(&[3], &[1.0, 2.0, 3.0]).unwrap().requiring_grad();
    build(&x);
    let once = x.grad().unwrap();
    build(&x);
    let twice = x.grad().unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() < 1e-12, "accumulation broke: {a} doubled vs {b}");
    }
    x.zero_grad();
    build(&x);
    assert_eq!(x.grad().unwrap(), once);
}

#[test]
fn composite_graph_matches_finite_differences() {
    let composite = op_cases()
        .into_iter()
        .find(|c| c.name == "composite_conv_bn_relu_mean")
        .expect("composite case registered");
    let result = composite.run(3, 1e-4, 1e-4).unwrap();
    assert!(result.compared > 0);
}

// ---------------------------------------------------------------------------
// the per-op finite-difference sweep
// ---------------------------------------------------------------------------

#[test]
fn every_op_matches_finite_differences_on_random_shapes() {
    for case in op_cases() {
        let result = case
            .run(3, 1e-4, 1e-4)
            .unwrap_or_else(|e| panic!("case {} failed to build: {e}", case.name));
        assert!(result.compared > 0, "case {} compared nothing", case.name);
    }
}

// ---------------------------------------------------------------------------
// determinism
// ---------------------------------------------------------------------------

#[test]
fn forward_passes_are_bit_identical_across_runs() {
    let run = || {
        let tape: Tape<f32> = Tape::inference();
        let x = Tensor::<f32>::randn(&[2, 3, 12, 12], 1.0, &mut rng(77));
        let w = Tensor::<f32>::randn(&[8, 3, 3, 3], 1.0, &mut rng(78));
        let b = Tensor::<f32>::randn(&[8], 1.0, &mut rng(79));
        let y = tape.conv2d(&x, &w, Some(&b), 2, 1).unwrap();
        let y = tape.relu(&y).unwrap();
        let y = tape.max_pool2d(&y, 2, 2).unwrap();
        tape.mean(&y).unwrap().item().unwrap()
    };
    let first = run();
    for _ in 0..5 {
        assert_eq!(run().to_bits(), first.to_bits());
    }
}

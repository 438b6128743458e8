//! Central-difference gradient checking. The finite-difference side only ever
//! runs forward passes, so it stays independent of the backward code it
//! verifies. Always run in `f64`.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::Result;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Worst normalized deviation `|g − fd| / max(1, |g|, |fd|)`.
    pub max_err: f64,
    /// Number of scalar entries compared.
    pub compared: usize,
}

/// Check the analytic gradients of `f` with respect to `inputs`.
///
/// `f` must build a scalar loss from the given tensors on the given tape.
/// Every entry of every input marked `requires_grad` is perturbed by `±h` and
/// the central difference is compared against the tape gradient. Deviations
/// are normalized by `max(1, |g|, |fd|)`, i.e. relative for large gradients
/// and absolute near zero.
pub fn check_gradients<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheck>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for t in inputs {
        t.zero_grad();
    }
    let tape = Tape::new();
    let loss = f(&tape, inputs)?;
    tape.backward(&loss)?;
    let grads: Vec<Option<Vec<f64>>> = inputs.iter().map(Tensor::grad).collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let out = f(&tape, inputs)?;
        out.item()
    };

    let mut max_err = 0.0f64;
    let mut compared = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let g = grads[ti].clone().unwrap_or_else(|| vec![0.0; t.numel()]);
        for (i, &gi) in g.iter().enumerate() {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + h;
            let up = eval(inputs)?;
            t.data_mut()[i] = orig - h;
            let down = eval(inputs)?;
            t.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (gi - fd).abs() / 1.0f64.max(gi.abs()).max(fd.abs());
            if err > max_err {
                max_err = err;
            }
            compared += 1;
            assert!(
                err <= tol,
                "gradient mismatch on input {ti} element {i}: analytic {gi} vs finite-diff {fd} (err {err:.3e} > {tol:.1e})"
            );
        }
    }
    Ok(GradCheck { max_err, compared })
}

type LossBuilder = Box<dyn Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>>;
type InputBuilder = Box<dyn Fn(u64) -> Vec<Tensor<f64>>>;

/// One differentiable operation together with a randomized input generator, so
/// callers can sweep every op over many shapes.
pub struct OpCase {
    pub name: &'static str,
    pub make_inputs: InputBuilder,
    pub build: LossBuilder,
}

impl OpCase {
    /// Run `reps` randomized checks of this case.
    pub fn run(&self, reps: u64, h: f64, tol: f64) -> Result<GradCheck> {
        let mut worst = GradCheck { max_err: 0.0, compared: 0 };
        for rep in 0..reps {
            let inputs = (self.make_inputs)(rep);
            let r = check_gradients(&self.build, &inputs, h, tol)?;
            worst.max_err = worst.max_err.max(r.max_err);
            worst.compared += r.compared;
        }
        Ok(worst)
    }
}

fn rng_for(case: &str, rep: u64) -> ChaCha8Rng {
    let mut seed = 0xfeed_0000u64 ^ rep.wrapping_mul(0x9e37_79b9);
    for b in case.bytes() {
        seed = seed.wrapping_mul(31).wrapping_add(b as u64);
    }
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Uniform values kept away from zero, for ops with a kink at the origin.
fn uniform_off_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() >= 0.05 {
                v
            } else if v >= 0.0 {
                v + 0.1
            } else {
                v - 0.1
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Pairwise-distinct values (gap ≥ 1e-3), so max-pool argmaxes cannot flip
/// under the finite-difference perturbation.
fn distinct(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let picks = sample(rng, 4_000_000, n);
    let data = picks.iter().map(|p| p as f64 * 1e-3 - 2000.0 * 1e-3).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn small_dims(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(3..7), rng.gen_range(3..7))
}

/// Reduce `out` to a scalar through a fixed random probe tensor, so every
/// output element gets a distinct weight and permutation bugs can't cancel.
fn probe_loss(tape: &Tape<f64>, out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd_ef01);
    let probe = uniform(out.shape(), &mut rng);
    tape.sum(&tape.mul(out, &probe)?)
}

/// The full registry of differentiable operations, each wired to randomized
/// shapes. Every op the tape exposes appears at least once.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();

    // -- elementwise binaries, same-shape and broadcast ---------------------
    for (name, which) in [("add", 0u8), ("sub", 1u8), ("mul", 2u8)] {
        cases.push(OpCase {
            name,
            make_inputs: Box::new(move |rep| {
                let mut rng = rng_for(name, rep);
                let (n, c, h, w) = small_dims(&mut rng);
                // alternate same-shape / gate-style / scalar broadcasting
                let b_shape: Vec<usize> = match rep % 3 {
                    0 => vec![n, c, h, w],
                    1 => vec![n, 1, h, w],
                    _ => vec![],
                };
                vec![
                    uniform(&[n, c, h, w], &mut rng).requiring_grad(),
                    uniform(&b_shape, &mut rng).requiring_grad(),
                ]
            }),
            build: Box::new(move |tape, ins| {
                let out = match which {
                    0 => tape.add(&ins[0], &ins[1])?,
                    1 => tape.sub(&ins[0], &ins[1])?,
                    _ => tape.mul(&ins[0], &ins[1])?,
                };
                probe_loss(tape, &out, 11)
            }),
        });
    }

    // -- unaries -------------------------------------------------------------
    struct Unary {
        name: &'static str,
        off_zero: bool,
        apply: fn(&Tape<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
    }
    let unaries = [
        Unary { name: "affine", off_zero: false, apply: |t, x| t.affine(x, -1.5, 0.25) },
        Unary { name: "square", off_zero: false, apply: |t, x| t.square(x) },
        Unary { name: "exp", off_zero: false, apply: |t, x| t.exp(x) },
        Unary { name: "sigmoid", off_zero: false, apply: |t, x| t.sigmoid(x) },
        Unary { name: "relu", off_zero: true, apply: |t, x| t.relu(x) },
        Unary { name: "leaky_relu", off_zero: true, apply: |t, x| t.leaky_relu(x, 0.2) },
    ];
    for u in unaries {
        let (name, off_zero, apply) = (u.name, u.off_zero, u.apply);
        cases.push(OpCase {
            name,
            make_inputs: Box::new(move |rep| {
                let mut rng = rng_for(name, rep);
                let (n, c, h, w) = small_dims(&mut rng);
                let x = if off_zero {
                    uniform_off_zero(&[n, c, h, w], &mut rng)
                } else {
                    uniform(&[n, c, h, w], &mut rng)
                };
                vec![x.requiring_grad()]
            }),
            build: Box::new(move |tape, ins| {
                let out = apply(tape, &ins[0])?;
                probe_loss(tape, &out, 13)
            }),
        });
    }

    // -- reductions ----------------------------------------------------------
    type UnaryFn = fn(&Tape<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;
    let reductions: [(&'static str, UnaryFn); 4] = [
        ("sum", |t, x| t.sum(x)),
        ("mean", |t, x| t.mean(x)),
        ("mean_batch", |t, x| t.mean_batch(x)),
        ("mean_spatial", |t, x| t.mean_spatial(x)),
    ];
    for (name, apply) in reductions {
        cases.push(OpCase {
            name,
            make_inputs: Box::new(move |rep| {
                let mut rng = rng_for(name, rep);
                let (n, c, h, w) = small_dims(&mut rng);
                vec![uniform(&[n, c, h, w], &mut rng).requiring_grad()]
            }),
            build: Box::new(move |tape, ins| {
                let out = apply(tape, &ins[0])?;
                probe_loss(tape, &out, 17)
            }),
        });
    }

    // -- shape plumbing -------------------------------------------------------
    cases.push(OpCase {
        name: "concat_c",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("concat_c", rep);
            let (n, _, h, w) = small_dims(&mut rng);
            let c1 = rng.gen_range(1..4);
            let c2 = rng.gen_range(1..4);
            vec![
                uniform(&[n, c1, h, w], &mut rng).requiring_grad(),
                uniform(&[n, c2, h, w], &mut rng).requiring_grad(),
            ]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.concat_c(&[&ins[0], &ins[1]])?;
            probe_loss(tape, &out, 19)
        }),
    });
    cases.push(OpCase {
        name: "narrow_c",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("narrow_c", rep);
            let (n, _, h, w) = small_dims(&mut rng);
            let c = rng.gen_range(2..6);
            vec![uniform(&[n, c, h, w], &mut rng).requiring_grad()]
        }),
        build: Box::new(|tape, ins| {
            let c = ins[0].shape()[1];
            let out = tape.narrow_c(&ins[0], c / 2, c - c / 2)?;
            probe_loss(tape, &out, 23)
        }),
    });
    cases.push(OpCase {
        name: "reshape",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("reshape", rep);
            let (n, c, h, w) = small_dims(&mut rng);
            vec![uniform(&[n, c, h, w], &mut rng).requiring_grad()]
        }),
        build: Box::new(|tape, ins| {
            let s = ins[0].shape();
            let out = tape.reshape(&ins[0], &[1, s[0] * s[1], s[2] * s[3]])?;
            probe_loss(tape, &out, 29)
        }),
    });

    // -- convolution variants -------------------------------------------------
    for (name, k, stride, pad, bias) in [
        ("conv2d_k1s1", 1usize, 1usize, 0usize, true),
        ("conv2d_k3s1p1", 3, 1, 1, true),
        ("conv2d_k3s2p1", 3, 2, 1, false),
    ] {
        cases.push(OpCase {
            name,
            make_inputs: Box::new(move |rep| {
                let mut rng = rng_for(name, rep);
                let n = rng.gen_range(1..3);
                let c_in = rng.gen_range(1..4);
                let c_out = rng.gen_range(1..4);
                let h = rng.gen_range(k + 1..k + 6);
                let w = rng.gen_range(k + 1..k + 6);
                let mut ins = vec![
                    uniform(&[n, c_in, h, w], &mut rng).requiring_grad(),
                    uniform(&[c_out, c_in, k, k], &mut rng).requiring_grad(),
                ];
                if bias {
                    ins.push(uniform(&[c_out], &mut rng).requiring_grad());
                }
                ins
            }),
            build: Box::new(move |tape, ins| {
                let out = tape.conv2d(&ins[0], &ins[1], ins.get(2), stride, pad)?;
                probe_loss(tape, &out, 29)
            }),
        });
    }

    cases.push(OpCase {
        name: "linear",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("linear", rep);
            let n = rng.gen_range(1..5);
            let k = rng.gen_range(1..6);
            let m = rng.gen_range(1..5);
            vec![
                uniform(&[n, k], &mut rng).requiring_grad(),
                uniform(&[m, k], &mut rng).requiring_grad(),
                uniform(&[m], &mut rng).requiring_grad(),
            ]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.linear(&ins[0], &ins[1], ins.get(2))?;
            probe_loss(tape, &out, 31)
        }),
    });

    // -- batch norm, train and eval -------------------------------------------
    cases.push(OpCase {
        name: "batch_norm_train",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("batch_norm_train", rep);
            let (n, c, h, w) = small_dims(&mut rng);
            let n = n + 1; // at least two samples so batch variance is generic
            vec![
                uniform(&[n, c, h, w], &mut rng).requiring_grad(),
                uniform(&[c], &mut rng).requiring_grad(),
                uniform(&[c], &mut rng).requiring_grad(),
            ]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.batch_norm_train(&ins[0], &ins[1], &ins[2], 0.1, 1e-5, None)?;
            probe_loss(tape, &out, 37)
        }),
    });
    cases.push(OpCase {
        name: "batch_norm_eval",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("batch_norm_eval", rep);
            let (n, c, h, w) = small_dims(&mut rng);
            vec![
                uniform(&[n, c, h, w], &mut rng).requiring_grad(),
                uniform(&[c], &mut rng).requiring_grad(),
                uniform(&[c], &mut rng).requiring_grad(),
            ]
        }),
        build: Box::new(|tape, ins| {
            let c = ins[0].shape()[1];
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64 - 0.2).collect();
            let var: Vec<f64> = (0..c).map(|i| 0.5 + 0.25 * i as f64).collect();
            let out = tape.batch_norm_eval(&ins[0], &ins[1], &ins[2], &mean, &var, 1e-5)?;
            probe_loss(tape, &out, 41)
        }),
    });

    // -- pooling / upsampling --------------------------------------------------
    cases.push(OpCase {
        name: "max_pool2d",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("max_pool2d", rep);
            let n = rng.gen_range(1..3);
            let c = rng.gen_range(1..3);
            let h = rng.gen_range(4..8);
            let w = rng.gen_range(4..8);
            vec![distinct(&[n, c, h, w], &mut rng).requiring_grad()]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.max_pool2d(&ins[0], 2, 2)?;
            probe_loss(tape, &out, 43)
        }),
    });
    cases.push(OpCase {
        name: "upsample_nearest",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("upsample_nearest", rep);
            let (n, c, h, w) = small_dims(&mut rng);
            vec![uniform(&[n, c, h, w], &mut rng).requiring_grad()]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.upsample_nearest(&ins[0], 2)?;
            probe_loss(tape, &out, 47)
        }),
    });

    // -- losses ------------------------------------------------------------------
    cases.push(OpCase {
        name: "bce_with_logits",
        make_inputs: Box::new(|rep| {
            let mut rng = rng_for("bce_with_logits", rep);
            let (n, c, h, w) = small_dims(&mut rng);
            let logits = uniform(&[n, c, h, w], &mut rng).requiring_grad();
            let targets: Vec<f64> =
                (0..logits.numel()).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            vec![logits.clone(), Tensor::from_vec(&[n, c, h, w], targets).unwrap()]
        }),
        build: Box::new(|tape, ins| {
            let out = tape.bce_with_logits(&ins[0], &ins[1])?;
            probe_loss(tape, &out, 53)
        }),
    });
    for (name, weighted) in [("softmax_ce", false), ("softmax_ce_weighted", true)] {
        cases.push(OpCase {
            name,
            make_inputs: Box::new(move |rep| {
                let mut rng = rng_for(name, rep);
                let (n, _, h, w) = small_dims(&mut rng);
                let classes = rng.gen_range(2..5);
                vec![uniform(&[n, classes, h, w], &mut rng).requiring_grad()]
            }),
            build: Box::new(move |tape, ins| {
                let shape = ins[0].shape();
                let cells = shape[0] * shape[2] * shape[3];
                let classes = shape[1] as u32;
                // labels/weights derived deterministically from the cell index
                let labels: Vec<u32> = (0..cells).map(|i| (i as u32 * 7 + 1) % classes).collect();
                let weights: Vec<f32> = (0..cells).map(|i| if i % 3 == 0 { 0.0 } else { 0.5 + (i % 4) as f32 }).collect();
                tape.softmax_ce(&ins[0], &labels, weighted.then_some(&weights[..]))
            }),
        });
    }

    // -- a representative composite: conv → bn → relu → mean --------------------
    cases.push(OpCase {
        name: "composite_conv_bn_relu_mean",
        make_inputs: Box::new(|rep| {
            // Redraw until no normalized activation sits near the relu kink,
            // where central differences would straddle the non-smooth point.
            for attempt in 0..64u64 {
                let mut rng = rng_for("composite", rep * 64 + attempt);
                let n = rng.gen_range(2..4);
                let c_in = rng.gen_range(1..3);
                let c_out = rng.gen_range(1..4);
                let h = rng.gen_range(5..8);
                let w = rng.gen_range(5..8);
                let ins = vec![
                    uniform(&[n, c_in, h, w], &mut rng).requiring_grad(),
                    uniform(&[c_out, c_in, 3, 3], &mut rng).requiring_grad(),
                    uniform(&[c_out], &mut rng).requiring_grad(),
                    uniform(&[c_out], &mut rng).requiring_grad(),
                ];
                let tape = Tape::inference();
                let y = tape.conv2d(&ins[0], &ins[1], None, 1, 1).unwrap();
                let y = tape.batch_norm_train(&y, &ins[2], &ins[3], 0.1, 1e-5, None).unwrap();
                if y.data().iter().all(|v| v.abs() > 5e-3) {
                    return ins;
                }
            }
            panic!("composite gradient-check inputs: no kink-free draw in 64 attempts");
        }),
        build: Box::new(|tape, ins| {
            let y = tape.conv2d(&ins[0], &ins[1], None, 1, 1)?;
            let y = tape.batch_norm_train(&y, &ins[2], &ins[3], 0.1, 1e-5, None)?;
            let y = tape.relu(&y)?;
            tape.mean(&y)
        }),
    });

    cases
}

//! Least-squares adversarial objectives and the feature-matching
//! regularizer, all summed over the three detection scales.
//!
//! The discriminators push target scores toward 0 and source scores toward
//! 1; the feature extractor counters by pushing target scores toward 1.
//! Feature matching closes the loop by pulling the discriminators' mean
//! target activations onto the mean source activations, which stabilizes the
//! adversarial game.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

/// Number of detection scales every per-scale loss expects.
pub const SCALES: usize = 3;

fn check_scales(op: &'static str, what: &str, n: usize) -> Result<()> {
    if n != SCALES {
        return Err(Error::arg(op, format!("need {SCALES} per-scale {what}, got {n}")));
    }
    Ok(())
}

fn accumulate<S: Scalar>(tape: &Tape<S>, acc: Option<Tensor<S>>, term: Tensor<S>) -> Result<Option<Tensor<S>>> {
    Ok(Some(match acc {
        Some(acc) => tape.add(&acc, &term)?,
        None => term,
    }))
}

/// Discriminator objective: score source maps as 1 and target maps as 0.
///
/// Per scale, `mean(target²) + mean((1 − source)²)` with the mean running
/// over batch and map elements; summed over the three scales.
pub fn adv_discriminator_loss<S: Scalar>(
    tape: &Tape<S>,
    source_scores: &[Tensor<S>],
    target_scores: &[Tensor<S>],
) -> Result<Tensor<S>> {
    check_scales("adv_discriminator_loss", "source maps", source_scores.len())?;
    check_scales("adv_discriminator_loss", "target maps", target_scores.len())?;
    let mut total = None;
    for (ds, dt) in source_scores.iter().zip(target_scores) {
        let t_term = tape.mean(&tape.square(dt)?)?;
        let s_term = tape.mean(&tape.square(&tape.one_minus(ds)?)?)?;
        total = accumulate(tape, total, tape.add(&t_term, &s_term)?)?;
    }
    Ok(total.expect("three scales"))
}

/// Feature-extractor objective: make target maps score as source.
///
/// Per scale, `mean((1 − target)²)`; summed over the three scales. Only
/// target features appear, so no gradient reaches the source path; keeping
/// the discriminator itself out of the update is the trainer's job (it
/// freezes the discriminator parameters for this step).
pub fn adv_feature_loss<S: Scalar>(tape: &Tape<S>, target_scores: &[Tensor<S>]) -> Result<Tensor<S>> {
    check_scales("adv_feature_loss", "target maps", target_scores.len())?;
    let mut total = None;
    for dt in target_scores {
        total = accumulate(tape, total, tape.mean(&tape.square(&tape.one_minus(dt)?)?)?)?;
    }
    Ok(total.expect("three scales"))
}

/// Match the discriminators' mean activations across domains.
///
/// Per scale and layer, the batch-mean source and target activation maps are
/// compared by mean squared difference; terms are summed over layers and
/// scales. Batch means make the loss well-defined when the two domains use
/// different batch sizes. The source side enters as a constant: this loss
/// trains the feature extractor through the target path only.
pub fn feature_matching_loss<S: Scalar>(
    tape: &Tape<S>,
    source_layers: &[Vec<Tensor<S>>],
    target_layers: &[Vec<Tensor<S>>],
) -> Result<Tensor<S>> {
    if source_layers.len() != target_layers.len() || source_layers.is_empty() {
        return Err(Error::arg(
            "feature_matching_loss",
            format!("scale count mismatch: {} source vs {} target", source_layers.len(), target_layers.len()),
        ));
    }
    let mut total = None;
    for (k, (src, tgt)) in source_layers.iter().zip(target_layers).enumerate() {
        if src.len() != tgt.len() || src.is_empty() {
            return Err(Error::arg(
                "feature_matching_loss",
                format!("scale {k}: layer count mismatch, {} source vs {} target", src.len(), tgt.len()),
            ));
        }
        for (l, (s, t)) in src.iter().zip(tgt).enumerate() {
            if s.shape()[1..] != t.shape()[1..] {
                return Err(Error::shape(
                    "feature_matching_loss",
                    format!("scale {k} layer {l}: {:?} vs {:?} (only batch sizes may differ)", s.shape(), t.shape()),
                ));
            }
            let sm = tape.mean_batch(&s.detach())?;
            let tm = tape.mean_batch(t)?;
            let term = tape.mean(&tape.square(&tape.sub(&sm, &tm)?)?)?;
            total = accumulate(tape, total, term)?;
        }
    }
    Ok(total.expect("at least one scale and layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Fwd, ParamStore};
    use crate::objectives::{Discriminator, DiscriminatorConfig};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_maps(value: f64) -> Vec<Tensor<f64>> {
        (0..3).map(|k| Tensor::full(&[2, 1, 4 - k, 4 - k], value)).collect()
    }

    fn random_maps(seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|k| {
                let shape = [2, 1, 5 - k, 4];
                let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                Tensor::from_vec(&shape, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn perfect_discrimination_costs_nothing() {
        let tape = Tape::new();
        let loss = adv_discriminator_loss(&tape, &constant_maps(1.0), &constant_maps(0.0)).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn undecided_discriminator_costs_half_per_scale() {
        let tape = Tape::new();
        let loss = adv_discriminator_loss(&tape, &constant_maps(0.5), &constant_maps(0.5)).unwrap();
        assert!((loss.item().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_matches_flat_mean_of_squares() {
        let tape = Tape::new();
        let (src, tgt) = (random_maps(1), random_maps(2));
        let loss = adv_discriminator_loss(&tape, &src, &tgt).unwrap().item().unwrap();
        let mut expected = 0.0;
        for (s, t) in src.iter().zip(&tgt) {
            let td = t.to_f64_vec();
            let sd = s.to_f64_vec();
            expected += td.iter().map(|v| v * v).sum::<f64>() / td.len() as f64;
            expected += sd.iter().map(|v| (1.0 - v) * (1.0 - v)).sum::<f64>() / sd.len() as f64;
        }
        assert!((loss - expected).abs() < 1e-6, "got {loss}, expected {expected}");
    }

    #[test]
    fn fooled_discriminator_costs_the_features_nothing() {
        let tape = Tape::new();
        let loss = adv_feature_loss(&tape, &constant_maps(1.0)).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn confident_discriminator_costs_the_features_one_per_scale() {
        let tape = Tape::new();
        let loss = adv_feature_loss(&tape, &constant_maps(0.0)).unwrap();
        assert!((loss.item().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn feature_loss_matches_flat_mean_of_squares() {
        let tape = Tape::new();
        let tgt = random_maps(3);
        let loss = adv_feature_loss(&tape, &tgt).unwrap().item().unwrap();
        let expected: f64 = tgt
            .iter()
            .map(|t| {
                let d = t.to_f64_vec();
                d.iter().map(|v| (1.0 - v) * (1.0 - v)).sum::<f64>() / d.len() as f64
            })
            .sum();
        assert!((loss - expected).abs() < 1e-6, "got {loss}, expected {expected}");
    }

    #[test]
    fn wrong_scale_counts_are_rejected() {
        let tape = Tape::new();
        let two: Vec<Tensor<f64>> = constant_maps(0.5).into_iter().take(2).collect();
        assert!(adv_discriminator_loss(&tape, &two, &constant_maps(0.5)).is_err());
        assert!(adv_discriminator_loss(&tape, &constant_maps(0.5), &two).is_err());
        assert!(adv_feature_loss(&tape, &two).is_err());
    }

    fn layered(maps: Vec<Tensor<f64>>) -> Vec<Vec<Tensor<f64>>> {
        maps.into_iter().map(|m| vec![m]).collect()
    }

    #[test]
    fn identical_activations_match_for_free() {
        let tape = Tape::new();
        let maps = random_maps(4);
        let loss = feature_matching_loss(&tape, &layered(maps.clone()), &layered(maps)).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn scalar_activation_gap_is_its_square() {
        let tape = Tape::new();
        let src = vec![vec![Tensor::<f64>::full(&[1, 1, 1, 1], 2.0)]];
        let tgt = vec![vec![Tensor::<f64>::full(&[1, 1, 1, 1], 1.0)]];
        let loss = feature_matching_loss(&tape, &src, &tgt).unwrap();
        assert!((loss.item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_compares_batch_means_elementwise() {
        let tape = Tape::new();
        let src = layered(random_maps(5));
        let tgt = layered(random_maps(6));
        let loss = feature_matching_loss(&tape, &src, &tgt).unwrap().item().unwrap();
        let mut expected = 0.0;
        for (s, t) in src.iter().zip(&tgt) {
            let (s, t) = (&s[0], &t[0]);
            let n = s.shape()[0];
            let rest = s.numel() / n;
            let sd = s.to_f64_vec();
            let td = t.to_f64_vec();
            let mut acc = 0.0;
            for i in 0..rest {
                let sm = (0..n).map(|b| sd[b * rest + i]).sum::<f64>() / n as f64;
                let tm = (0..n).map(|b| td[b * rest + i]).sum::<f64>() / n as f64;
                acc += (sm - tm) * (sm - tm);
            }
            expected += acc / rest as f64;
        }
        assert!((loss - expected).abs() < 1e-6, "got {loss}, expected {expected}");
    }

    #[test]
    fn matching_is_symmetric_and_blind_to_batch_order() {
        let tape = Tape::new();
        let a = layered(random_maps(7));
        let b = layered(random_maps(8));
        let ab = feature_matching_loss(&tape, &a, &b).unwrap().item().unwrap();
        let ba = feature_matching_loss(&tape, &b, &a).unwrap().item().unwrap();
        assert!((ab - ba).abs() < 1e-12);

        // Swapping the two batch entries preserves the batch mean, so the
        // loss must see the permuted activations as identical.
        let permuted: Vec<Vec<Tensor<f64>>> = a
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|m| {
                        let d = m.to_f64_vec();
                        let half = d.len() / 2;
                        let mut flipped = d[half..].to_vec();
                        flipped.extend_from_slice(&d[..half]);
                        Tensor::from_vec(m.shape(), flipped).unwrap()
                    })
                    .collect()
            })
            .collect();
        let loss = feature_matching_loss(&tape, &a, &permuted).unwrap();
        assert!(loss.item().unwrap() < 1e-12);
    }

    #[test]
    fn layer_count_mismatch_is_rejected() {
        let tape = Tape::new();
        let src = vec![vec![Tensor::<f64>::full(&[1, 1, 2, 2], 0.5); 3]];
        let tgt = vec![vec![Tensor::<f64>::full(&[1, 1, 2, 2], 0.5); 2]];
        assert!(feature_matching_loss(&tape, &src, &tgt).is_err());
        assert!(feature_matching_loss(&tape, &src, &[]).is_err());
    }

    #[test]
    fn matching_trains_only_the_target_path() {
        let tape = Tape::new();
        let src = Tensor::<f64>::full(&[2, 1, 3, 3], 0.4).requiring_grad();
        let tgt = Tensor::<f64>::full(&[2, 1, 3, 3], 1.1).requiring_grad();
        let loss = feature_matching_loss(&tape, &[vec![src.clone()]], &[vec![tgt.clone()]]).unwrap();
        tape.backward(&loss).unwrap();
        assert!(!src.has_grad(), "source activations must stay constant");
        assert!(tgt.has_grad(), "target activations must receive gradient");
    }

    #[test]
    fn frozen_discriminators_receive_no_gradient_from_the_feature_loss() {
        let config = DiscriminatorConfig { in_channels: 8, widths: [4, 4, 4] };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let discs: Vec<Discriminator> =
            (0..3).map(|k| Discriminator::new(k, config.clone()).unwrap()).collect();
        for d in &discs {
            d.init_params(&mut store, &mut rng).unwrap();
        }
        store.set_trainable("disc", false);

        let tape = Tape::new();
        let fwd = Fwd { tape: &tape, store: &store, train: true };
        let features: Vec<Tensor<f64>> = (0..3)
            .map(|k| Tensor::randn(&[2, 8, 8 >> k, 8 >> k], 1.0, &mut rng).requiring_grad())
            .collect();
        let scores: Vec<Tensor<f64>> =
            discs.iter().zip(&features).map(|(d, f)| d.forward(&fwd, f).unwrap().score).collect();
        let loss = adv_feature_loss(&tape, &scores).unwrap();
        tape.backward(&loss).unwrap();

        for (name, tensor) in store.params() {
            assert!(!tensor.has_grad(), "frozen parameter {name} must not accumulate gradient");
        }
        for (k, f) in features.iter().enumerate() {
            assert!(f.has_grad(), "feature map {k} must receive gradient through the discriminator");
            let g = f.grad().unwrap();
            assert!(g.iter().any(|&v| v != 0.0), "feature map {k} gradient must be nonzero");
        }
    }
}

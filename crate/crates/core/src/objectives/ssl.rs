//! Classification loss for the self-supervised pretext tasks.
//!
//! Every pretext task (patch rotation, jigsaw, translation) poses a 4-way
//! decision per grid cell, so its head produces class logits over a grid and
//! the loss is a plain per-cell softmax cross-entropy.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

/// Number of answers every pretext task offers per cell.
pub const PRETEXT_CLASSES: usize = 4;

/// Mean per-cell cross-entropy between grid logits and a label grid.
///
/// `logits` is `[4, gh, gw]` for a single grid or `[N, 4, gh, gw]` for a
/// batch; `labels` is row-major over `(sample, row, column)` with values in
/// `0..4`.
pub fn pretext_loss<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>, labels: &[u32]) -> Result<Tensor<S>> {
    let logits = match logits.rank() {
        3 => {
            let s = logits.shape().to_vec();
            tape.reshape(logits, &[1, s[0], s[1], s[2]])?
        }
        4 => logits.clone(),
        _ => {
            return Err(Error::shape(
                "pretext_loss",
                format!("expected [4, gh, gw] or [N, 4, gh, gw] logits, got {:?}", logits.shape()),
            ))
        }
    };
    if logits.shape()[1] != PRETEXT_CLASSES {
        return Err(Error::shape(
            "pretext_loss",
            format!("expected {PRETEXT_CLASSES} classes, got {} in {:?}", logits.shape()[1], logits.shape()),
        ));
    }
    let cells = logits.numel() / PRETEXT_CLASSES;
    if labels.len() != cells {
        return Err(Error::shape("pretext_loss", format!("{cells} grid cells but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= PRETEXT_CLASSES) {
        return Err(Error::arg("pretext_loss", format!("label {bad} outside 0..{PRETEXT_CLASSES}")));
    }
    tape.softmax_ce(&logits, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn label_grid(seed: u64, cells: usize) -> Vec<u32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cells).map(|_| rng.gen_range(0..PRETEXT_CLASSES as u32)).collect()
    }

    #[test]
    fn confident_correct_logits_cost_almost_nothing() {
        let (gh, gw) = (3, 3);
        let labels = label_grid(1, gh * gw);
        let mut data = vec![0.0f64; PRETEXT_CLASSES * gh * gw];
        for (cell, &l) in labels.iter().enumerate() {
            data[l as usize * gh * gw + cell] = 50.0;
        }
        let tape = Tape::new();
        let logits = Tensor::from_vec(&[PRETEXT_CLASSES, gh, gw], data).unwrap();
        let loss = pretext_loss(&tape, &logits, &labels).unwrap();
        assert!(loss.item().unwrap() < 1e-3);
    }

    #[test]
    fn uniform_logits_cost_ln_4_per_cell() {
        let tape = Tape::new();
        let logits = Tensor::<f64>::zeros(&[2, PRETEXT_CLASSES, 3, 4]);
        let labels = label_grid(2, 2 * 3 * 4);
        let loss = pretext_loss(&tape, &logits, &labels).unwrap();
        assert!((loss.item().unwrap() - (4.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn random_grid_matches_a_per_cell_cross_entropy_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, gh, gw) = (2, 3, 3);
        let cells = n * gh * gw;
        let labels = label_grid(4, cells);
        let data: Vec<f64> = (0..n * PRETEXT_CLASSES * gh * gw).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tape = Tape::new();
        let logits = Tensor::from_vec(&[n, PRETEXT_CLASSES, gh, gw], data.clone()).unwrap();
        let loss = pretext_loss(&tape, &logits, &labels).unwrap().item().unwrap();

        let inner = gh * gw;
        let mut expected = 0.0;
        for b in 0..n {
            for i in 0..inner {
                let cell = b * inner + i;
                let logit = |c: usize| data[(b * PRETEXT_CLASSES + c) * inner + i];
                let denom: f64 = (0..PRETEXT_CLASSES).map(|c| logit(c).exp()).sum();
                expected += denom.ln() - logit(labels[cell] as usize);
            }
        }
        expected /= cells as f64;
        assert!((loss - expected).abs() < 1e-6, "got {loss}, expected {expected}");
    }

    #[test]
    fn single_grid_and_singleton_batch_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (gh, gw) = (2, 4);
        let labels = label_grid(6, gh * gw);
        let data: Vec<f64> = (0..PRETEXT_CLASSES * gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let single = Tensor::from_vec(&[PRETEXT_CLASSES, gh, gw], data.clone()).unwrap();
        let batched = Tensor::from_vec(&[1, PRETEXT_CLASSES, gh, gw], data).unwrap();
        let a = pretext_loss(&tape, &single, &labels).unwrap().item().unwrap();
        let b = pretext_loss(&tape, &batched, &labels).unwrap().item().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_labels_and_shapes_are_rejected() {
        let tape = Tape::new();
        let logits = Tensor::<f64>::zeros(&[PRETEXT_CLASSES, 2, 2]);
        assert!(pretext_loss(&tape, &logits, &[0, 1, 2, 4]).is_err(), "label 4 is outside the class range");
        assert!(pretext_loss(&tape, &logits, &[0, 1, 2]).is_err(), "label count must match cells");
        let five = Tensor::<f64>::zeros(&[5, 2, 2]);
        assert!(pretext_loss(&tape, &five, &[0; 4]).is_err(), "five classes is not a pretext grid");
        let flat = Tensor::<f64>::zeros(&[4, 4]);
        assert!(pretext_loss(&tape, &flat, &[0; 4]).is_err(), "rank 2 is not a grid of logits");
    }
}

//! Supervised detection loss on the raw prediction grids.
//!
//! Each ground-truth box supervises exactly one cell at one scale — the
//! scale whose anchor best matches the box, the cell holding the box center.
//! That cell receives box regression and class cross-entropy; every cell's
//! objectness is trained toward 1 there and 0 elsewhere.

use std::collections::HashSet;

use crate::detector::BOX_CHANNELS;
use crate::error::{Error, Result};
use crate::synthdata::Annotation;
use crate::tensor::{Scalar, Tape, Tensor};

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionLossWeights {
    pub bbox: f32,
    pub obj: f32,
    pub cls: f32,
}

impl Default for DetectionLossWeights {
    fn default() -> Self {
        DetectionLossWeights { bbox: 5.0, obj: 1.0, cls: 1.0 }
    }
}

/// The weighted total plus the unweighted terms, for logging.
#[derive(Debug, Clone)]
pub struct DetectionLoss<S: Scalar> {
    /// `bbox·w_bbox + obj·w_obj + cls·w_cls`; the scalar to differentiate.
    pub total: Tensor<S>,
    /// Mean squared error of the four box components, averaged over boxes.
    pub bbox: Tensor<S>,
    /// Mean objectness binary cross-entropy per scale, summed over scales.
    pub obj: Tensor<S>,
    /// Mean class cross-entropy over supervised cells.
    pub cls: Tensor<S>,
    /// Number of supervised cells (boxes minus any same-cell collisions).
    pub boxes: usize,
}

/// One ground-truth box resolved to its responsible cell.
struct CellTarget {
    scale: usize,
    n: usize,
    gy: usize,
    gx: usize,
    /// Fractional center offsets within the cell, in `[0, 1)`.
    tx: f64,
    ty: f64,
    /// Log size ratios against the scale's anchor.
    tw: f64,
    th: f64,
    class: u32,
}

/// Compute the detection loss over a batch of raw grids.
///
/// `grids` are the three per-scale prediction tensors `[N, 5+classes, gh, gw]`
/// in stride order; `labels` holds each sample's boxes; `anchors` and
/// `strides` are the decode parameters the targets are encoded against.
pub fn detection_loss<S: Scalar>(
    tape: &Tape<S>,
    grids: &[Tensor<S>; 3],
    labels: &[&[Annotation]],
    anchors: &[[f32; 2]; 3],
    strides: &[usize; 3],
    weights: &DetectionLossWeights,
) -> Result<DetectionLoss<S>> {
    let (n, num_classes, dims) = check_grids(grids, labels.len())?;
    let targets = assign_targets(labels, anchors, strides, &dims)?;
    let boxes = targets.len();

    let mut bbox_sum: Option<Tensor<S>> = None;
    let mut obj_sum: Option<Tensor<S>> = None;
    let mut cls_sum: Option<Tensor<S>> = None;

    for (k, grid) in grids.iter().enumerate() {
        let (gh, gw) = dims[k];
        let cells = n * gh * gw;

        // Constant planes: the responsibility mask doubles as the objectness
        // target; the four target planes are zero off-mask.
        let mut mask = vec![0.0f32; cells];
        let mut t: [Vec<S>; 4] = std::array::from_fn(|_| vec![S::zero(); cells]);
        let mut cls_labels = vec![0u32; cells];
        let mut scale_boxes = 0usize;
        for tgt in targets.iter().filter(|t| t.scale == k) {
            let cell = (tgt.n * gh + tgt.gy) * gw + tgt.gx;
            mask[cell] = 1.0;
            for (plane, v) in t.iter_mut().zip([tgt.tx, tgt.ty, tgt.tw, tgt.th]) {
                plane[cell] = S::from_f64c(v);
            }
            cls_labels[cell] = tgt.class;
            scale_boxes += 1;
        }
        let mask_t = Tensor::from_f32s(&[n, 1, gh, gw], &mask)?;

        // Objectness: elementwise BCE against the mask, mean over the map.
        let obj_logits = tape.narrow_c(grid, 4, 1)?;
        let obj_k = tape.mean(&tape.bce_with_logits(&obj_logits, &mask_t)?)?;
        obj_sum = Some(match obj_sum {
            Some(acc) => tape.add(&acc, &obj_k)?,
            None => obj_k,
        });
        if scale_boxes == 0 {
            continue;
        }

        // Box: squared error of (σ(tx), σ(ty), tw, th) against the encoded
        // targets, masked to responsible cells, summed (normalized below).
        let mut residual: Option<Tensor<S>> = None;
        for (c, target_plane) in t.iter().enumerate() {
            let pred = tape.narrow_c(grid, c, 1)?;
            let pred = if c < 2 { tape.sigmoid(&pred)? } else { pred };
            let tgt = Tensor::from_vec(&[n, 1, gh, gw], target_plane.clone())?;
            let sq = tape.square(&tape.sub(&pred, &tgt)?)?;
            residual = Some(match residual {
                Some(acc) => tape.add(&acc, &sq)?,
                None => sq,
            });
        }
        let bbox_k = tape.sum(&tape.mul(&residual.unwrap(), &mask_t)?)?;
        bbox_sum = Some(match bbox_sum {
            Some(acc) => tape.add(&acc, &bbox_k)?,
            None => bbox_k,
        });

        // Class: cross-entropy restricted to responsible cells. Each scale's
        // call averages over its own cells, so re-weight by the scale's share
        // of boxes to make the combined term a mean over all boxes.
        let cls_logits = tape.narrow_c(grid, BOX_CHANNELS, num_classes)?;
        let ce = tape.softmax_ce(&cls_logits, &cls_labels, Some(&mask))?;
        let ce = tape.scale(&ce, scale_boxes as f64 / boxes as f64)?;
        cls_sum = Some(match cls_sum {
            Some(acc) => tape.add(&acc, &ce)?,
            None => ce,
        });
    }

    let bbox = match bbox_sum {
        Some(acc) => tape.scale(&acc, 1.0 / (4.0 * boxes as f64))?,
        None => Tensor::scalar(0.0),
    };
    let obj = obj_sum.expect("three scales always contribute objectness");
    let cls = cls_sum.unwrap_or_else(|| Tensor::scalar(0.0));

    let weighted = tape.add(
        &tape.add(&tape.scale(&bbox, weights.bbox as f64)?, &tape.scale(&obj, weights.obj as f64)?)?,
        &tape.scale(&cls, weights.cls as f64)?,
    )?;
    Ok(DetectionLoss { total: weighted, bbox, obj, cls, boxes })
}

/// Validate grid shapes and return `(batch, classes, per-scale dims)`.
fn check_grids<S: Scalar>(grids: &[Tensor<S>; 3], samples: usize) -> Result<(usize, usize, [(usize, usize); 3])> {
    let mut dims = [(0usize, 0usize); 3];
    let (n, ch) = (grids[0].shape()[0], grids[0].shape()[1]);
    for (k, g) in grids.iter().enumerate() {
        if g.rank() != 4 {
            return Err(Error::shape("detection_loss", format!("grid {k} must be [N,ch,gh,gw], got {:?}", g.shape())));
        }
        if g.shape()[0] != n || g.shape()[1] != ch {
            return Err(Error::shape(
                "detection_loss",
                format!("grid {k} is {:?}, expected batch {n} and {ch} channels", g.shape()),
            ));
        }
        dims[k] = (g.shape()[2], g.shape()[3]);
    }
    if ch <= BOX_CHANNELS {
        return Err(Error::shape("detection_loss", format!("{ch} channels leave no room for class logits")));
    }
    if samples != n {
        return Err(Error::shape("detection_loss", format!("{samples} label lists for a batch of {n}")));
    }
    Ok((n, ch - BOX_CHANNELS, dims))
}

/// Resolve each box to its responsible scale and cell. When two boxes claim
/// the same cell the first keeps it; the runner-up goes unsupervised for
/// this step rather than fighting over one prediction slot.
fn assign_targets(
    labels: &[&[Annotation]],
    anchors: &[[f32; 2]; 3],
    strides: &[usize; 3],
    dims: &[(usize, usize); 3],
) -> Result<Vec<CellTarget>> {
    let mut out = Vec::new();
    let mut claimed = HashSet::new();
    for (n, anns) in labels.iter().enumerate() {
        for a in anns.iter() {
            let [x1, y1, x2, y2] = a.bbox;
            let (w, h) = (x2 - x1, y2 - y1);
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return Err(Error::arg(
                    "detection_loss",
                    format!("degenerate box {:?} in sample {n} (needs positive width and height)", a.bbox),
                ));
            }
            let (cx, cy) = (0.5 * (x1 + x2), 0.5 * (y1 + y2));
            let k = best_anchor(w, h, anchors);
            let s = strides[k] as f32;
            let (gh, gw) = dims[k];
            let gx = ((cx / s).floor() as usize).min(gw - 1);
            let gy = ((cy / s).floor() as usize).min(gh - 1);
            if !claimed.insert((k, n, gy, gx)) {
                continue;
            }
            out.push(CellTarget {
                scale: k,
                n,
                gy,
                gx,
                tx: (cx / s) as f64 - gx as f64,
                ty: (cy / s) as f64 - gy as f64,
                tw: ((w / anchors[k][0]) as f64).ln(),
                th: ((h / anchors[k][1]) as f64).ln(),
                class: a.class_id as u32,
            });
        }
    }
    Ok(out)
}

/// Scale whose anchor has the highest co-centered IoU with a `w×h` box.
fn best_anchor(w: f32, h: f32, anchors: &[[f32; 2]; 3]) -> usize {
    let mut best = 0;
    let mut best_iou = -1.0f32;
    for (k, a) in anchors.iter().enumerate() {
        let inter = w.min(a[0]) * h.min(a[1]);
        let iou = inter / (w * h + a[0] * a[1] - inter);
        if iou > best_iou {
            best_iou = iou;
            best = k;
        }
    }
    best
}

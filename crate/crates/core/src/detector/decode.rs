//! Turning raw detection grids into boxes.
//!
//! Each grid cell carries (tx, ty, tw, th, obj, class scores). The box center
//! is the cell corner plus the sigmoid of (tx, ty), scaled by the stride; the
//! box size is the scale's anchor times exp(tw, th). Confidence is the
//! objectness sigmoid times the best softmax class probability. Everything
//! below the confidence floor is dropped, boxes are clipped to the frame, and
//! greedy per-class NMS removes overlapping duplicates.
//!
//! Decoding is a host-side, plain-float affair — nothing here touches the
//! tape. Training losses work on the raw grids directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{FusionDetectorConfig, BOX_CHANNELS, STRIDES};

/// Keeps exp(tw) and exp(th) finite even on wildly untrained outputs.
const SIZE_LOGIT_CLAMP: f32 = 10.0;

/// One sample's raw grid at one scale, as flat floats in [channel, y, x]
/// order.
#[derive(Debug, Clone)]
pub struct RawGrid {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl RawGrid {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// A decoded box: `[x1, y1, x2, y2]` in pixels plus class and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f32; 4],
    pub class_id: u32,
    pub confidence: f32,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intersection-over-union of two corner-form boxes. Boxes without positive
/// area overlap nothing by convention.
pub fn box_iou(a: &[f32; 4], b: &[f32; 4]) -> f32 {
    let area = |r: &[f32; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let (aa, ab) = (area(a), area(b));
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    inter / (aa + ab - inter)
}

/// Decode one sample's three grids into final detections, ordered by
/// descending confidence.
pub fn decode(grids: &[RawGrid; 3], config: &FusionDetectorConfig, frame_h: usize, frame_w: usize) -> Result<Vec<Detection>> {
    let nc = config.num_classes;
    let mut raw = Vec::new();
    for (k, g) in grids.iter().enumerate() {
        if g.channels != BOX_CHANNELS + nc {
            return Err(Error::shape("decode", format!("grid {k} has {} channels, expected {}", g.channels, BOX_CHANNELS + nc)));
        }
        let stride = STRIDES[k] as f32;
        let anchor = config.anchors[k];
        for y in 0..g.h {
            for x in 0..g.w {
                let obj = sigmoid(g.at(4, y, x));
                // Stable softmax over the class channels; only the winning
                // probability matters for confidence.
                let mut best = 0usize;
                let mut best_logit = f32::NEG_INFINITY;
                for c in 0..nc {
                    let l = g.at(BOX_CHANNELS + c, y, x);
                    if l > best_logit {
                        best_logit = l;
                        best = c;
                    }
                }
                let denom: f32 = (0..nc).map(|c| (g.at(BOX_CHANNELS + c, y, x) - best_logit).exp()).sum();
                let conf = obj / denom;
                if conf < config.conf_threshold {
                    continue;
                }
                let cx = (x as f32 + sigmoid(g.at(0, y, x))) * stride;
                let cy = (y as f32 + sigmoid(g.at(1, y, x))) * stride;
                let bw = anchor[0] * g.at(2, y, x).clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp();
                let bh = anchor[1] * g.at(3, y, x).clamp(-SIZE_LOGIT_CLAMP, SIZE_LOGIT_CLAMP).exp();
                let bbox = [
                    (cx - bw / 2.0).clamp(0.0, frame_w as f32),
                    (cy - bh / 2.0).clamp(0.0, frame_h as f32),
                    (cx + bw / 2.0).clamp(0.0, frame_w as f32),
                    (cy + bh / 2.0).clamp(0.0, frame_h as f32),
                ];
                if bbox[2] - bbox[0] <= 0.0 || bbox[3] - bbox[1] <= 0.0 {
                    continue;
                }
                raw.push(Detection { bbox, class_id: best as u32, confidence: conf });
            }
        }
    }
    Ok(nms(raw, config.nms_iou))
}

/// Greedy per-class non-maximum suppression; the survivors come back sorted
/// by descending confidence.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f32) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut keep: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = keep
            .iter()
            .any(|k| k.class_id == d.class_id && box_iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            keep.push(d);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_grids(nc: usize) -> [RawGrid; 3] {
        // Objectness at large negative logit everywhere: nothing survives.
        [0, 1, 2].map(|k| {
            let (h, w) = (96 / STRIDES[k], 96 / STRIDES[k]);
            let mut g = RawGrid { channels: BOX_CHANNELS + nc, h, w, data: vec![0.0; (BOX_CHANNELS + nc) * h * w] };
            for y in 0..h {
                for x in 0..w {
                    g.data[(4 * h + y) * w + x] = -30.0;
                }
            }
            g
        })
    }

    fn set(g: &mut RawGrid, c: usize, y: usize, x: usize, v: f32) {
        g.data[(c * g.h + y) * g.w + x] = v;
    }

    #[test]
    fn zero_offsets_decode_to_cell_center_and_anchor_size() {
        let config = FusionDetectorConfig::default();
        let mut grids = empty_grids(config.num_classes);
        // One strong cell on the stride-16 grid at (y=2, x=3); tx..th zero.
        set(&mut grids[1], 4, 2, 3, 12.0);
        set(&mut grids[1], 5, 2, 3, 9.0); // class 0 wins decisively
        let dets = decode(&grids, &config, 96, 96).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, 0);
        let (cx, cy) = ((3.0 + 0.5) * 16.0, (2.0 + 0.5) * 16.0);
        let [aw, ah] = config.anchors[1];
        let expect = [cx - aw / 2.0, cy - ah / 2.0, cx + aw / 2.0, cy + ah / 2.0];
        for (got, want) in d.bbox.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-4, "{:?} vs {expect:?}", d.bbox);
        }
        assert!(d.confidence > 0.99);
    }

    #[test]
    fn suppressed_objectness_yields_no_detections() {
        let config = FusionDetectorConfig::default();
        let dets = decode(&empty_grids(config.num_classes), &config, 96, 96).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn size_logits_shift_the_box_exponentially() {
        let config = FusionDetectorConfig::default();
        let mut grids = empty_grids(config.num_classes);
        set(&mut grids[0], 4, 5, 5, 12.0);
        set(&mut grids[0], 2, 5, 5, (2.0f32).ln()); // double the anchor width
        let dets = decode(&grids, &config, 96, 96).unwrap();
        let d = &dets[0];
        let w = d.bbox[2] - d.bbox[0];
        assert!((w - 2.0 * config.anchors[0][0]).abs() < 1e-3);
    }

    #[test]
    fn nms_keeps_the_stronger_of_two_overlapping_boxes() {
        let a = Detection { bbox: [10.0, 10.0, 30.0, 30.0], class_id: 0, confidence: 0.9 };
        let b = Detection { bbox: [11.0, 11.0, 31.0, 31.0], class_id: 0, confidence: 0.8 };
        let c = Detection { bbox: [11.0, 11.0, 31.0, 31.0], class_id: 1, confidence: 0.7 };
        assert!(box_iou(&a.bbox, &b.bbox) > 0.5);
        let kept = nms(vec![b.clone(), a.clone(), c.clone()], 0.5);
        // Same-class overlap collapses to the stronger box; the other class
        // survives untouched.
        assert_eq!(kept, vec![a, c]);
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        assert_eq!(box_iou(&[5.0, 5.0, 5.0, 9.0], &[0.0, 0.0, 10.0, 10.0]), 0.0);
        assert_eq!(box_iou(&[9.0, 5.0, 5.0, 9.0], &[0.0, 0.0, 10.0, 10.0]), 0.0);
    }

    #[test]
    fn iou_of_known_overlap_is_exact() {
        let v = box_iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 0.0, 3.0, 2.0]);
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn out_of_frame_boxes_are_clipped() {
        let config = FusionDetectorConfig::default();
        let mut grids = empty_grids(config.num_classes);
        // Cell (0, 0) on the coarsest grid with a huge box.
        set(&mut grids[2], 4, 0, 0, 12.0);
        set(&mut grids[2], 2, 0, 0, 3.0);
        set(&mut grids[2], 3, 0, 0, 3.0);
        let dets = decode(&grids, &config, 96, 96).unwrap();
        let d = &dets[0];
        assert!(d.bbox[0] >= 0.0 && d.bbox[1] >= 0.0 && d.bbox[2] <= 96.0 && d.bbox[3] <= 96.0);
    }
}

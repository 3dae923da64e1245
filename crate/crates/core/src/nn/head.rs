//! Single-scale YOLO-style head: raw-map decoding, greedy NMS and
//! ground-truth target assignment.
//!
//! The raw map has `A · (5 + K)` channels over a `G_h × G_w` grid. Channel
//! block `a` holds `[t_x, t_y, t_w, t_h, objectness, class_0 .. class_K)`
//! for anchor `a`. Columns (`x`) are lateral position, rows (`y`) are time.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NnError;
use crate::maneuver::{iou, DetectionBox, ManeuverClass};

pub const NUM_CLASSES: usize = ManeuverClass::COUNT;
/// Values per anchor slot: four box offsets, objectness, class logits.
pub const SLOT_LEN: usize = 5 + NUM_CLASSES;
pub const OBJ: usize = 4;

/// Target logits for cell offsets are clamped to this margin inside (0, 1).
pub const OFFSET_EPS: f64 = 0.01;

/// Reference box shape in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// IoU of two boxes sharing a center.
pub fn shape_iou(w0: f64, h0: f64, w1: f64, h1: f64) -> f64 {
    let inter = w0.min(w1) * h0.min(h1);
    inter / (w0 * h0 + w1 * h1 - inter)
}

/// Grid geometry shared by decoding and assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayout {
    pub anchors: Vec<Anchor>,
    pub stride: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl HeadLayout {
    pub fn channels(&self) -> usize {
        self.anchors.len() * SLOT_LEN
    }

    pub fn slots(&self) -> usize {
        self.anchors.len() * self.grid_w * self.grid_h
    }

    /// Flat slot index of `(anchor, row, col)`.
    #[inline]
    pub fn slot(&self, a: usize, gy: usize, gx: usize) -> usize {
        (a * self.grid_h + gy) * self.grid_w + gx
    }

    fn check_raw<T: Scalar>(&self, raw: &Tensor<T>) -> Result<(), NnError> {
        let [_, c, h, w] = raw.shape();
        if c != self.channels() || h != self.grid_h || w != self.grid_w {
            return Err(NnError::ShapeMismatch(format!(
                "head output {:?}, expected [_, {}, {}, {}]",
                raw.shape(),
                self.channels(),
                self.grid_h,
                self.grid_w
            )));
        }
        Ok(())
    }
}

/// Decode sample `n` of a raw head map into scored boxes.
///
/// Center `(cell + σ(t)) · stride`, size `anchor · exp(t)`, score
/// `σ(objectness) · σ(best class logit)`. Boxes are clamped to the
/// `window_w × window_h` input and kept iff `score > conf_thresh`.
pub fn decode_head<T: Scalar>(
    raw: &Tensor<T>,
    n: usize,
    layout: &HeadLayout,
    window_w: f64,
    window_h: f64,
    conf_thresh: f64,
) -> Result<Vec<DetectionBox>, NnError> {
    layout.check_raw(raw)?;
    let mut out = Vec::new();
    for (a, anchor) in layout.anchors.iter().enumerate() {
        let base = a * SLOT_LEN;
        for gy in 0..layout.grid_h {
            for gx in 0..layout.grid_w {
                let v = |k: usize| raw.at(n, base + k, gy, gx).to_f64();
                let (best, logit) = (0..NUM_CLASSES)
                    .map(|c| (c, v(5 + c)))
                    .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                let score = sigmoid(v(OBJ)) * sigmoid(logit);
                if !(score > conf_thresh) {
                    continue;
                }
                let (x_min, t_min, x_max, t_max) = slot_box([v(0), v(1), v(2), v(3)], *anchor, gx, gy, layout.stride);
                let unclamped = DetectionBox {
                    class: ManeuverClass::from_code(best).expect("class index"),
                    x_min,
                    t_min,
                    x_max,
                    t_max,
                    score,
                };
                if let Some(b) = unclamped.clamped(window_w, window_h) {
                    out.push(b);
                }
            }
        }
    }
    Ok(out)
}

/// Unclamped box predicted by one slot, in input pixels.
pub fn slot_box(t: [f64; 4], anchor: Anchor, gx: usize, gy: usize, stride: f64) -> (f64, f64, f64, f64) {
    let cx = (gx as f64 + sigmoid(t[0])) * stride;
    let cy = (gy as f64 + sigmoid(t[1])) * stride;
    let w = anchor.w * t[2].min(30.0).exp();
    let h = anchor.h * t[3].min(30.0).exp();
    (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

/// Class-wise greedy suppression, highest score first. Ties keep input order.
pub fn nms(dets: &[DetectionBox], iou_thresh: f64) -> Vec<DetectionBox> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<DetectionBox> = Vec::new();
    for d in sorted {
        if kept
            .iter()
            .all(|k| k.class != d.class || iou(k, &d) <= iou_thresh)
        {
            kept.push(d);
        }
    }
    kept
}

/// Training targets for one sample, indexed by [`HeadLayout::slot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub objectness: Vec<f64>,
    pub class: Vec<Option<ManeuverClass>>,
    /// `[t_x, t_y, t_w, t_h]` in raw (pre-activation) units.
    pub boxes: Vec<[f64; 4]>,
    pub mask: Vec<bool>,
    /// The boxes the targets were built from.
    pub gt: Vec<DetectionBox>,
}

impl Targets {
    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Place each ground-truth box in the cell holding its center and the
/// anchor of highest shape IoU. Targets invert [`decode_head`]; a later box
/// overwrites an earlier one claiming the same slot.
pub fn assign_targets(gt: &[DetectionBox], layout: &HeadLayout) -> Targets {
    let slots = layout.slots();
    let mut t = Targets {
        objectness: vec![0.0; slots],
        class: vec![None; slots],
        boxes: vec![[0.0; 4]; slots],
        mask: vec![false; slots],
        gt: gt.to_vec(),
    };
    for b in gt {
        let (cx, cy) = b.center();
        let (w, h) = (b.width(), b.height());
        let gx = ((cx / layout.stride).floor().max(0.0) as usize).min(layout.grid_w - 1);
        let gy = ((cy / layout.stride).floor().max(0.0) as usize).min(layout.grid_h - 1);
        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for (a, anchor) in layout.anchors.iter().enumerate() {
            let s = shape_iou(w, h, anchor.w, anchor.h);
            if s > best_iou {
                best = a;
                best_iou = s;
            }
        }
        let anchor = layout.anchors[best];
        let fx = (cx / layout.stride - gx as f64).clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
        let fy = (cy / layout.stride - gy as f64).clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
        let s = layout.slot(best, gy, gx);
        t.objectness[s] = 1.0;
        t.class[s] = Some(b.class);
        t.boxes[s] = [logit(fx), logit(fy), (w / anchor.w).ln(), (h / anchor.h).ln()];
        t.mask[s] = true;
    }
    t
}

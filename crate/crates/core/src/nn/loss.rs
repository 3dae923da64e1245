//! Detection loss: objectness BCE over every slot, class BCE and box-offset
//! MSE over assigned slots. Summed per sample, averaged over the batch.

use serde::{Deserialize, Serialize};

use super::head::{sigmoid, slot_box, HeadLayout, Targets, NUM_CLASSES, OBJ, SLOT_LEN};
use crate::maneuver::{iou, DetectionBox};
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub objectness: f64,
    pub class: f64,
    pub bbox: f64,
    /// When set, an unassigned slot whose predicted box overlaps some ground
    /// truth with IoU above this value takes no objectness loss.
    #[serde(default)]
    pub ignore_iou: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            objectness: 1.0,
            class: 1.0,
            bbox: 1.0,
            ignore_iou: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub objectness: f64,
    pub class: f64,
    pub bbox: f64,
}

/// Binary cross-entropy on a logit, and its derivative.
#[inline]
fn bce_logit(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

fn ignored<T: Scalar>(
    pred: &Tensor<T>,
    s: usize,
    a: usize,
    gy: usize,
    gx: usize,
    layout: &HeadLayout,
    tg: &Targets,
    thresh: Option<f64>,
) -> bool {
    let Some(thresh) = thresh else { return false };
    let base = a * SLOT_LEN;
    let t = [0, 1, 2, 3].map(|k| pred.at(s, base + k, gy, gx).to_f64());
    let (x_min, t_min, x_max, t_max) = slot_box(t, layout.anchors[a], gx, gy, layout.stride);
    let b = DetectionBox {
        class: crate::maneuver::ManeuverClass::LaneRight,
        x_min,
        t_min,
        x_max,
        t_max,
        score: 1.0,
    };
    tg.gt.iter().any(|g| iou(&b, g) > thresh)
}

pub fn yolo_loss<T: Scalar>(
    pred: &Tensor<T>,
    targets: &[Targets],
    layout: &HeadLayout,
    weights: &LossWeights,
) -> Result<(LossParts, Tensor<T>), NnError> {
    let [n, c, gh, gw] = pred.shape();
    if c != layout.channels() || gh != layout.grid_h || gw != layout.grid_w || targets.len() != n {
        return Err(NnError::ShapeMismatch(format!(
            "loss: prediction {:?} with {} target sets, expected [{}, {}, {}, {}]",
            pred.shape(),
            targets.len(),
            targets.len(),
            layout.channels(),
            layout.grid_h,
            layout.grid_w
        )));
    }
    let scale = 1.0 / n as f64;
    let mut parts = LossParts::default();
    let mut grad = Tensor::zeros(pred.shape());
    for (s, tg) in targets.iter().enumerate() {
        if tg.mask.len() != layout.slots() {
            return Err(NnError::ShapeMismatch("target slot count differs from layout".into()));
        }
        for a in 0..layout.anchors.len() {
            let base = a * SLOT_LEN;
            for gy in 0..gh {
                for gx in 0..gw {
                    let slot = layout.slot(a, gy, gx);
                    if !tg.mask[slot] && ignored(pred, s, a, gy, gx, layout, tg, weights.ignore_iou) {
                        continue;
                    }
                    let z = pred.at(s, base + OBJ, gy, gx).to_f64();
                    let (l, g) = bce_logit(z, tg.objectness[slot]);
                    parts.objectness += weights.objectness * l * scale;
                    grad.set(s, base + OBJ, gy, gx, T::of(weights.objectness * g * scale));
                    if !tg.mask[slot] {
                        continue;
                    }
                    let class = tg.class[slot].map(|c| c.code());
                    for k in 0..NUM_CLASSES {
                        let z = pred.at(s, base + 5 + k, gy, gx).to_f64();
                        let y = if class == Some(k) { 1.0 } else { 0.0 };
                        let (l, g) = bce_logit(z, y);
                        parts.class += weights.class * l * scale;
                        grad.set(s, base + 5 + k, gy, gx, T::of(weights.class * g * scale));
                    }
                    for (k, target) in tg.boxes[slot].iter().enumerate() {
                        let d = pred.at(s, base + k, gy, gx).to_f64() - target;
                        parts.bbox += weights.bbox * d * d * scale;
                        grad.set(s, base + k, gy, gx, T::of(weights.bbox * 2.0 * d * scale));
                    }
                }
            }
        }
    }
    parts.total = parts.objectness + parts.class + parts.bbox;
    Ok((parts, grad))
}

use serde::{Deserialize, Serialize};

use super::head::{decode_head, nms};
use super::model::{Detector, DetectorConfig};
use super::tensor::Tensor;
use super::NnError;
use crate::maneuver::DetectionBox;
use crate::profile::MotionProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub conf_thresh: f64,
    pub nms_thresh: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            conf_thresh: 0.2,
            nms_thresh: 0.5,
        }
    }
}

/// Bilinear resize of a row-major `sh × sw` plane with half-pixel centers
/// (`align_corners = false`); samples outside the source clamp to the edge.
pub fn resize_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    assert_eq!(src.len(), sw * sh, "resize: source size");
    if (sw, sh) == (dw, dh) {
        return src.to_vec();
    }
    let axis = |d: usize, s: usize| -> Vec<(usize, usize, f64)> {
        (0..d)
            .map(|i| {
                let p = ((i as f64 + 0.5) * s as f64 / d as f64 - 0.5).clamp(0.0, (s - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(s - 1);
                (i0, i1, p - i0 as f64)
            })
            .collect()
    };
    let xs = axis(dw, sw);
    let ys = axis(dh, sh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Detector input for one profile: resized to the network window and scaled
/// to `[0, 1]`. Single-channel networks see the channel mean.
pub fn profile_to_input(profile: &MotionProfile, config: &DetectorConfig) -> Result<Tensor<f32>, NnError> {
    let (w, h, c) = (profile.dims.width, profile.dims.height, profile.dims.channels);
    let planes: Vec<Vec<f64>> = if config.input_channels == 1 {
        vec![profile.intensity()]
    } else if config.input_channels == c {
        (0..c)
            .map(|k| profile.data.iter().skip(k).step_by(c).map(|&v| v as f64).collect())
            .collect()
    } else {
        return Err(NnError::ShapeMismatch(format!(
            "profile has {c} channels, detector expects {}",
            config.input_channels
        )));
    };
    let mut data = Vec::with_capacity(config.input_channels * config.input_width * config.input_height);
    for p in planes {
        let r = resize_bilinear(&p, w, h, config.input_width, config.input_height);
        data.extend(r.into_iter().map(|v| (v / 255.0) as f32));
    }
    Tensor::from_vec([1, config.input_channels, config.input_height, config.input_width], data)
}

/// Scale a box from network-input coordinates to profile coordinates.
pub fn to_profile_coords(b: &DetectionBox, config: &DetectorConfig, profile_w: usize, profile_h: usize) -> Option<DetectionBox> {
    let sx = profile_w as f64 / config.input_width as f64;
    let st = profile_h as f64 / config.input_height as f64;
    DetectionBox {
        x_min: b.x_min * sx,
        x_max: b.x_max * sx,
        t_min: b.t_min * st,
        t_max: b.t_max * st,
        ..*b
    }
    .clamped(profile_w as f64, profile_h as f64)
}

pub fn detect(det: &Detector<f32>, profile: &MotionProfile, opts: &InferOptions) -> Result<Vec<DetectionBox>, NnError> {
    Ok(detect_many(det, &[profile], opts)?.pop().expect("one result per profile"))
}

/// Batched [`detect`], eight profiles per forward pass.
pub fn detect_many(
    det: &Detector<f32>,
    profiles: &[&MotionProfile],
    opts: &InferOptions,
) -> Result<Vec<Vec<DetectionBox>>, NnError> {
    let cfg = &det.config;
    let layout = cfg.layout();
    let mut out = Vec::with_capacity(profiles.len());
    for chunk in profiles.chunks(8) {
        let inputs = chunk
            .iter()
            .map(|p| profile_to_input(p, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let batch = Tensor::stack(&inputs.iter().collect::<Vec<_>>())?;
        let raw = det.forward(&batch)?;
        for (n, p) in chunk.iter().enumerate() {
            let boxes = decode_head(
                &raw,
                n,
                &layout,
                cfg.input_width as f64,
                cfg.input_height as f64,
                opts.conf_thresh,
            )?;
            let boxes = nms(&boxes, opts.nms_thresh);
            out.push(
                boxes
                    .iter()
                    .filter_map(|b| to_profile_coords(b, cfg, p.dims.width, p.dims.height))
                    .collect(),
            );
        }
    }
    Ok(out)
}

//! Gradient/Laplacian overtake detector, the classical baseline.
//!
//! Each side band of the profile (outer quarter by default) is collapsed to
//! its row mean; a vertical second difference of that signal fires where a
//! trace enters or leaves the band. Firing rows are merged into intervals,
//! and the gradient field over the band decides the direction the trace
//! moves: outward means a passed vehicle, i.e. an overtake on that side.
//! Lane changes are not detected.

use serde::{Deserialize, Serialize};

use crate::maneuver::{event_to_bbox, DetectionBox, GeometryError, ManeuverClass, ManeuverEvent};
use crate::profile::MotionProfile;

#[derive(Debug, thiserror::Error)]
pub enum ClassicError {
    #[error("profile {0}x{1} is too small, need at least 3x3")]
    ProfileTooSmall(usize, usize),
    #[error("invalid classic parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Row-major `height × width` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "float image size");
        Self { width, height, data }
    }

    /// Channel-mean intensity of a profile.
    pub fn from_profile(p: &MotionProfile) -> Self {
        Self::new(p.dims.width, p.dims.height, p.intensity())
    }

    #[inline]
    pub fn at(&self, t: usize, x: usize) -> f64 {
        self.data[t * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gt: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// `atan2(g_t, g_x)` in `(-π, π]`.
    pub orientation: Vec<f64>,
}

/// Derivative along one axis: central difference inside, one-sided at the
/// two borders.
#[inline]
fn diff(prev: Option<f64>, here: f64, next: Option<f64>) -> f64 {
    match (prev, next) {
        (Some(p), Some(n)) => (n - p) / 2.0,
        (None, Some(n)) => n - here,
        (Some(p), None) => here - p,
        (None, None) => 0.0,
    }
}

pub fn gradient_field(img: &FloatImage) -> Result<GradientField, ClassicError> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(ClassicError::ProfileTooSmall(w, h));
    }
    let mut gx = Vec::with_capacity(w * h);
    let mut gt = Vec::with_capacity(w * h);
    for t in 0..h {
        for x in 0..w {
            let here = img.at(t, x);
            gx.push(diff(
                x.checked_sub(1).map(|x| img.at(t, x)),
                here,
                (x + 1 < w).then(|| img.at(t, x + 1)),
            ));
            gt.push(diff(
                t.checked_sub(1).map(|t| img.at(t, x)),
                here,
                (t + 1 < h).then(|| img.at(t + 1, x)),
            ));
        }
    }
    let magnitude = gx.iter().zip(&gt).map(|(a, b)| a.hypot(*b)).collect();
    let orientation = gx.iter().zip(&gt).map(|(a, b)| b.atan2(*a)).collect();
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gt,
        magnitude,
        orientation,
    })
}

/// Mean of each row over `cols`, summed in the order given.
fn band_means(img: &FloatImage, cols: &[usize]) -> Vec<f64> {
    let n = cols.len() as f64;
    (0..img.height)
        .map(|t| cols.iter().map(|&x| img.at(t, x)).sum::<f64>() / n)
        .collect()
}

/// `m(t-k) - 2 m(t) + m(t+k)`; rows whose stencil leaves the profile are 0.
fn second_difference(m: &[f64], k: usize) -> Vec<f64> {
    (0..m.len())
        .map(|t| {
            if t < k || t + k >= m.len() {
                0.0
            } else {
                m[t - k] - 2.0 * m[t] + m[t + k]
            }
        })
        .collect()
}

/// Band-averaged vertical Laplacian with half-step `k`.
pub fn vertical_laplacian(img: &FloatImage, band: std::ops::Range<usize>, k: usize) -> Result<Vec<f64>, ClassicError> {
    if band.is_empty() || band.end > img.width {
        return Err(ClassicError::InvalidParams(format!(
            "band {band:?} outside width {}",
            img.width
        )));
    }
    if k == 0 || 2 * k >= img.height {
        return Err(ClassicError::InvalidParams(format!(
            "half-step {k} needs 1 <= k < {}/2",
            img.height
        )));
    }
    let cols: Vec<usize> = band.collect();
    Ok(second_difference(&band_means(img, &cols), k))
}

/// Which sign of trace motion counts as a passed vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassedDirection {
    /// Trace moving toward the image edge over time.
    #[default]
    Outward,
    Inward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicParams {
    /// Gradient magnitude a pixel needs to vote on direction.
    pub magnitude_threshold: f64,
    pub laplacian_k: usize,
    pub laplacian_threshold: f64,
    pub min_duration: usize,
    /// Each side band spans this fraction of the width, from the edge.
    pub band_fraction: f64,
    /// Firing runs separated by at most this many quiet rows are one event;
    /// the Laplacian only responds where a trace enters and leaves a band.
    pub merge_gap: usize,
    pub passed_direction: PassedDirection,
    /// Push the interval start back by the time the trace needs, at its
    /// measured lateral speed, to travel from `v_x` to the band.
    pub extrapolate_onset: bool,
}

impl Default for ClassicParams {
    fn default() -> Self {
        Self {
            magnitude_threshold: 20.0,
            laplacian_k: 5,
            laplacian_threshold: 8.0,
            min_duration: 15,
            band_fraction: 0.25,
            merge_gap: 60,
            passed_direction: PassedDirection::Outward,
            extrapolate_onset: true,
        }
    }
}

impl ClassicParams {
    pub fn validate(&self) -> Result<(), ClassicError> {
        let bad = |m: &str| Err(ClassicError::InvalidParams(m.into()));
        if !(self.magnitude_threshold > 0.0 && self.laplacian_threshold > 0.0) {
            return bad("thresholds must be positive");
        }
        if self.laplacian_k == 0 {
            return bad("laplacian_k must be at least 1");
        }
        if !(self.band_fraction > 0.0 && self.band_fraction <= 0.5) {
            return bad("band_fraction must lie in (0, 0.5]");
        }
        Ok(())
    }
}

/// Runs of rows with `|L| > thresh`, as half-open `[start, end)`, joined
/// across gaps of at most `gap` rows.
fn firing_intervals(lap: &[f64], thresh: f64, gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut t = 0;
    while t < lap.len() {
        if lap[t].abs() <= thresh {
            t += 1;
            continue;
        }
        let start = t;
        while t < lap.len() && lap[t].abs() > thresh {
            t += 1;
        }
        match out.last_mut() {
            Some(last) if start - last.1 <= gap => last.1 = t,
            _ => out.push((start, t)),
        }
    }
    out
}

/// Overtake detections. Boxes come from [`event_to_bbox`] with score 1.
pub fn detect_classic(p: &MotionProfile, v_x: f64, params: &ClassicParams) -> Result<Vec<DetectionBox>, ClassicError> {
    params.validate()?;
    let img = FloatImage::from_profile(p);
    let (w, h) = (img.width, img.height);
    let grad = gradient_field(&img)?;
    let k = params.laplacian_k;
    if 2 * k >= h {
        return Err(ClassicError::InvalidParams(format!("half-step {k} too large for {h} rows")));
    }
    let b = ((w as f64 * params.band_fraction).floor() as usize).max(1);

    let mut dets = Vec::new();
    for class in [ManeuverClass::OvertakeLeft, ManeuverClass::OvertakeRight] {
        // Columns listed from the outer edge inward, so that both sides sum in
        // mirrored order and the detector is exactly mirror-equivariant.
        let left = class == ManeuverClass::OvertakeLeft;
        let cols: Vec<usize> = if left { (0..b).collect() } else { (w - b..w).rev().collect() };
        // Lateral coordinate measured inward from this side's edge.
        let outward = if left { 1.0 } else { -1.0 };
        let lap = second_difference(&band_means(&img, &cols), k);
        for (start, end) in firing_intervals(&lap, params.laplacian_threshold, params.merge_gap) {
            if end - start < params.min_duration {
                continue;
            }
            // A trace I(x + s·t) has g_t = s·g_x, so Σ g_x·g_t carries the
            // sign of s and Σ g_t² / Σ g_x·g_t estimates it. Static edges have
            // g_t = 0 and drop out of both sums.
            let (mut cross, mut energy) = (0.0, 0.0);
            for t in start..end {
                for &x in &cols {
                    let i = t * w + x;
                    if grad.magnitude[i] > params.magnitude_threshold {
                        cross += grad.gx[i] * grad.gt[i];
                        energy += grad.gt[i] * grad.gt[i];
                    }
                }
            }
            // Positive when the trace drifts toward this side's edge.
            let drift = outward * cross;
            let passed = match params.passed_direction {
                PassedDirection::Outward => drift > 0.0,
                PassedDirection::Inward => drift < 0.0,
            };
            if !passed {
                continue;
            }
            // Firing starts k rows before the trace reaches the band and stops
            // k rows after it leaves.
            let entry = (start + k).min(end - 1);
            let leave = end.saturating_sub(k).max(entry + 1);
            let mut onset = entry as f64;
            if params.extrapolate_onset && energy > 0.0 {
                let speed = energy / cross.abs();
                let inner = if left { b as f64 } else { (w - b) as f64 };
                let distance = outward * (v_x - inner);
                if speed > 0.0 && distance > 0.0 {
                    onset -= distance / speed;
                }
            }
            let t_start = onset.floor().max(0.0) as usize;
            let t_end = leave.min(h);
            if t_end <= t_start {
                continue;
            }
            let event = ManeuverEvent::new(class, t_start, t_end)?;
            dets.push(event_to_bbox(&event, v_x, p.dims)?);
        }
    }
    Ok(dets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maneuver::ProfileDims;
    use crate::profile::Provenance;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> FloatImage {
        FloatImage::new(w, h, (0..h).flat_map(|t| (0..w).map(move |x| (t, x))).map(|(t, x)| f(t, x)).collect())
    }

    fn profile(w: usize, h: usize, data: Vec<u8>) -> MotionProfile {
        MotionProfile::new(
            ProfileDims::new(w, h, 1).unwrap(),
            data,
            Provenance {
                video_id: "t".into(),
                belt: None,
                v_x: w as f64 / 2.0,
                fps: None,
                events: vec![],
            },
        )
    }

    #[test]
    fn constant_profile_has_no_gradient() {
        let g = gradient_field(&img(5, 4, |_, _| 7.0)).unwrap();
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn horizontal_ramp() {
        let g = gradient_field(&img(6, 4, |_, x| 3.0 * x as f64)).unwrap();
        assert!(g.gx.iter().all(|&v| v == 3.0));
        assert!(g.gt.iter().all(|&v| v == 0.0));
        assert!(g.orientation.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn diagonal_band_orientation() {
        use std::f64::consts::{FRAC_PI_4, PI};
        // I = f(x + t) with a smooth bump: g_t = g_x, so the gradient lies on
        // the π/4 diagonal (pointing up the bump on either flank).
        let g = gradient_field(&img(40, 40, |t, x| {
            let u = (x + t) as f64;
            100.0 * (-(u - 40.0).powi(2) / 50.0).exp()
        }))
        .unwrap();
        for t in 1..39 {
            for x in 1..39 {
                let i = t * 40 + x;
                if g.magnitude[i] > 1e-3 {
                    assert_eq!(g.gx[i], g.gt[i]);
                    let o = g.orientation[i];
                    let expected = if g.gx[i] > 0.0 { FRAC_PI_4 } else { FRAC_PI_4 - PI };
                    assert!((o - expected).abs() < 1e-6, "{o}");
                }
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(
            gradient_field(&img(2, 5, |_, _| 0.0)),
            Err(ClassicError::ProfileTooSmall(2, 5))
        ));
    }

    #[test]
    fn laplacian_of_affine_column_is_zero_inside() {
        let l = vertical_laplacian(&img(4, 30, |t, x| 2.0 * t as f64 + x as f64), 0..4, 3).unwrap();
        assert!(l.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn step_response_peaks_near_edge() {
        let t0 = 20;
        let l = vertical_laplacian(&img(3, 40, |t, _| if t >= t0 { 10.0 } else { 0.0 }), 0..3, 4).unwrap();
        let peak = l.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert_eq!(peak, 10.0);
        for (t, v) in l.iter().enumerate() {
            if v.abs() == peak {
                assert!(t.abs_diff(t0) <= 4, "peak at {t}");
            }
        }
    }

    #[test]
    fn laplacian_rejects_bad_arguments() {
        let i = img(4, 10, |_, _| 0.0);
        assert!(vertical_laplacian(&i, 0..0, 1).is_err());
        assert!(vertical_laplacian(&i, 0..5, 1).is_err());
        assert!(vertical_laplacian(&i, 0..4, 5).is_err());
    }

    #[test]
    fn intervals_merge_across_small_gaps() {
        let mut lap = vec![0.0; 30];
        for t in [2, 3, 6, 20] {
            lap[t] = 9.0;
        }
        assert_eq!(firing_intervals(&lap, 8.0, 1), vec![(2, 4), (6, 7), (20, 21)]);
        assert_eq!(firing_intervals(&lap, 8.0, 2), vec![(2, 7), (20, 21)]);
        assert_eq!(firing_intervals(&lap, 8.0, 3), vec![(2, 7), (20, 21)]);
        assert_eq!(firing_intervals(&lap, 8.0, 20), vec![(2, 21)]);
    }

    #[test]
    fn uniform_profile_gives_nothing() {
        let p = profile(64, 64, vec![90; 64 * 64]);
        assert!(detect_classic(&p, 32.0, &ClassicParams::default()).unwrap().is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = profile(64, 64, vec![90; 64 * 64]);
        let bad = ClassicParams {
            laplacian_threshold: 0.0,
            ..ClassicParams::default()
        };
        assert!(detect_classic(&p, 32.0, &bad).is_err());
    }

    proptest! {
        #[test]
        fn operators_are_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            p in prop::collection::vec(-50.0f64..50.0, 48),
            q in prop::collection::vec(-50.0f64..50.0, 48),
        ) {
            let (w, h) = (6, 8);
            let pi = FloatImage::new(w, h, p.clone());
            let qi = FloatImage::new(w, h, q.clone());
            let mix = FloatImage::new(w, h, p.iter().zip(&q).map(|(x, y)| a * x + b * y).collect());
            let (gp, gq, gm) = (gradient_field(&pi).unwrap(), gradient_field(&qi).unwrap(), gradient_field(&mix).unwrap());
            for i in 0..w * h {
                prop_assert!((gm.gx[i] - (a * gp.gx[i] + b * gq.gx[i])).abs() < 1e-9);
                prop_assert!((gm.gt[i] - (a * gp.gt[i] + b * gq.gt[i])).abs() < 1e-9);
            }
            let (lp, lq, lm) = (
                vertical_laplacian(&pi, 1..5, 2).unwrap(),
                vertical_laplacian(&qi, 1..5, 2).unwrap(),
                vertical_laplacian(&mix, 1..5, 2).unwrap(),
            );
            for t in 0..h {
                prop_assert!((lm[t] - (a * lp[t] + b * lq[t])).abs() < 1e-9);
            }
        }
    }
}

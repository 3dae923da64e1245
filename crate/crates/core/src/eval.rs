//! Detection scoring: greedy IoU matching, per-class AP with all-point
//! interpolation, mAP, and precision/recall/F1 at a confidence cut.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::maneuver::{
    event_to_bbox, iou, DetectionBox, DetectionRecord, EventRecord, GeometryError, ManeuverClass, ManeuverEvent,
    ProfileDims,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{file}:{line}: {msg}")]
    MalformedInput { file: String, line: usize, msg: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of matching one video's detections of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Matched gt index per detection, in detection input order.
    pub det_match: Vec<Option<usize>>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.det_match.iter().filter(|m| m.is_some()).count()
    }

    pub fn fp(&self) -> usize {
        self.det_match.len() - self.tp()
    }

    pub fn fn_(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Detection indices by descending score; equal scores keep input order.
fn ranked(dets: &[DetectionBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching: in score order each detection claims the unmatched
/// same-class gt of highest IoU if that IoU exceeds `iou_thresh`. IoU ties go
/// to the earlier gt.
pub fn match_detections(dets: &[DetectionBox], gts: &[DetectionBox], iou_thresh: f64) -> MatchResult {
    let mut det_match = vec![None; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in ranked(dets) {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_matched[j] || g.class != dets[i].class {
                continue;
            }
            let v = iou(&dets[i], g);
            if v > iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            gt_matched[j] = true;
            det_match[i] = Some(j);
        }
    }
    MatchResult { det_match, gt_matched }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// `(P, R, F1)`; every 0/0 is 0.
pub fn precision_recall_f1(c: Counts) -> (f64, f64, f64) {
    let p = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let r = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    (p, r, f1_score(p, r))
}

/// AP from `(score, is_tp)` pairs and the number of ground-truth boxes:
/// area under the precision envelope of the ranked PR curve.
pub fn ap_from_ranked(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        curve.push((tp as f64 / (rank + 1) as f64, tp as f64 / n_gt as f64));
    }
    // Envelope: precision at each rank becomes the best precision at any
    // later rank.
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].0 = curve[i].0.max(curve[i + 1].0);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in curve {
        ap += p * (r - prev_recall);
        prev_recall = r;
    }
    ap
}

/// AP of one class over a single set of detections and gts.
pub fn average_precision(dets: &[DetectionBox], gts: &[DetectionBox], iou_thresh: f64) -> f64 {
    let m = match_detections(dets, gts, iou_thresh);
    let scored: Vec<_> = dets.iter().zip(&m.det_match).map(|(d, j)| (d.score, j.is_some())).collect();
    ap_from_ranked(&scored, gts.len())
}

pub fn mean_ap(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    /// Classes to score; the rest are dropped from both sides.
    pub classes: Vec<ManeuverClass>,
    pub dataset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresh: 0.3,
            conf_thresh: 0.2,
            classes: ManeuverClass::ALL.to_vec(),
            dataset: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: ManeuverClass,
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gt_count: usize,
    pub det_count: usize,
    /// False when the class has neither ground truth nor detections.
    pub in_map: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    pub per_class: Vec<ClassReport>,
    pub map: f64,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn class(&self, c: ManeuverClass) -> Option<&ClassReport> {
        self.per_class.iter().find(|r| r.class == c)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per class plus an `mAP` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,ap,precision,recall,f1,tp,fp,fn\n");
        for r in &self.per_class {
            s.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
                r.class, r.ap, r.precision, r.recall, r.f1, r.tp, r.fp, r.fn_
            ));
        }
        s.push_str(&format!("mAP,{:.4},,,,,,\n", self.map));
        s
    }
}

/// Score boxes grouped by video id.
pub fn evaluate_boxes(
    dets: &BTreeMap<String, Vec<DetectionBox>>,
    gts: &BTreeMap<String, Vec<DetectionBox>>,
    cfg: &EvalConfig,
) -> EvalReport {
    let empty = Vec::new();
    let mut videos: Vec<&String> = dets.keys().chain(gts.keys()).collect();
    videos.sort();
    videos.dedup();
    let mut per_class = Vec::new();
    let mut warnings = Vec::new();
    for class in ManeuverClass::ALL.into_iter().filter(|c| cfg.classes.contains(c)) {
        let mut scored = Vec::new();
        let mut counts = Counts::default();
        let mut n_gt = 0;
        for v in &videos {
            let d: Vec<DetectionBox> = dets.get(*v).unwrap_or(&empty).iter().filter(|b| b.class == class).copied().collect();
            let g: Vec<DetectionBox> = gts.get(*v).unwrap_or(&empty).iter().filter(|b| b.class == class).copied().collect();
            n_gt += g.len();
            let m = match_detections(&d, &g, cfg.iou_thresh);
            for (b, j) in d.iter().zip(&m.det_match) {
                scored.push((b.score, j.is_some()));
                if b.score >= cfg.conf_thresh {
                    if j.is_some() {
                        counts.tp += 1;
                    } else {
                        counts.fp += 1;
                    }
                }
            }
        }
        counts.fn_ = n_gt - counts.tp;
        let (precision, recall, f1) = precision_recall_f1(counts);
        let in_map = n_gt > 0 || !scored.is_empty();
        if !in_map {
            warnings.push(format!("class {class} has no ground truth and no detections; left out of mAP"));
        }
        per_class.push(ClassReport {
            class,
            ap: ap_from_ranked(&scored, n_gt),
            precision,
            recall,
            f1,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            gt_count: n_gt,
            det_count: scored.len(),
            in_map,
        });
    }
    let aps: Vec<f64> = per_class.iter().filter(|r| r.in_map).map(|r| r.ap).collect();
    EvalReport {
        dataset: cfg.dataset.clone(),
        iou_thresh: cfg.iou_thresh,
        conf_thresh: cfg.conf_thresh,
        map: mean_ap(&aps),
        per_class,
        warnings,
    }
}

fn parse_class(s: &str) -> Result<ManeuverClass, EvalError> {
    s.parse().map_err(|_| EvalError::UnknownClass(s.to_string()))
}

/// Ground-truth record as a box; needs the record's `v_x` and `width`.
pub fn gt_box(rec: &EventRecord) -> Result<DetectionBox, EvalError> {
    let class = parse_class(&rec.class)?;
    let (Some(v_x), Some(width)) = (rec.v_x, rec.width) else {
        return Err(EvalError::MalformedInput {
            file: String::new(),
            line: 0,
            msg: format!("ground truth for `{}` lacks v_x or width", rec.video_id),
        });
    };
    let dims = ProfileDims::new(width, rec.t_end.max(1), 1)?;
    Ok(event_to_bbox(&ManeuverEvent::new(class, rec.t_start, rec.t_end)?, v_x, dims)?)
}

pub fn evaluate(dets: &[DetectionRecord], gts: &[EventRecord], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let mut d: BTreeMap<String, Vec<DetectionBox>> = BTreeMap::new();
    for r in dets {
        parse_class(&r.class)?;
        d.entry(r.video_id.clone()).or_default().push(r.to_box()?);
    }
    let mut g: BTreeMap<String, Vec<DetectionBox>> = BTreeMap::new();
    for r in gts {
        g.entry(r.video_id.clone()).or_default().push(gt_box(r)?);
    }
    Ok(evaluate_boxes(&d, &g, cfg))
}

/// Read a JSONL file, one record per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, EvalError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| EvalError::MalformedInput {
            file: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::head::assign_targets;
use super::infer::profile_to_input;
use super::loss::{yolo_loss, LossWeights};
use super::model::{Detector, DetectorConfig};
use super::tensor::Tensor;
use super::NnError;
use crate::maneuver::DetectionBox;
use crate::synth::LabeledProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub detector: DetectorConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Flip each training sample left-right with probability 1/2, swapping
    /// left and right classes. Only sound when the data is mirror symmetric.
    pub mirror_augment: bool,
    /// Shift each training sample up or down in time by up to a quarter of
    /// the input height, never pushing a ground-truth box out of the window.
    /// Exposed rows repeat the nearest edge row.
    pub shift_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            epochs: 20,
            batch_size: 8,
            adam: AdamHyper::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
            mirror_augment: false,
            shift_augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub detector: Detector<f32>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochLoss>,
}

struct Prepared {
    input: Tensor<f32>,
    boxes: Vec<DetectionBox>,
}

fn prepare(samples: &[LabeledProfile], cfg: &DetectorConfig) -> Result<Vec<Prepared>, NnError> {
    samples
        .iter()
        .map(|s| {
            let sx = cfg.input_width as f64 / s.profile.dims.width as f64;
            let st = cfg.input_height as f64 / s.profile.dims.height as f64;
            let boxes = s
                .ground_truth
                .iter()
                .map(|b| DetectionBox {
                    x_min: b.x_min * sx,
                    x_max: b.x_max * sx,
                    t_min: b.t_min * st,
                    t_max: b.t_max * st,
                    ..*b
                })
                .collect();
            Ok(Prepared {
                input: profile_to_input(&s.profile, cfg)?,
                boxes,
            })
        })
        .collect()
}

fn mirror_input(x: &Tensor<f32>) -> Tensor<f32> {
    let [n, c, h, w] = x.shape();
    let mut out = x.clone();
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out.set(i, ch, y, xx, x.at(i, ch, y, w - 1 - xx));
                }
            }
        }
    }
    out
}

fn shift_rows(x: &Tensor<f32>, dy: isize) -> Tensor<f32> {
    let [n, c, h, w] = x.shape();
    let mut out = x.clone();
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let src = (y as isize - dy).clamp(0, h as isize - 1) as usize;
                for xx in 0..w {
                    out.set(i, ch, y, xx, x.at(i, ch, src, xx));
                }
            }
        }
    }
    out
}

/// Random time shift that keeps every box inside `[0, h]`.
fn draw_shift(rng: &mut ChaCha8Rng, boxes: &[DetectionBox], h: usize) -> isize {
    let quarter = (h / 4) as isize;
    let lo = boxes
        .iter()
        .map(|b| -(b.t_min.floor() as isize))
        .fold(-quarter, isize::max);
    let hi = boxes
        .iter()
        .map(|b| (h as f64 - b.t_max).floor() as isize)
        .fold(quarter, isize::min);
    if lo >= hi {
        0
    } else {
        rng.random_range(lo as i64..=hi as i64) as isize
    }
}

fn augment(
    rng: &mut ChaCha8Rng,
    p: &Prepared,
    cfg: &TrainConfig,
) -> Option<(Tensor<f32>, Vec<DetectionBox>)> {
    let mirror = cfg.mirror_augment && rng.random_bool(0.5);
    let dy = if cfg.shift_augment {
        draw_shift(rng, &p.boxes, cfg.detector.input_height)
    } else {
        0
    };
    if !mirror && dy == 0 {
        return None;
    }
    let mut x = p.input.clone();
    let mut boxes = p.boxes.clone();
    if mirror {
        x = mirror_input(&x);
        boxes = boxes.iter().map(|b| b.mirrored(cfg.detector.input_width)).collect();
    }
    if dy != 0 {
        x = shift_rows(&x, dy);
        for b in &mut boxes {
            b.t_min += dy as f64;
            b.t_max += dy as f64;
        }
    }
    Some((x, boxes))
}

fn batch_loss(
    det: &Detector<f32>,
    items: &[(&Tensor<f32>, Vec<DetectionBox>)],
    cfg: &TrainConfig,
    with_grads: bool,
) -> Result<(f64, Option<super::model::ParamGrads<f32>>), NnError> {
    let layout = cfg.detector.layout();
    let x = Tensor::stack(&items.iter().map(|(x, _)| *x).collect::<Vec<_>>())?;
    let targets: Vec<_> = items.iter().map(|(_, b)| assign_targets(b, &layout)).collect();
    if with_grads {
        let (raw, cache) = det.forward_train(&x)?;
        let (parts, grad) = yolo_loss(&raw, &targets, &layout, &cfg.loss_weights)?;
        Ok((parts.total, Some(det.backward(&cache, &grad)?)))
    } else {
        let raw = det.forward(&x)?;
        let (parts, _) = yolo_loss(&raw, &targets, &layout, &cfg.loss_weights)?;
        Ok((parts.total, None))
    }
}

fn mean_loss(det: &Detector<f32>, data: &[Prepared], cfg: &TrainConfig) -> Result<f64, NnError> {
    let mut total = 0.0;
    for chunk in data.chunks(cfg.batch_size) {
        let items: Vec<_> = chunk.iter().map(|p| (&p.input, p.boxes.clone())).collect();
        total += batch_loss(det, &items, cfg, false)?.0 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Train from `init` (or a fresh network seeded with `cfg.seed`) and return
/// the best-validation weights.
///
/// Deterministic: shuffling, augmentation and initialisation all draw from
/// generators seeded by `cfg.seed`, and the arithmetic is single threaded.
pub fn train(
    train_set: &[LabeledProfile],
    val_set: &[LabeledProfile],
    cfg: &TrainConfig,
    init: Option<Detector<f32>>,
) -> Result<TrainOutcome, NnError> {
    if train_set.is_empty() {
        return Err(NnError::EmptySplit("train".into()));
    }
    if val_set.is_empty() {
        return Err(NnError::EmptySplit("val".into()));
    }
    if cfg.batch_size == 0 {
        return Err(NnError::InvalidConfig("batch size must be positive".into()));
    }
    let mut det = match init {
        Some(d) if d.config != cfg.detector => {
            return Err(NnError::CheckpointMismatch(
                "initial weights were built for a different detector config".into(),
            ))
        }
        Some(d) => d,
        None => Detector::new(cfg.detector.clone(), cfg.seed)?,
    };
    let train_data = prepare(train_set, &cfg.detector)?;
    let val_data = prepare(val_set, &cfg.detector)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut w_state: Vec<_> = det.layers.iter().map(|l| AdamState::new(l.weight.len())).collect();
    let mut b_state: Vec<_> = det.layers.iter().map(|l| AdamState::new(l.bias.len())).collect();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::new();
    let mut best = (det.clone(), 0, f64::INFINITY);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<_> = chunk.iter().map(|&i| augment(&mut rng, &train_data[i], cfg)).collect();
            let items: Vec<_> = chunk
                .iter()
                .zip(&augmented)
                .map(|(&i, a)| match a {
                    Some((x, boxes)) => (x, boxes.clone()),
                    None => (&train_data[i].input, train_data[i].boxes.clone()),
                })
                .collect();
            let (loss, grads) = batch_loss(&det, &items, cfg, true)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = grads.expect("gradients requested");
            for (i, layer) in det.layers.iter_mut().enumerate() {
                adam_step(&mut layer.weight, &grads.weight[i], &mut w_state[i], &cfg.adam, true);
                adam_step(&mut layer.bias, &grads.bias[i], &mut b_state[i], &cfg.adam, false);
            }
            epoch_total += loss * chunk.len() as f64;
        }
        let train_loss = epoch_total / train_data.len() as f64;
        let val_loss = mean_loss(&det, &val_data, cfg)?;
        log::info!("epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}");
        history.push(EpochLoss {
            epoch,
            split: "train".into(),
            loss: train_loss,
        });
        history.push(EpochLoss {
            epoch,
            split: "val".into(),
            loss: val_loss,
        });
        if val_loss < best.2 {
            best = (det.clone(), epoch, val_loss);
        }
    }
    let (detector, best_epoch, best_val_loss) = best;
    Ok(TrainOutcome {
        detector,
        best_epoch,
        best_val_loss,
        history,
    })
}

/// `epoch,split,loss` CSV.
pub fn write_loss_log(path: impl AsRef<Path>, history: &[EpochLoss]) -> Result<(), NnError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,split,loss")?;
    for e in history {
        writeln!(f, "{},{},{}", e.epoch, e.split, e.loss)?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maneuver::{ManeuverClass, ProfileDims};
    use crate::nn::head::Anchor;
    use crate::synth::{render_profile, ManeuverSpec, SceneSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            detector: DetectorConfig {
                input_width: 32,
                input_height: 32,
                channels: vec![4, 8],
                anchors: vec![Anchor { w: 16.0, h: 8.0 }, Anchor { w: 16.0, h: 16.0 }],
                ..DetectorConfig::default()
            },
            epochs: 3,
            batch_size: 2,
            adam: AdamHyper {
                lr: 1e-2,
                ..AdamHyper::default()
            },
            ..TrainConfig::default()
        }
    }

    fn samples(n: usize) -> Vec<LabeledProfile> {
        let dims = ProfileDims::new(32, 32, 1).unwrap();
        (0..n)
            .map(|i| {
                let mut spec = SceneSpec::empty(dims, 16.0);
                spec.maneuvers.push(ManeuverSpec {
                    class: ManeuverClass::ALL[i % 4],
                    t_start: 4,
                    t_end: 20,
                    thickness: 3.0,
                    slope: 0.4,
                    intensity: 230.0,
                });
                let s = render_profile(&spec, i as u64).unwrap();
                LabeledProfile {
                    id: format!("s{i}"),
                    profile: s.profile,
                    ground_truth: s.ground_truth,
                }
            })
            .collect()
    }

    #[test]
    fn empty_splits_rejected() {
        let s = samples(2);
        let err = train(&[], &s, &tiny_cfg(), None).unwrap_err();
        assert!(matches!(err, NnError::EmptySplit(ref n) if n == "train"));
        let err = train(&s, &[], &tiny_cfg(), None).unwrap_err();
        assert!(matches!(err, NnError::EmptySplit(ref n) if n == "val"));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let s = samples(6);
        let mut cfg = tiny_cfg();
        cfg.epochs = 8;
        let a = train(&s, &s[..2], &cfg, None).unwrap();
        let b = train(&s, &s[..2], &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.detector, b.detector);
        let first = a.history.iter().find(|e| e.split == "train").unwrap().loss;
        let last = a.history.iter().rev().find(|e| e.split == "train").unwrap().loss;
        assert!(last < first, "{first} -> {last}");
        assert_eq!(a.history.len(), 16);
        let best = a
            .history
            .iter()
            .filter(|e| e.split == "val")
            .min_by(|x, y| x.loss.total_cmp(&y.loss))
            .unwrap();
        assert_eq!(best.epoch, a.best_epoch);
    }

    #[test]
    fn loss_log_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        let h = vec![EpochLoss {
            epoch: 1,
            split: "train".into(),
            loss: 0.5,
        }];
        write_loss_log(&p, &h).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "epoch,split,loss\n1,train,0.5\n");
    }

    #[test]
    fn init_with_wrong_config_rejected() {
        let s = samples(2);
        let other = Detector::<f32>::new(DetectorConfig::default(), 0).unwrap();
        assert!(matches!(
            train(&s, &s, &tiny_cfg(), Some(other)),
            Err(NnError::CheckpointMismatch(_))
        ));
    }
}

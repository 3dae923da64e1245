//! Subcommand bodies. Each resolves its settings, logs them, runs, and
//! prints a one-line JSON summary (or the artifact itself) on stdout.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use motion_profile::classic::{detect_classic, ClassicParams};
use motion_profile::eval::{evaluate, read_jsonl, EvalConfig};
use motion_profile::ingest::{open_source, VideoManifest};
use motion_profile::maneuver::{DetectionRecord, EventRecord};
use motion_profile::nn::adam::AdamHyper;
use motion_profile::nn::loss::LossWeights;
use motion_profile::nn::train::write_loss_log;
use motion_profile::nn::{
    detect_many, load_checkpoint, save_checkpoint, train, CheckpointHeader, DetectorConfig, InferOptions, TrainConfig,
};
use motion_profile::profile::{build_profile, export_profile, import_profile, BeltOffsets};
use motion_profile::synth::{load_split, make_dataset, DatasetConfig, Split};
use motion_profile::{DetectionBox, ManeuverClass, MotionProfile, ProfileDims};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bench::bench_strip;
use crate::config::{resolve, usage};
use crate::{Command, Method};

pub fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::BuildProfile(a) => run_build_profile(resolve("build-profile", a.config.as_deref(), &a)?),
        Command::Synth(a) => run_synth(resolve("synth", a.config.as_deref(), &a)?),
        Command::Train(a) => run_train(resolve("train", a.config.as_deref(), &a)?),
        Command::Detect(a) => run_detect(resolve("detect", a.config.as_deref(), &a)?),
        Command::Eval(a) => run_eval(resolve("eval", a.config.as_deref(), &a)?),
        Command::Bench(a) => run_bench(resolve("bench", a.config.as_deref(), &a)?),
    }
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> anyhow::Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("--{} is required", name.replace('_', "-"))))
}

fn summary(v: serde_json::Value) {
    println!("{v}");
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildProfileConfig {
    pub manifest: Option<PathBuf>,
    pub belt: String,
    pub channels: usize,
    pub out: Option<PathBuf>,
}

impl Default for BuildProfileConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            belt: "medium".into(),
            channels: 1,
            out: None,
        }
    }
}

fn run_build_profile(c: BuildProfileConfig) -> anyhow::Result<()> {
    let manifest_path = required(&c.manifest, "manifest")?;
    let out = required(&c.out, "out")?;
    let belt: BeltOffsets = c.belt.parse().map_err(usage)?;
    if c.channels != 1 && c.channels != 3 {
        return Err(usage(format!("channels must be 1 or 3, got {}", c.channels)));
    }
    let manifest = VideoManifest::load(manifest_path)?;
    let profile = build_profile(open_source(&manifest)?, belt, c.channels)?;
    export_profile(&profile, out)?;
    summary(json!({
        "out": out,
        "video_id": profile.provenance.video_id,
        "width": profile.dims.width,
        "height": profile.dims.height,
        "channels": profile.dims.channels,
        "belt": profile.provenance.belt,
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub noise_sigma: f64,
    pub max_maneuvers: usize,
    pub class_mix: Vec<f64>,
    pub position_critical: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            count: d.count,
            seed: d.seed,
            out: None,
            width: d.dims.width,
            height: d.dims.height,
            noise_sigma: d.noise_sigma,
            max_maneuvers: d.max_maneuvers,
            class_mix: d.class_mix.to_vec(),
            position_critical: d.position_critical,
        }
    }
}

fn run_synth(c: SynthConfig) -> anyhow::Result<()> {
    let out = required(&c.out, "out")?;
    if c.count == 0 {
        return Err(usage("count must be >= 1"));
    }
    let class_mix: [f64; 4] = c
        .class_mix
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("class_mix needs 4 weights, got {}", c.class_mix.len())))?;
    let dims = ProfileDims::new(c.width, c.height, 1).map_err(|e| usage(e.to_string()))?;
    if !(c.noise_sigma >= 0.0) {
        return Err(usage("noise_sigma must be >= 0"));
    }
    let cfg = DatasetConfig {
        count: c.count,
        dims,
        class_mix,
        seed: c.seed,
        noise_sigma: c.noise_sigma,
        max_maneuvers: c.max_maneuvers,
        position_critical: c.position_critical,
    };
    let index = make_dataset(&cfg, out)?;
    summary(json!({
        "out": out,
        "train": index.split_ids(Split::Train).len(),
        "val": index.split_ids(Split::Val).len(),
        "test": index.split_ids(Split::Test).len(),
        "warnings": index.warnings,
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub coordconv: bool,
    pub mirror_augment: bool,
    pub shift_augment: bool,
    pub ignore_iou: Option<f64>,
    /// Architecture; `coordconv` above overrides its flag.
    pub detector: Option<DetectorConfig>,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: None,
            out: None,
            loss_log: None,
            init: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            weight_decay: t.adam.weight_decay,
            seed: t.seed,
            coordconv: t.detector.coordconv,
            mirror_augment: t.mirror_augment,
            shift_augment: t.shift_augment,
            ignore_iou: t.loss_weights.ignore_iou,
            detector: None,
        }
    }
}

fn run_train(c: TrainCliConfig) -> anyhow::Result<()> {
    let data = required(&c.data, "data")?;
    let out = required(&c.out, "out")?;
    if c.epochs == 0 || c.batch_size == 0 {
        return Err(usage("epochs and batch_size must be >= 1"));
    }
    if !(c.lr > 0.0) || !(c.weight_decay >= 0.0) {
        return Err(usage("lr must be > 0 and weight_decay >= 0"));
    }
    if let Some(t) = c.ignore_iou {
        if !(0.0..=1.0).contains(&t) {
            return Err(usage(format!("ignore_iou must lie in [0, 1], got {t}")));
        }
    }
    let mut detector = c.detector.clone().unwrap_or_default();
    detector.coordconv = c.coordconv;

    let init = match &c.init {
        Some(p) => {
            let (mut det, _) = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if !det.config.coordconv && c.coordconv {
                log::info!("inflating plain-conv checkpoint {} to CoordConv", p.display());
                det = det.inflate();
            }
            if c.detector.is_none() {
                detector = det.config.clone();
            }
            Some(det)
        }
        None => None,
    };

    let cfg = TrainConfig {
        detector,
        epochs: c.epochs,
        batch_size: c.batch_size,
        adam: AdamHyper {
            lr: c.lr,
            weight_decay: c.weight_decay,
            ..AdamHyper::default()
        },
        loss_weights: LossWeights {
            ignore_iou: c.ignore_iou,
            ..LossWeights::default()
        },
        seed: c.seed,
        mirror_augment: c.mirror_augment,
        shift_augment: c.shift_augment,
    };
    cfg.detector.validate().map_err(|e| usage(e.to_string()))?;
    let train_set = load_split(data, Split::Train)?;
    let val_set = load_split(data, Split::Val)?;
    log::info!("{} training and {} validation samples", train_set.len(), val_set.len());
    let outcome = train(&train_set, &val_set, &cfg, init)?;

    let mut header = CheckpointHeader::for_detector(&outcome.detector, c.seed);
    header.best_epoch = Some(outcome.best_epoch);
    header.best_val_loss = Some(outcome.best_val_loss);
    save_checkpoint(out, &outcome.detector, &header)?;
    let log_path = c.loss_log.clone().unwrap_or_else(|| out.with_extension("loss.csv"));
    write_loss_log(&log_path, &outcome.history)?;
    summary(json!({
        "out": out,
        "loss_log": log_path,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "parameter_count": header.parameter_count,
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub method: Method,
    pub checkpoint: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: String,
    pub profiles: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub conf: f64,
    pub nms: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let o = InferOptions::default();
        Self {
            method: Method::Neural,
            checkpoint: None,
            params: None,
            data: None,
            split: "test".into(),
            profiles: Vec::new(),
            out: None,
            conf: o.conf_thresh,
            nms: o.nms_thresh,
        }
    }
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(usage(format!("unknown split `{other}`; use train, val or test"))),
    }
}

/// `(video id, profile)` pairs from `--data`/`--split` and every `--profile`.
fn gather_profiles(c: &DetectConfig) -> anyhow::Result<Vec<(String, MotionProfile)>> {
    let mut out = Vec::new();
    if let Some(dir) = &c.data {
        for s in load_split(dir, parse_split(&c.split)?)? {
            out.push((s.id, s.profile));
        }
    }
    for p in &c.profiles {
        let profile = import_profile(p).with_context(|| format!("reading {}", p.display()))?;
        out.push((profile.provenance.video_id.clone(), profile));
    }
    if out.is_empty() && c.data.is_none() {
        return Err(usage("nothing to detect on: give --data or --profile"));
    }
    Ok(out)
}

fn run_detect(c: DetectConfig) -> anyhow::Result<()> {
    for (name, v) in [("conf", c.conf), ("nms", c.nms)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let profiles = gather_profiles(&c)?;
    let boxes: Vec<Vec<DetectionBox>> = match c.method {
        Method::Neural => {
            let path = required(&c.checkpoint, "checkpoint")?;
            let (det, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            let opts = InferOptions {
                conf_thresh: c.conf,
                nms_thresh: c.nms,
            };
            detect_many(&det, &profiles.iter().map(|(_, p)| p).collect::<Vec<_>>(), &opts)?
        }
        Method::Classic => {
            let params: ClassicParams = match &c.params {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => ClassicParams::default(),
            };
            params.validate().map_err(|e| usage(e.to_string()))?;
            profiles
                .iter()
                .map(|(_, p)| detect_classic(p, p.provenance.v_x, &params))
                .collect::<Result<_, _>>()?
        }
    };
    let mut text = String::new();
    let mut count = 0;
    for ((id, _), dets) in profiles.iter().zip(&boxes) {
        for b in dets {
            text.push_str(&serde_json::to_string(&DetectionRecord::from_box(id, b))?);
            text.push('\n');
            count += 1;
        }
    }
    write_or_print(c.out.as_deref(), &text)?;
    log::info!("{count} detections over {} profiles", profiles.len());
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalCliConfig {
    pub dets: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub iou: f64,
    pub conf: f64,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub classes: Option<Vec<String>>,
    pub dataset: String,
}

impl Default for EvalCliConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            dets: None,
            gt: None,
            iou: e.iou_thresh,
            conf: e.conf_thresh,
            out: None,
            csv: None,
            classes: None,
            dataset: e.dataset,
        }
    }
}

fn run_eval(c: EvalCliConfig) -> anyhow::Result<()> {
    let dets_path = required(&c.dets, "dets")?;
    let gt_path = required(&c.gt, "gt")?;
    for (name, v) in [("iou", c.iou), ("conf", c.conf)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let classes = match &c.classes {
        Some(names) => names
            .iter()
            .map(|n| n.trim().parse::<ManeuverClass>().map_err(|e| usage(e.to_string())))
            .collect::<anyhow::Result<Vec<_>>>()?,
        None => ManeuverClass::ALL.to_vec(),
    };
    let dets: Vec<DetectionRecord> = read_jsonl(dets_path)?;
    let gts: Vec<EventRecord> = read_jsonl(gt_path)?;
    let cfg = EvalConfig {
        iou_thresh: c.iou,
        conf_thresh: c.conf,
        classes,
        dataset: c.dataset.clone(),
    };
    let report = evaluate(&dets, &gts, &cfg)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let mut text = report.to_json();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    write_or_print(c.out.as_deref(), &text)?;
    if let Some(p) = &c.csv {
        std::fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub width: usize,
    pub belt_height: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 1280,
            belt_height: 65,
            iterations: 1000,
            warmup: 50,
            seed: 0,
            out: None,
        }
    }
}

fn run_bench(c: BenchConfig) -> anyhow::Result<()> {
    let report = bench_strip(c.width, c.belt_height, c.iterations, c.warmup, c.seed).map_err(usage)?;
    let text = serde_json::to_string(&report)?;
    if let Some(p) = &c.out {
        std::fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{text}");
    log::info!(
        "mean {:.4} ms, p95 {:.4} ms per strip: {:.1}% of the {:.2} ms frame budget",
        report.mean_ms,
        report.p95_ms,
        100.0 * report.budget_ratio,
        report.budget_ms
    );
    Ok(())
}

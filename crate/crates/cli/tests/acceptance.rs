//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! `ACCEPTANCE_ONLY=6,7` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use motion_profile::classic::{detect_classic, ClassicParams};
use motion_profile::eval::{evaluate_boxes, f1_score, mean_ap, EvalConfig};
use motion_profile::ingest::{open_source, SourceKind, VideoManifest};
use motion_profile::nn::conv::{inflate_weights, ConvLayer};
use motion_profile::nn::gradcheck::{conv_case, detector_case, leaky_relu_case, yolo_loss_case};
use motion_profile::nn::infer::{detect_many, InferOptions};
use motion_profile::nn::{train, Detector, DetectorConfig, Tensor, TrainConfig};
use motion_profile::profile::{build_profile, BeltOffsets};
use motion_profile::synth::{load_split, make_dataset, render_profile, DatasetConfig, LabeledProfile, ManeuverSpec, SceneSpec, Split};
use motion_profile::{event_to_bbox, DetectionBox, ManeuverClass, ManeuverEvent, ProfileDims, VanishingPoint};
use motion_profile_cli::bench_strip;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1. Streaming profiles against a brute-force belt mean.

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut videos = Vec::new();
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = [BeltOffsets::FAR, BeltOffsets::MEDIUM, BeltOffsets::CLOSE][seed as usize % 3];
        let (w, h, n) = (
            rng.random_range(64..=160usize),
            rng.random_range(64.max(offsets.lo + 1)..=260usize),
            rng.random_range(30..=60usize),
        );
        let v_y = rng.random_range(0..h - offsets.lo);
        let frames: Vec<u8> = (0..w * h * n).map(|_| rng.random()).collect();
        let name = format!("v{seed}.raw");
        std::fs::write(dir.path().join(&name), &frames).map_err(|e| e.to_string())?;
        let manifest = VideoManifest {
            id: format!("v{seed}"),
            source: SourceKind::RawFile(name.into()),
            width: w,
            height: h,
            fps: 30.0,
            num_frames: n,
            vanishing_point: VanishingPoint {
                x: rng.random_range(0.0..w as f64),
                y: v_y as f64,
            },
            events: vec![],
            base_dir: Some(dir.path().to_path_buf()),
        };
        videos.push((manifest, frames, offsets));
    }
    let start = Instant::now();
    let mut mismatches = 0;
    for (m, frames, offsets) in &videos {
        let p = build_profile(open_source(m).map_err(|e| e.to_string())?, *offsets, 1).map_err(|e| e.to_string())?;
        let (w, h) = (m.width, m.height);
        let v_y = m.vanishing_point.y as usize;
        let rows: Vec<usize> = (v_y + offsets.lo..v_y + offsets.hi).filter(|&r| r < h).collect();
        let mut oracle = Vec::with_capacity(w * m.num_frames);
        for f in 0..m.num_frames {
            let frame = &frames[f * w * h..(f + 1) * w * h];
            for x in 0..w {
                let mean = rows.iter().map(|&r| frame[r * w + x] as f64).sum::<f64>() / rows.len() as f64;
                oracle.push((mean + 0.5).floor() as u8);
            }
        }
        if p.data != oracle {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(mismatches == 0 && secs < 5.0, format!("50 videos, {mismatches} mismatched, {secs:.2} s"))
}

// 2. Hand-worked event boxes.

#[derive(serde::Deserialize)]
struct Fixture {
    class: String,
    t_start: usize,
    t_end: usize,
    v_x: f64,
    width: usize,
    height: usize,
    expected: [f64; 4],
}

fn criterion_2() -> Outcome {
    let fixtures: Vec<Fixture> =
        serde_json::from_str(include_str!("../../core/tests/fixtures/event_to_bbox.json")).map_err(|e| e.to_string())?;
    let mut wrong = Vec::new();
    for (i, f) in fixtures.iter().enumerate() {
        let class: ManeuverClass = f.class.parse().map_err(|e| format!("{e:?}"))?;
        let dims = ProfileDims::new(f.width, f.height, 1).map_err(|e| e.to_string())?;
        let e = ManeuverEvent::new(class, f.t_start, f.t_end).map_err(|e| e.to_string())?;
        let b = event_to_bbox(&e, f.v_x, dims).map_err(|e| e.to_string())?;
        if [b.x_min, b.t_min, b.x_max, b.t_max] != f.expected || b.class != class {
            wrong.push(i);
        }
    }
    check(fixtures.len() == 20 && wrong.is_empty(), format!("{} fixtures, wrong: {wrong:?}", fixtures.len()))
}

// 3. Backward passes against finite differences.

fn criterion_3() -> Outcome {
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let worst = |f: &dyn Fn(u64) -> f64, seeds: std::ops::Range<u64>| seeds.map(f).fold(0.0f64, f64::max);
    let conv = worst(&|s| conv_case(s, false), 0..10);
    let coord = worst(&|s| conv_case(s, true), 100..110);
    let leaky = worst(&leaky_relu_case, 0..10);
    let yolo = worst(&yolo_loss_case, 0..10);
    let net = [(1u64, false), (2, true), (3, true)].iter().map(|&(s, c)| detector_case(s, c)).fold(0.0f64, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let all = [conv, coord, leaky, yolo, net];
    check(
        all.iter().all(|&e| e <= TOL) && secs < 60.0,
        format!("max rel err conv {conv:.1e}, coordconv {coord:.1e}, leaky {leaky:.1e}, yolo {yolo:.1e}, detector {net:.1e}; {secs:.1} s"),
    )
}

// 4. Weight inflation.

fn criterion_4() -> Outcome {
    let mut exact = true;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, inp) = (rng.random_range(1..=6), rng.random_range(1..=8));
        let mut l = ConvLayer::<f64>::zeros(out, inp, 3, 1, 1, false);
        l.weight.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let c = inflate_weights(&l);
        for o in 0..out {
            for p in 0..9 {
                let mean = (0..inp).map(|i| l.weight[(o * inp + i) * 9 + p]).sum::<f64>() / inp as f64;
                for extra in [inp, inp + 1] {
                    exact &= c.weight[(o * (inp + 2) + extra) * 9 + p] == mean;
                }
                for i in 0..inp {
                    exact &= c.weight[(o * (inp + 2) + i) * 9 + p] == l.weight[(o * inp + i) * 9 + p];
                }
            }
        }
    }
    let plain = Detector::<f32>::new(DetectorConfig::plain(), 5).map_err(|e| e.to_string())?;
    let x = Tensor::<f32>::zeros([1, 1, 256, 256]);
    let a = plain.forward(&x).map_err(|e| e.to_string())?.shape();
    let b = plain.inflate().forward(&x).map_err(|e| e.to_string())?.shape();
    check(exact && a == b, format!("slices exact: {exact}; output {a:?} -> {b:?}"))
}

// 5. Metric arithmetic against the published tables.

fn criterion_5() -> Outcome {
    // Both means land exactly on a half unit; the 1e-12 absorbs binary
    // rounding of the inputs.
    let a = mean_ap(&[0.391, 0.400, 0.402, 0.225]);
    let b = mean_ap(&[0.511, 0.398, 0.254, 0.075]);
    let f = f1_score(0.95, 0.64);
    let g = f1_score(0.82, 0.70);
    let tol = 0.0005 + 1e-12;
    check(
        (a - 0.354).abs() <= tol && (b - 0.310).abs() <= tol && (f - 0.76).abs() <= 0.005 && (g - 0.76).abs() <= 0.005,
        format!("mAP {a:.4} {b:.4}; F1 {f:.4} {g:.4}"),
    )
}

// 6. End-to-end training on synthetic profiles.

fn dataset(count: usize, seed: u64, position_critical: bool) -> Result<(tempfile::TempDir, [Vec<LabeledProfile>; 3]), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = DatasetConfig {
        count,
        seed,
        position_critical,
        ..DatasetConfig::default()
    };
    make_dataset(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let load = |s| load_split(dir.path(), s).map_err(|e| e.to_string());
    let splits = [load(Split::Train)?, load(Split::Val)?, load(Split::Test)?];
    Ok((dir, splits))
}

fn test_map(det: &Detector<f32>, test: &[LabeledProfile], classes: &[ManeuverClass]) -> Result<f64, String> {
    let refs: Vec<_> = test.iter().map(|s| &s.profile).collect();
    let found = detect_many(det, &refs, &InferOptions::default()).map_err(|e| e.to_string())?;
    let dets: BTreeMap<String, Vec<DetectionBox>> = test.iter().zip(found).map(|(s, d)| (s.id.clone(), d)).collect();
    let gts: BTreeMap<String, Vec<DetectionBox>> = test.iter().map(|s| (s.id.clone(), s.ground_truth.clone())).collect();
    let cfg = EvalConfig {
        classes: classes.to_vec(),
        ..EvalConfig::default()
    };
    Ok(evaluate_boxes(&dets, &gts, &cfg).map)
}

fn criterion_6() -> Outcome {
    let (_dir, [tr, va, te]) = dataset(334, 7, false)?;
    let mut cfg = TrainConfig {
        batch_size: 2,
        mirror_augment: true,
        shift_augment: true,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    cfg.loss_weights.ignore_iou = Some(0.5);
    let start = Instant::now();
    let out = train(&tr, &va, &cfg, None).map_err(|e| e.to_string())?;
    let map = test_map(&out.detector, &te[..50], &ManeuverClass::ALL)?;
    let elapsed = start.elapsed();
    check(
        map >= 0.80 && elapsed <= Duration::from_secs(30 * 60),
        format!("{} train / 50 test, mAP@0.3 {map:.3} (need 0.80), {:.0} s", tr.len(), elapsed.as_secs_f64()),
    )
}

// 7. CoordConv against plain convolution where only position separates classes.

fn criterion_7() -> Outcome {
    let (_dir, [tr, va, te]) = dataset(334, 7, true)?;
    let overtakes = [ManeuverClass::OvertakeRight, ManeuverClass::OvertakeLeft];
    let mut means = [0.0; 2];
    let mut runs = Vec::new();
    for (k, coordconv) in [true, false].into_iter().enumerate() {
        for seed in 0..3 {
            let mut cfg = TrainConfig {
                batch_size: 2,
                seed,
                shift_augment: true,
                ..TrainConfig::default()
            };
            cfg.detector.coordconv = coordconv;
            cfg.loss_weights.ignore_iou = Some(0.5);
            let out = train(&tr, &va, &cfg, None).map_err(|e| e.to_string())?;
            let map = test_map(&out.detector, &te[..50], &overtakes)?;
            runs.push(format!("{map:.2}"));
            means[k] += map / 3.0;
        }
    }
    let gap = means[0] - means[1];
    check(
        gap >= 0.05,
        format!("CoordConv {:.3} vs plain {:.3}, gap {gap:.3} (need 0.05); runs {}", means[0], means[1], runs.join(" ")),
    )
}

// 8. Classic baseline sanity.

fn overtake_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = ProfileDims::new(256, 256, 1).expect("valid dims");
    let v_x = rng.random_range(108.0f64..148.0).round();
    let mut spec = SceneSpec::empty(dims, v_x);
    spec.noise_sigma = 0.0;
    let len = rng.random_range(41..=110);
    let t_start = rng.random_range(0..=256 - len);
    spec.maneuvers.push(ManeuverSpec {
        class: if rng.random_bool(0.5) { ManeuverClass::OvertakeLeft } else { ManeuverClass::OvertakeRight },
        t_start,
        t_end: t_start + len,
        thickness: rng.random_range(6.0..12.0),
        slope: rng.random_range(0.2..0.6),
        intensity: rng.random_range(200.0..240.0),
    });
    spec
}

fn criterion_8() -> Outcome {
    let params = ClassicParams::default();
    let mut dets = BTreeMap::new();
    let mut gts = BTreeMap::new();
    let mut mirror_ok = true;
    for seed in 0..20 {
        let spec = overtake_scene(seed);
        let s = render_profile(&spec, seed).map_err(|e| e.to_string())?;
        let found = detect_classic(&s.profile, spec.v_x, &params).map_err(|e| e.to_string())?;
        let m = s.profile.mirrored();
        let mut a: Vec<DetectionBox> = found.iter().map(|d| d.mirrored(256)).collect();
        let mut b = detect_classic(&m, m.provenance.v_x, &params).map_err(|e| e.to_string())?;
        let key = |d: &DetectionBox| (d.class.code(), d.t_min as i64);
        a.sort_by_key(key);
        b.sort_by_key(key);
        mirror_ok &= a == b;
        dets.insert(seed.to_string(), found);
        gts.insert(seed.to_string(), s.ground_truth);
    }
    let cfg = EvalConfig {
        classes: vec![ManeuverClass::OvertakeRight, ManeuverClass::OvertakeLeft],
        ..EvalConfig::default()
    };
    let r = evaluate_boxes(&dets, &gts, &cfg);
    let f1: Vec<String> = r.per_class.iter().map(|c| format!("{} {:.3}", c.class, c.f1)).collect();
    let mut silent = true;
    for level in [0u8, 37, 128, 255] {
        let dims = ProfileDims::new(256, 256, 1).expect("valid dims");
        let mut p = render_profile(&SceneSpec::empty(dims, 128.0), 0).map_err(|e| e.to_string())?.profile;
        p.data.iter_mut().for_each(|v| *v = level);
        silent &= detect_classic(&p, 128.0, &params).map_err(|e| e.to_string())?.is_empty();
    }
    check(
        r.per_class.iter().all(|c| c.f1 == 1.0) && silent && mirror_ok,
        format!("F1 {}; uniform silent: {silent}; mirror equivariant: {mirror_ok}", f1.join(", ")),
    )
}

// 9. Strip extraction latency.

fn criterion_9() -> Outcome {
    let r = bench_strip(1280, 65, 1000, 50, 0)?;
    check(
        r.mean_ms <= 5.0,
        format!("mean {:.4} ms, p95 {:.4} ms, {:.3} of the 60 fps budget", r.mean_ms, r.p95_ms, r.budget_ratio),
    )
}

// 10. Two identical command-line pipelines, compared byte for byte.

fn pipeline(root: &Path) -> Result<(), String> {
    let s = |p: &str| root.join(p).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--count".into(), "15".into(), "--seed".into(), "5".into(), "--out".into(), s("data")],
        vec![
            "train".into(), "--data".into(), s("data"), "--out".into(), s("model.ckpt"), "--epochs".into(), "2".into(),
            "--batch-size".into(), "4".into(), "--seed".into(), "1".into(), "--mirror-augment".into(), "--shift-augment".into(),
            "--ignore-iou".into(), "0.5".into(),
        ],
        vec![
            "detect".into(), "--checkpoint".into(), s("model.ckpt"), "--data".into(), s("data"), "--split".into(), "test".into(),
            "--conf".into(), "0.01".into(), "--out".into(), s("neural.jsonl"),
        ],
        vec!["detect".into(), "--method".into(), "classic".into(), "--data".into(), s("data"), "--out".into(), s("classic.jsonl")],
        vec![
            "eval".into(), "--dets".into(), s("neural.jsonl"), "--gt".into(), s("data/gt_test.jsonl"), "--out".into(), s("report.json"),
            "--csv".into(), s("report.csv"),
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_mprof"))
            .args(&args)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()));
        }
    }
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap_or_default());
            }
        }
    }
    files
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    check(
        ta.len() == tb.len() && differing.is_empty(),
        format!("{} output files, differing: {differing:?}", ta.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "profile oracle", criterion_1),
        (2, "event boxes", criterion_2),
        (3, "gradients", criterion_3),
        (4, "weight inflation", criterion_4),
        (5, "metric arithmetic", criterion_5),
        (6, "end-to-end mAP", criterion_6),
        (7, "CoordConv ablation", criterion_7),
        (8, "classic baseline", criterion_8),
        (9, "strip latency", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Synthetic motion profiles with ground-truth maneuver boxes.
//!
//! The renderer is stylized. Lane markings are near-vertical bright curves
//! with a slow lateral drift; a lane change shears every curve sideways by
//! `W/8`; an overtake is a bright band that leaves the vanishing point and
//! bends out to the image edge. Ground truth always comes from
//! [`event_to_bbox`], never from the renderer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maneuver::{
    event_to_bbox, DetectionBox, EventRecord, GeometryError, ManeuverClass, ManeuverEvent,
    ProfileDims,
};
use crate::profile::{export_profile, import_profile, MotionProfile, ProfileError, Provenance};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("maneuvers {0} and {1} are on the same side and overlap in time")]
    OverlapUnrenderable(usize, usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset index: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// Number of lane-marking curves across the width; 0 for a flat background.
    pub curves: usize,
    pub base_intensity: f64,
    pub curve_intensity: f64,
    /// Peak lateral drift of the curves, in columns.
    pub drift_amplitude: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            curves: 4,
            base_intensity: 60.0,
            curve_intensity: 150.0,
            drift_amplitude: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSpec {
    pub class: ManeuverClass,
    pub t_start: usize,
    pub t_end: usize,
    /// Band width in columns (overtakes only).
    pub thickness: f64,
    /// Initial lateral speed of the band, columns per row (overtakes only).
    pub slope: f64,
    /// Band brightness (overtakes only).
    pub intensity: f64,
}

/// How right-side maneuvers are drawn relative to their left counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RightSide {
    /// Exact left-right mirror of the left renderer.
    #[default]
    Mirror,
    /// The left pattern shifted right by `v_x` columns, so left and right
    /// classes differ only in where they appear.
    Translate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: ProfileDims,
    pub v_x: f64,
    pub background: Background,
    pub noise_sigma: f64,
    pub maneuvers: Vec<ManeuverSpec>,
    #[serde(default)]
    pub right_side: RightSide,
}

impl SceneSpec {
    pub fn empty(dims: ProfileDims, v_x: f64) -> Self {
        Self {
            dims,
            v_x,
            background: Background::default(),
            noise_sigma: 0.0,
            maneuvers: Vec::new(),
            right_side: RightSide::Mirror,
        }
    }

    pub fn events(&self) -> Vec<ManeuverEvent> {
        self.maneuvers
            .iter()
            .map(|m| ManeuverEvent {
                class: m.class,
                t_start: m.t_start,
                t_end: m.t_end,
            })
            .collect()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let (w, t) = (self.dims.width as f64, self.dims.height);
        if !(self.v_x > 0.0 && self.v_x < w) {
            return Err(SynthError::InvalidSpec(format!("v_x {} outside (0, {w})", self.v_x)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(SynthError::InvalidSpec("noise_sigma must be >= 0".into()));
        }
        for (i, m) in self.maneuvers.iter().enumerate() {
            if m.t_start >= m.t_end || m.t_end > t {
                return Err(SynthError::InvalidSpec(format!(
                    "maneuver {i} interval [{}, {}) outside [0, {t})",
                    m.t_start, m.t_end
                )));
            }
            if !(m.thickness >= 1.0) {
                return Err(SynthError::InvalidSpec(format!("maneuver {i} thickness < 1")));
            }
            if !(0.0..=255.0).contains(&m.intensity) || !m.slope.is_finite() {
                return Err(SynthError::InvalidSpec(format!("maneuver {i} intensity/slope out of range")));
            }
        }
        for (i, a) in self.maneuvers.iter().enumerate() {
            for (j, b) in self.maneuvers.iter().enumerate().skip(i + 1) {
                let overlap = a.t_start < b.t_end && b.t_start < a.t_end;
                if overlap && a.class.is_left() == b.class.is_left() {
                    return Err(SynthError::OverlapUnrenderable(i, j));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub profile: MotionProfile,
    pub ground_truth: Vec<DetectionBox>,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Anti-aliased box of width `thickness` centered on `center`, sampled at `x`.
fn band(x: f64, center: f64, thickness: f64) -> f64 {
    (0.5 * thickness + 0.5 - (x - center).abs()).clamp(0.0, 1.0)
}

/// Center of a left-side overtake band at row `t`, or `None` outside the event.
fn overtake_center(m: &ManeuverSpec, v_x: f64, t: usize) -> Option<f64> {
    if t < m.t_start || t >= m.t_end {
        return None;
    }
    let len = (m.t_end - m.t_start) as f64;
    let u = (t - m.t_start) as f64 / (len - 1.0).max(1.0);
    let reach = v_x;
    let linear = (m.slope.abs() * len).min(reach);
    let d = linear * u + (reach - linear) * u * u;
    Some(v_x - d)
}

/// Lateral shift of the lane markings at row `t`.
fn lane_offset(spec: &SceneSpec, drift_phase: f64, t: usize) -> f64 {
    let w = spec.dims.width as f64;
    let drift = spec.background.drift_amplitude
        * (2.0 * std::f64::consts::PI * t as f64 / spec.dims.height.max(1) as f64 * 1.5 + drift_phase)
            .sin();
    let shear: f64 = spec
        .maneuvers
        .iter()
        .filter(|m| m.class.is_lane_change())
        .map(|m| {
            // Ego moving left makes the scene slide right.
            let sign = if m.class.is_left() { 1.0 } else { -1.0 };
            let u = (t as f64 - m.t_start as f64) / (m.t_end - m.t_start) as f64;
            sign * w / 8.0 * smoothstep(u)
        })
        .sum();
    drift + shear
}

/// Render a profile and its ground truth. Deterministic in `(spec, seed)`.
pub fn render_profile(spec: &SceneSpec, seed: u64) -> Result<SynthSample, SynthError> {
    spec.validate()?;
    let (w, h, c) = (spec.dims.width, spec.dims.height, spec.dims.channels);
    let wf = w as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drift_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut canvas = vec![spec.background.base_intensity; w * h];

    let bg = &spec.background;
    if bg.curves > 0 {
        let spacing = wf / bg.curves as f64;
        for t in 0..h {
            let origin = spec.v_x + 0.5 * spacing + lane_offset(spec, drift_phase, t);
            let row = &mut canvas[t * w..(t + 1) * w];
            for (x, px) in row.iter_mut().enumerate() {
                let xc = x as f64 + 0.5;
                let k = ((xc - origin) / spacing).round();
                let nearest = origin + k * spacing;
                *px += bg.curve_intensity * band(xc, nearest, 3.0);
            }
        }
    }

    for m in spec.maneuvers.iter().filter(|m| m.class.is_overtake()) {
        let left = m.class == ManeuverClass::OvertakeLeft;
        for t in m.t_start..m.t_end {
            let row = &mut canvas[t * w..(t + 1) * w];
            for (x, px) in row.iter_mut().enumerate() {
                // Sample the left-side pattern in the frame it would be drawn in.
                let (col, v_x) = match (left, spec.right_side) {
                    (true, _) => (x as f64, spec.v_x),
                    (false, RightSide::Mirror) => ((w - 1 - x) as f64, wf - spec.v_x),
                    (false, RightSide::Translate) => (x as f64 - spec.v_x.round(), spec.v_x),
                };
                if col < 0.0 {
                    continue;
                }
                if let Some(center) = overtake_center(m, v_x, t) {
                    let a = band(col + 0.5, center, m.thickness);
                    if a > 0.0 {
                        *px = *px * (1.0 - a) + m.intensity * a;
                    }
                }
            }
        }
    }

    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma is finite and positive"));
    let mut data = Vec::with_capacity(w * h * c);
    for &v in &canvas {
        for _ in 0..c {
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            data.push((v + n).round().clamp(0.0, 255.0) as u8);
        }
    }

    let events = spec.events();
    let ground_truth = events
        .iter()
        .map(|e| event_to_bbox(e, spec.v_x, spec.dims))
        .collect::<Result<Vec<_>, _>>()?;
    let profile = MotionProfile::new(
        spec.dims,
        data,
        Provenance {
            video_id: format!("synth-{seed}"),
            belt: None,
            v_x: spec.v_x,
            fps: Some(30.0),
            events,
        },
    );
    Ok(SynthSample {
        profile,
        ground_truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub dims: ProfileDims,
    /// Relative class weights in `ManeuverClass` code order.
    pub class_mix: [f64; 4],
    pub seed: u64,
    pub noise_sigma: f64,
    pub max_maneuvers: usize,
    /// Overtakes only, flat background, right-side patterns translated
    /// rather than mirrored: side is the only cue separating the classes.
    pub position_critical: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 100,
            dims: ProfileDims {
                width: 256,
                height: 256,
                channels: 1,
            },
            class_mix: [1.0; 4],
            seed: 0,
            noise_sigma: 6.0,
            max_maneuvers: 2,
            position_critical: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub file: String,
    pub split: Split,
    pub classes: Vec<ManeuverClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub config: DatasetConfig,
    pub samples: Vec<IndexEntry>,
    pub splits: BTreeMap<Split, Vec<String>>,
    pub class_stats: BTreeMap<ManeuverClass, usize>,
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(dir.as_ref().join("index.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }
}

/// Split sizes `round(0.6 n)`, `round(0.2 n)` and the remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = ((n as f64) * 0.6).round() as usize;
    let val = (((n as f64) * 0.2).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Per-sample seed derived from the dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pick_class(rng: &mut ChaCha8Rng, mix: &[f64; 4]) -> ManeuverClass {
    let total: f64 = mix.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, &p) in mix.iter().enumerate() {
        if r < p {
            return ManeuverClass::from_code(i).unwrap();
        }
        r -= p;
    }
    ManeuverClass::from_code(mix.iter().rposition(|&p| p > 0.0).unwrap_or(0)).unwrap()
}

/// Draw a random scene for sample `index` of a dataset.
pub fn random_scene(config: &DatasetConfig, index: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, index) ^ 0x5CE2E);
    let dims = config.dims;
    let (w, t) = (dims.width as f64, dims.height);
    let mut mix = config.class_mix;
    let v_x = if config.position_critical {
        mix[ManeuverClass::LaneLeft.code()] = 0.0;
        mix[ManeuverClass::LaneRight.code()] = 0.0;
        (w / 2.0).round()
    } else {
        (w * rng.random_range(0.42..0.58)).round()
    };

    let n = rng.random_range(1..=config.max_maneuvers.max(1));
    let min_len = (t as f64 * 0.16).round().max(2.0) as usize;
    let max_len = ((t as f64 * 0.43).round() as usize).max(min_len + 1);
    let gap = (t / 32).max(1);
    let mut lens: Vec<usize> = (0..n).map(|_| rng.random_range(min_len..=max_len)).collect();
    while lens.iter().sum::<usize>() + gap * (lens.len() - 1) > t && lens.len() > 1 {
        lens.pop();
    }
    lens[0] = lens[0].min(t);
    let slack = t - (lens.iter().sum::<usize>() + gap * (lens.len() - 1));
    let mut cuts: Vec<usize> = (0..=lens.len()).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let mut maneuvers = Vec::with_capacity(lens.len());
    let mut cursor = 0;
    for (i, &len) in lens.iter().enumerate() {
        let start = cursor + if i == 0 { cuts[0] } else { cuts[i] - cuts[i - 1] };
        let class = pick_class(&mut rng, &mix);
        maneuvers.push(ManeuverSpec {
            class,
            t_start: start,
            t_end: start + len,
            thickness: rng.random_range(6.0..12.0),
            slope: rng.random_range(0.2..0.6),
            intensity: rng.random_range(200.0..240.0),
        });
        cursor = start + len + gap;
    }

    let background = if config.position_critical {
        Background {
            curves: 0,
            ..Background::default()
        }
    } else {
        Background {
            curves: rng.random_range(3..=5),
            base_intensity: rng.random_range(40.0..80.0),
            curve_intensity: rng.random_range(120.0..170.0),
            drift_amplitude: rng.random_range(0.0..6.0),
        }
    };
    SceneSpec {
        dims,
        v_x,
        background,
        noise_sigma: config.noise_sigma,
        maneuvers,
        right_side: if config.position_critical {
            RightSide::Translate
        } else {
            RightSide::Mirror
        },
    }
}

fn stratum(classes: &[ManeuverClass]) -> String {
    let mut names: Vec<&str> = classes.iter().map(|c| c.short()).collect();
    names.sort_unstable();
    names.dedup();
    names.join("+")
}

/// Assign splits so that every class-presence stratum is spread evenly over
/// train, val and test.
fn assign_splits(entries: &mut [IndexEntry], seed: u64) {
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        strata.entry(stratum(&e.classes)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5B17);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(entries.len());
    for members in strata.values_mut() {
        rand::seq::SliceRandom::shuffle(&mut members[..], &mut rng);
        let n = members.len() as f64;
        for (rank, &i) in members.iter().enumerate() {
            order.push(((rank as f64 + 0.5) / n, i));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (train, val, _) = split_counts(entries.len());
    for (pos, &(_, i)) in order.iter().enumerate() {
        entries[i].split = if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
}

/// Render `config.count` samples into `out_dir` and write `index.json` plus
/// one ground-truth events file per split.
pub fn make_dataset(config: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<DatasetIndex, SynthError> {
    if config.count == 0 {
        return Err(SynthError::InvalidSpec("count must be >= 1".into()));
    }
    if config.class_mix.iter().any(|p| !(*p >= 0.0)) || config.class_mix.iter().sum::<f64>() <= 0.0 {
        return Err(SynthError::InvalidSpec("class mix needs a positive weight".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(config.count);
    let mut class_stats: BTreeMap<ManeuverClass, usize> =
        ManeuverClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut samples = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let spec = random_scene(config, i);
        let mut sample = render_profile(&spec, sample_seed(config.seed, i))?;
        let id = format!("{i:04}");
        sample.profile.provenance.video_id = id.clone();
        for m in &spec.maneuvers {
            *class_stats.entry(m.class).or_default() += 1;
        }
        let file = format!("{id}.profile");
        export_profile(&sample.profile, out.join(&file))?;
        entries.push(IndexEntry {
            id,
            file,
            split: Split::Train,
            classes: spec.maneuvers.iter().map(|m| m.class).collect(),
        });
        samples.push(sample);
    }
    assign_splits(&mut entries, config.seed);

    let mut splits: BTreeMap<Split, Vec<String>> = BTreeMap::new();
    for s in [Split::Train, Split::Val, Split::Test] {
        splits.insert(s, Vec::new());
    }
    for e in &entries {
        splits.get_mut(&e.split).unwrap().push(e.id.clone());
    }
    let mut warnings = Vec::new();
    for (s, ids) in &splits {
        if ids.is_empty() {
            warnings.push(format!("{} split is empty", s.name()));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    for split in [Split::Train, Split::Val, Split::Test] {
        let mut text = String::new();
        for (e, s) in entries.iter().zip(&samples) {
            if e.split != split {
                continue;
            }
            for ev in &s.profile.provenance.events {
                let rec = EventRecord {
                    video_id: e.id.clone(),
                    class: ev.class.short().to_string(),
                    t_start: ev.t_start,
                    t_end: ev.t_end,
                    v_x: Some(s.profile.provenance.v_x),
                    width: Some(s.profile.dims.width),
                };
                text.push_str(&serde_json::to_string(&rec)?);
                text.push('\n');
            }
        }
        std::fs::write(out.join(format!("gt_{}.jsonl", split.name())), text)?;
    }

    let index = DatasetIndex {
        config: config.clone(),
        samples: entries,
        splits,
        class_stats,
        warnings,
    };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    std::fs::write(out.join("index.json"), text)?;
    Ok(index)
}

/// A dataset sample loaded from disk with its ground-truth boxes.
#[derive(Debug, Clone)]
pub struct LabeledProfile {
    pub id: String,
    pub profile: MotionProfile,
    pub ground_truth: Vec<DetectionBox>,
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledProfile, SynthError> {
    let path = path.as_ref();
    let profile = import_profile(path)?;
    let ground_truth = profile
        .provenance
        .events
        .iter()
        .map(|e| event_to_bbox(e, profile.provenance.v_x, profile.dims))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabeledProfile {
        id: profile.provenance.video_id.clone(),
        profile,
        ground_truth,
    })
}

/// Load every sample of one split, in index order.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Vec<LabeledProfile>, SynthError> {
    let dir = dir.as_ref();
    let index = DatasetIndex::load(dir)?;
    index
        .samples
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_labeled(dir.join(&e.file)))
        .collect()
}

pub fn sample_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.profile"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ProfileDims {
        ProfileDims::new(256, 256, 1).unwrap()
    }

    fn overtake(class: ManeuverClass, t0: usize, t1: usize) -> ManeuverSpec {
        ManeuverSpec {
            class,
            t_start: t0,
            t_end: t1,
            thickness: 8.0,
            slope: 0.4,
            intensity: 220.0,
        }
    }

    fn box_mean(p: &MotionProfile, b: &DetectionBox) -> f64 {
        let mut sum = 0.0;
        let mut n = 0.0;
        for t in b.t_min as usize..b.t_max as usize {
            for x in b.x_min as usize..b.x_max as usize {
                sum += p.get(t, x, 0) as f64;
                n += 1.0;
            }
        }
        sum / n
    }

    #[test]
    fn background_only_scene() {
        let s = render_profile(&SceneSpec::empty(dims(), 128.0), 1).unwrap();
        assert!(s.ground_truth.is_empty());
        assert_eq!(s.profile.data.len(), 256 * 256);
    }

    #[test]
    fn lane_change_ground_truth_is_event_box() {
        let mut spec = SceneSpec::empty(dims(), 128.0);
        spec.maneuvers.push(ManeuverSpec {
            class: ManeuverClass::LaneLeft,
            ..overtake(ManeuverClass::LaneLeft, 100, 200)
        });
        let s = render_profile(&spec, 3).unwrap();
        let oracle = event_to_bbox(&spec.events()[0], 128.0, dims()).unwrap();
        assert_eq!(s.ground_truth, vec![oracle]);
        assert_eq!((oracle.x_min, oracle.x_max), (64.0, 192.0));
    }

    #[test]
    fn same_seed_same_profile() {
        let mut spec = SceneSpec::empty(dims(), 120.0);
        spec.noise_sigma = 10.0;
        spec.maneuvers.push(overtake(ManeuverClass::OvertakeRight, 30, 120));
        let a = render_profile(&spec, 42).unwrap();
        let b = render_profile(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.profile.data, render_profile(&spec, 43).unwrap().profile.data);
    }

    #[test]
    fn same_side_overlap_rejected() {
        let mut spec = SceneSpec::empty(dims(), 128.0);
        spec.maneuvers.push(overtake(ManeuverClass::OvertakeLeft, 10, 100));
        spec.maneuvers.push(ManeuverSpec {
            class: ManeuverClass::LaneLeft,
            ..overtake(ManeuverClass::LaneLeft, 50, 150)
        });
        assert!(matches!(render_profile(&spec, 0), Err(SynthError::OverlapUnrenderable(0, 1))));
        spec.maneuvers[1].class = ManeuverClass::OvertakeRight;
        assert!(render_profile(&spec, 0).is_ok());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = SceneSpec::empty(dims(), 128.0);
        spec.maneuvers.push(overtake(ManeuverClass::OvertakeLeft, 10, 300));
        assert!(matches!(render_profile(&spec, 0), Err(SynthError::InvalidSpec(_))));
        spec.maneuvers[0].t_end = 100;
        spec.maneuvers[0].thickness = 0.5;
        assert!(matches!(render_profile(&spec, 0), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn overtake_drawn_inside_its_box() {
        for class in [ManeuverClass::OvertakeLeft, ManeuverClass::OvertakeRight] {
            for side in [RightSide::Mirror, RightSide::Translate] {
                let mut spec = SceneSpec::empty(dims(), 128.0);
                spec.right_side = side;
                spec.maneuvers.push(overtake(class, 60, 160));
                let s = render_profile(&spec, 5).unwrap();
                let gt = s.ground_truth[0];
                let opposite = gt.mirrored(256);
                assert!(box_mean(&s.profile, &gt) > box_mean(&s.profile, &opposite), "{class} {side:?}");
            }
        }
    }

    #[test]
    fn right_overtake_is_mirror_of_left() {
        let mut spec = SceneSpec::empty(dims(), 100.0);
        spec.background.curves = 0;
        spec.maneuvers.push(overtake(ManeuverClass::OvertakeLeft, 40, 140));
        let left = render_profile(&spec, 9).unwrap();
        spec.v_x = 156.0;
        spec.maneuvers[0].class = ManeuverClass::OvertakeRight;
        let right = render_profile(&spec, 9).unwrap();
        assert_eq!(right.profile.data, left.profile.mirrored().data);
        assert_eq!(right.ground_truth[0], left.ground_truth[0].mirrored(256));
    }

    #[test]
    fn translated_right_pattern_is_a_shift() {
        let mut spec = SceneSpec::empty(dims(), 128.0);
        spec.background.curves = 0;
        spec.right_side = RightSide::Translate;
        spec.maneuvers.push(overtake(ManeuverClass::OvertakeLeft, 40, 140));
        let left = render_profile(&spec, 9).unwrap().profile;
        spec.maneuvers[0].class = ManeuverClass::OvertakeRight;
        let right = render_profile(&spec, 9).unwrap().profile;
        for t in 0..256 {
            assert_eq!(&left.row(t)[..128], &right.row(t)[128..]);
        }
    }

    #[test]
    fn lane_change_shears_the_markings() {
        let mut spec = SceneSpec::empty(dims(), 128.0);
        spec.background.drift_amplitude = 0.0;
        let still = render_profile(&spec, 2).unwrap().profile;
        spec.maneuvers.push(ManeuverSpec {
            class: ManeuverClass::LaneRight,
            ..overtake(ManeuverClass::LaneRight, 80, 180)
        });
        let moved = render_profile(&spec, 2).unwrap().profile;
        assert_eq!(still.row(10), moved.row(10));
        assert_ne!(still.row(150), moved.row(150));
    }

    #[test]
    fn split_counts_follow_sixty_twenty_twenty() {
        assert_eq!(split_counts(10), (6, 2, 2));
        assert_eq!(split_counts(1), (1, 0, 0));
        assert_eq!(split_counts(100), (60, 20, 20));
        for n in 1..200 {
            let (a, b, c) = split_counts(n);
            assert_eq!(a + b + c, n);
        }
    }

    #[test]
    fn dataset_of_ten() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            count: 10,
            seed: 7,
            ..DatasetConfig::default()
        };
        let index = make_dataset(&config, dir.path()).unwrap();
        let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|s| index.split_ids(*s).len())
            .collect();
        assert_eq!(sizes, vec![6, 2, 2]);
        assert!(index.warnings.is_empty());
        assert_eq!(load_split(dir.path(), Split::Val).unwrap().len(), 2);
        assert_eq!(DatasetIndex::load(dir.path()).unwrap(), index);
    }

    #[test]
    fn dataset_of_one_warns() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            count: 1,
            ..DatasetConfig::default()
        };
        let index = make_dataset(&config, dir.path()).unwrap();
        assert_eq!(index.split_ids(Split::Train).len(), 1);
        assert_eq!(index.warnings.len(), 2);
    }

    #[test]
    fn dataset_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let config = DatasetConfig {
            count: 6,
            seed: 3,
            ..DatasetConfig::default()
        };
        make_dataset(&config, a.path()).unwrap();
        make_dataset(&config, b.path()).unwrap();
        for name in ["index.json", "0003.profile", "0003.meta.json", "gt_train.jsonl"] {
            assert_eq!(
                std::fs::read(a.path().join(name)).unwrap(),
                std::fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn class_balance_tracks_mix() {
        let config = DatasetConfig {
            count: 300,
            seed: 1,
            class_mix: [1.0, 1.0, 2.0, 0.0],
            ..DatasetConfig::default()
        };
        let mut counts = [0usize; 4];
        for i in 0..config.count {
            for m in random_scene(&config, i).maneuvers {
                counts[m.class.code()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for (c, want) in counts.iter().zip([0.25, 0.25, 0.5, 0.0]) {
            assert!((*c as f64 / total as f64 - want).abs() <= 0.10);
        }
    }

    #[test]
    fn random_scenes_are_renderable() {
        for position_critical in [false, true] {
            let config = DatasetConfig {
                position_critical,
                ..DatasetConfig::default()
            };
            for i in 0..200 {
                let spec = random_scene(&config, i);
                assert!(render_profile(&spec, i as u64).is_ok(), "scene {i}: {spec:?}");
                if position_critical {
                    assert!(spec.maneuvers.iter().all(|m| m.class.is_overtake()));
                }
            }
        }
    }
}

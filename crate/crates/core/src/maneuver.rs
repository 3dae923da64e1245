//! Shared domain types: maneuver classes, events, boxes in profile space and
//! the rules that turn a labeled event into a box.
//!
//! Coordinates follow the profile raster: rows are time (row 0 is the oldest
//! frame), columns are lateral image position. Boxes are half-open on both
//! axes, so `[x_min, x_max) × [t_min, t_max)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid event: empty or reversed interval [{t_start}, {t_end})")]
    InvalidEvent { t_start: usize, t_end: usize },
    #[error("event [{t_start}, {t_end}) exceeds profile length {len}")]
    EventOutOfRange {
        t_start: usize,
        t_end: usize,
        len: usize,
    },
    #[error("vanishing point column {v_x} outside [0, {width})")]
    VanishingPointOutOfRange { v_x: f64, width: usize },
    #[error("degenerate box x=[{x_min}, {x_max}) t=[{t_min}, {t_max})")]
    DegenerateBox {
        x_min: f64,
        x_max: f64,
        t_min: f64,
        t_max: f64,
    },
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("invalid profile dimensions {width}x{height}x{channels}")]
    InvalidDims {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("unknown maneuver class {0:?}")]
    UnknownClass(String),
}

/// The four ego-vehicle maneuvers. Integer codes follow declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ManeuverClass {
    #[serde(rename = "LR")]
    LaneRight,
    #[serde(rename = "LL")]
    LaneLeft,
    #[serde(rename = "OR")]
    OvertakeRight,
    #[serde(rename = "OL")]
    OvertakeLeft,
}

impl ManeuverClass {
    pub const ALL: [ManeuverClass; 4] = [
        ManeuverClass::LaneRight,
        ManeuverClass::LaneLeft,
        ManeuverClass::OvertakeRight,
        ManeuverClass::OvertakeLeft,
    ];

    pub const COUNT: usize = 4;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Short label used in files: `LR`, `LL`, `OR`, `OL`.
    pub fn short(self) -> &'static str {
        match self {
            ManeuverClass::LaneRight => "LR",
            ManeuverClass::LaneLeft => "LL",
            ManeuverClass::OvertakeRight => "OR",
            ManeuverClass::OvertakeLeft => "OL",
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, ManeuverClass::LaneRight | ManeuverClass::LaneLeft)
    }

    pub fn is_overtake(self) -> bool {
        !self.is_lane_change()
    }

    pub fn is_left(self) -> bool {
        matches!(self, ManeuverClass::LaneLeft | ManeuverClass::OvertakeLeft)
    }

    /// The same maneuver on the other side.
    pub fn mirrored(self) -> Self {
        match self {
            ManeuverClass::LaneRight => ManeuverClass::LaneLeft,
            ManeuverClass::LaneLeft => ManeuverClass::LaneRight,
            ManeuverClass::OvertakeRight => ManeuverClass::OvertakeLeft,
            ManeuverClass::OvertakeLeft => ManeuverClass::OvertakeRight,
        }
    }
}

impl fmt::Display for ManeuverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for ManeuverClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "LR" => Ok(ManeuverClass::LaneRight),
            "LL" => Ok(ManeuverClass::LaneLeft),
            "OR" => Ok(ManeuverClass::OvertakeRight),
            "OL" => Ok(ManeuverClass::OvertakeLeft),
            other => Err(GeometryError::UnknownClass(other.to_string())),
        }
    }
}

/// Size of a motion profile: `width` columns, `height` rows (frames),
/// `channels` samples per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProfileDims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ProfileDims {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, GeometryError> {
        if width < 2 || height < 1 || !(channels == 1 || channels == 3) {
            return Err(GeometryError::InvalidDims {
                width,
                height,
                channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.width * self.height * self.channels
    }
}

/// Vanishing point in source-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoint {
    pub x: f64,
    pub y: f64,
}

impl VanishingPoint {
    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0 && self.x < width as f64 && self.y >= 0.0 && self.y < height as f64
    }
}

/// A labeled maneuver over frames `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverEvent {
    pub class: ManeuverClass,
    pub t_start: usize,
    pub t_end: usize,
}

impl ManeuverEvent {
    pub fn new(class: ManeuverClass, t_start: usize, t_end: usize) -> Result<Self, GeometryError> {
        if t_start >= t_end {
            return Err(GeometryError::InvalidEvent { t_start, t_end });
        }
        Ok(Self {
            class,
            t_start,
            t_end,
        })
    }

    pub fn duration(&self) -> usize {
        self.t_end - self.t_start
    }
}

/// An axis-aligned box in profile space with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub class: ManeuverClass,
    pub x_min: f64,
    pub t_min: f64,
    pub x_max: f64,
    pub t_max: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn new(
        class: ManeuverClass,
        x_min: f64,
        t_min: f64,
        x_max: f64,
        t_max: f64,
        score: f64,
    ) -> Result<Self, GeometryError> {
        let finite = [x_min, t_min, x_max, t_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || t_min >= t_max {
            return Err(GeometryError::DegenerateBox {
                x_min,
                x_max,
                t_min,
                t_max,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidScore(score));
        }
        Ok(Self {
            class,
            x_min,
            t_min,
            x_max,
            t_max,
            score,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.t_max - self.t_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.t_min + self.t_max),
        )
    }

    /// Mirror across the vertical axis of a profile `width` columns wide and
    /// swap the class side.
    pub fn mirrored(&self, width: usize) -> Self {
        let w = width as f64;
        Self {
            class: self.class.mirrored(),
            x_min: w - self.x_max,
            x_max: w - self.x_min,
            ..*self
        }
    }

    /// Clamp to `[0, width] × [0, height]`; `None` if nothing is left.
    pub fn clamped(&self, width: f64, height: f64) -> Option<Self> {
        let x_min = self.x_min.clamp(0.0, width);
        let x_max = self.x_max.clamp(0.0, width);
        let t_min = self.t_min.clamp(0.0, height);
        let t_max = self.t_max.clamp(0.0, height);
        (x_min < x_max && t_min < t_max).then_some(Self {
            x_min,
            x_max,
            t_min,
            t_max,
            ..*self
        })
    }
}

/// Intersection over union of two boxes; classes and scores are ignored.
pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.t_max.min(b.t_max) - a.t_min.max(b.t_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Which side of the vanishing point an overtake box is placed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideConvention {
    /// `OvertakeLeft` occupies `[0, v_x]`: the passed vehicle's trace is on
    /// the side it is passed on.
    #[default]
    PassedSide,
    /// `OvertakeLeft` occupies `[v_x, W]`.
    Opposite,
}

/// Convert a labeled event into its ground-truth box.
///
/// Lane changes are `W/2` wide and centered on `v_x` (clamped to the
/// profile); overtakes run from the image edge to `v_x`.
pub fn event_to_bbox(
    event: &ManeuverEvent,
    v_x: f64,
    dims: ProfileDims,
) -> Result<DetectionBox, GeometryError> {
    event_to_bbox_with(event, v_x, dims, SideConvention::PassedSide)
}

pub fn event_to_bbox_with(
    event: &ManeuverEvent,
    v_x: f64,
    dims: ProfileDims,
    side: SideConvention,
) -> Result<DetectionBox, GeometryError> {
    if event.t_start >= event.t_end {
        return Err(GeometryError::InvalidEvent {
            t_start: event.t_start,
            t_end: event.t_end,
        });
    }
    if event.t_end > dims.height {
        return Err(GeometryError::EventOutOfRange {
            t_start: event.t_start,
            t_end: event.t_end,
            len: dims.height,
        });
    }
    let w = dims.width as f64;
    if !(v_x >= 0.0 && v_x < w) {
        return Err(GeometryError::VanishingPointOutOfRange {
            v_x,
            width: dims.width,
        });
    }
    let (x_min, x_max) = match event.class {
        ManeuverClass::LaneLeft | ManeuverClass::LaneRight => {
            let half = w / 4.0;
            ((v_x - half).max(0.0), (v_x + half).min(w))
        }
        class => {
            let left_span = match (class, side) {
                (ManeuverClass::OvertakeLeft, SideConvention::PassedSide)
                | (ManeuverClass::OvertakeRight, SideConvention::Opposite) => true,
                _ => false,
            };
            if left_span {
                (0.0, v_x)
            } else {
                (v_x, w)
            }
        }
    };
    DetectionBox::new(
        event.class,
        x_min,
        event.t_start as f64,
        x_max,
        event.t_end as f64,
        1.0,
    )
}

/// One line of an events JSONL file. `v_x` and `width` are optional and let
/// an event be turned into a box without the profile sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub video_id: String,
    pub class: String,
    pub t_start: usize,
    pub t_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

/// One line of a detections JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub class: String,
    pub t_start: usize,
    pub t_end: usize,
    pub x_min: f64,
    pub t_min: f64,
    pub x_max: f64,
    pub t_max: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_box(video_id: &str, b: &DetectionBox) -> Self {
        Self {
            video_id: video_id.to_string(),
            class: b.class.short().to_string(),
            t_start: b.t_min.round().max(0.0) as usize,
            t_end: b.t_max.round().max(0.0) as usize,
            x_min: b.x_min,
            t_min: b.t_min,
            x_max: b.x_max,
            t_max: b.t_max,
            score: b.score,
        }
    }

    pub fn to_box(&self) -> Result<DetectionBox, GeometryError> {
        let class = self.class.parse()?;
        DetectionBox::new(
            class,
            self.x_min,
            self.t_min,
            self.x_max,
            self.t_max,
            self.score,
        )
    }
}

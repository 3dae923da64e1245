//! Motion profile construction.
//!
//! Every frame contributes one row: the vertical mean of a belt of rows a
//! fixed distance below the horizon. Stacking the rows gives a `T × W`
//! raster that stores `T·W` samples per channel instead of `T·W·H`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{to_luma, Frame, FrameSource, IngestError};
use crate::maneuver::{ManeuverEvent, ProfileDims};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("belt starting at row {row_start} lies outside a frame of height {frame_height}")]
    BeltOutOfFrame {
        row_start: usize,
        frame_height: usize,
    },
    #[error("invalid belt offsets [{lo}, {hi})")]
    InvalidOffsets { lo: usize, hi: usize },
    #[error("strip width {found}x{found_channels} differs from {expected}x{expected_channels}")]
    WidthMismatch {
        expected: usize,
        expected_channels: usize,
        found: usize,
        found_channels: usize,
    },
    #[error("no strips were pushed")]
    EmptyProfile,
    #[error("frame has {found} channels, profile wants {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("malformed profile file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Offsets below the horizon, in frame rows, `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeltOffsets {
    pub lo: usize,
    pub hi: usize,
}

impl BeltOffsets {
    pub const FAR: BeltOffsets = BeltOffsets { lo: 0, hi: 35 };
    pub const MEDIUM: BeltOffsets = BeltOffsets { lo: 35, hi: 100 };
    pub const CLOSE: BeltOffsets = BeltOffsets { lo: 100, hi: 200 };

    pub fn new(lo: usize, hi: usize) -> Result<Self, ProfileError> {
        if lo >= hi {
            return Err(ProfileError::InvalidOffsets { lo, hi });
        }
        Ok(Self { lo, hi })
    }
}

impl Default for BeltOffsets {
    fn default() -> Self {
        Self::MEDIUM
    }
}

impl std::str::FromStr for BeltOffsets {
    type Err = String;

    /// Accepts `lo:hi` or one of `far`, `medium`, `close`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "far" => return Ok(Self::FAR),
            "medium" => return Ok(Self::MEDIUM),
            "close" => return Ok(Self::CLOSE),
            _ => {}
        }
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("belt {s:?} is not of the form lo:hi"))?;
        let lo = lo.trim().parse().map_err(|e| format!("belt start: {e}"))?;
        let hi = hi.trim().parse().map_err(|e| format!("belt end: {e}"))?;
        Self::new(lo, hi).map_err(|e| e.to_string())
    }
}

/// Rows `[row_start, row_end)` of a frame that get averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBelt {
    pub row_start: usize,
    pub row_end: usize,
}

impl PixelBelt {
    pub fn height(&self) -> usize {
        self.row_end - self.row_start
    }
}

/// Belt `[v_y + lo, v_y + hi)` clipped to the frame.
pub fn belt_rows(
    v_y: usize,
    offsets: BeltOffsets,
    frame_height: usize,
) -> Result<PixelBelt, ProfileError> {
    if offsets.lo >= offsets.hi {
        return Err(ProfileError::InvalidOffsets {
            lo: offsets.lo,
            hi: offsets.hi,
        });
    }
    let row_start = v_y + offsets.lo;
    if row_start >= frame_height {
        return Err(ProfileError::BeltOutOfFrame {
            row_start,
            frame_height,
        });
    }
    Ok(PixelBelt {
        row_start,
        row_end: (v_y + offsets.hi).min(frame_height),
    })
}

/// One profile row: `width × channels` interleaved samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripRow {
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Column-wise mean of the belt rows, rounded half up.
pub fn extract_strip(frame: &Frame, belt: PixelBelt) -> StripRow {
    let mut acc = Vec::new();
    extract_strip_into(frame, belt, &mut acc)
}

/// Same as [`extract_strip`] but reuses `acc` as the accumulation buffer.
pub fn extract_strip_into(frame: &Frame, belt: PixelBelt, acc: &mut Vec<u32>) -> StripRow {
    assert!(
        belt.row_start < belt.row_end && belt.row_end <= frame.height,
        "belt {belt:?} outside frame of height {}",
        frame.height
    );
    let stride = frame.width * frame.channels;
    acc.clear();
    acc.resize(stride, 0);
    for r in belt.row_start..belt.row_end {
        for (a, &v) in acc.iter_mut().zip(frame.row(r)) {
            *a += v as u32;
        }
    }
    let n = belt.height() as u32;
    let data = acc.iter().map(|&s| ((2 * s + n) / (2 * n)) as u8).collect();
    StripRow {
        width: frame.width,
        channels: frame.channels,
        data,
    }
}

/// Where a profile came from. Travels with the raster as a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: String,
    pub belt: Option<PixelBelt>,
    pub v_x: f64,
    pub fps: Option<f64>,
    #[serde(default)]
    pub events: Vec<ManeuverEvent>,
}

/// `T × W × C` raster, row `t` being the strip of frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    pub dims: ProfileDims,
    pub data: Vec<u8>,
    pub provenance: Provenance,
}

impl MotionProfile {
    pub fn new(dims: ProfileDims, data: Vec<u8>, provenance: Provenance) -> Self {
        assert_eq!(data.len(), dims.sample_count(), "profile buffer size");
        Self {
            dims,
            data,
            provenance,
        }
    }

    #[inline]
    pub fn get(&self, t: usize, x: usize, c: usize) -> u8 {
        self.data[(t * self.dims.width + x) * self.dims.channels + c]
    }

    pub fn row(&self, t: usize) -> &[u8] {
        let stride = self.dims.width * self.dims.channels;
        &self.data[t * stride..(t + 1) * stride]
    }

    /// Per-pixel mean over channels, as `f64`, row-major `T × W`.
    pub fn intensity(&self) -> Vec<f64> {
        let c = self.dims.channels;
        self.data
            .chunks_exact(c)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
            .collect()
    }

    /// Left-right mirror; the vanishing point moves to `W - v_x`.
    pub fn mirrored(&self) -> Self {
        let (w, c) = (self.dims.width, self.dims.channels);
        let mut data = Vec::with_capacity(self.data.len());
        for t in 0..self.dims.height {
            let row = self.row(t);
            for x in (0..w).rev() {
                data.extend_from_slice(&row[x * c..(x + 1) * c]);
            }
        }
        let mut provenance = self.provenance.clone();
        provenance.v_x = w as f64 - provenance.v_x;
        provenance.events = provenance
            .events
            .iter()
            .map(|e| ManeuverEvent {
                class: e.class.mirrored(),
                ..*e
            })
            .collect();
        Self::new(self.dims, data, provenance)
    }
}

/// Streaming accumulator: one [`StripRow`] per frame, in frame order.
#[derive(Debug, Default)]
pub struct ProfileBuilder {
    width: usize,
    channels: usize,
    rows: usize,
    data: Vec<u8>,
}

impl ProfileBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push_strip(&mut self, strip: &StripRow) -> Result<(), ProfileError> {
        if self.rows == 0 {
            self.width = strip.width;
            self.channels = strip.channels;
        } else if strip.width != self.width || strip.channels != self.channels {
            return Err(ProfileError::WidthMismatch {
                expected: self.width,
                expected_channels: self.channels,
                found: strip.width,
                found_channels: strip.channels,
            });
        }
        self.data.extend_from_slice(&strip.data);
        self.rows += 1;
        Ok(())
    }

    pub fn finalize(self, provenance: Provenance) -> Result<MotionProfile, ProfileError> {
        if self.rows == 0 {
            return Err(ProfileError::EmptyProfile);
        }
        let dims = ProfileDims::new(self.width, self.rows, self.channels).map_err(|e| {
            ProfileError::Malformed {
                path: PathBuf::new(),
                reason: e.to_string(),
            }
        })?;
        Ok(MotionProfile::new(dims, self.data, provenance))
    }
}

/// Build a profile by streaming every frame of `source` through the belt.
pub fn build_profile(
    source: FrameSource,
    offsets: BeltOffsets,
    channels: usize,
) -> Result<MotionProfile, ProfileError> {
    let manifest = source.manifest().clone();
    let v_y = manifest.vanishing_point.y.round() as usize;
    let belt = belt_rows(v_y, offsets, manifest.height)?;
    let mut builder = ProfileBuilder::new();
    let mut acc = Vec::new();
    for frame in source {
        let frame = frame?;
        let frame = match (frame.channels, channels) {
            (a, b) if a == b => frame,
            (3, 1) => to_luma(&frame),
            (found, expected) => return Err(ProfileError::ChannelMismatch { expected, found }),
        };
        builder.push_strip(&extract_strip_into(&frame, belt, &mut acc))?;
    }
    builder.finalize(Provenance {
        video_id: manifest.id.clone(),
        belt: Some(belt),
        v_x: manifest.vanishing_point.x,
        fps: Some(manifest.fps),
        events: manifest.events.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    width: usize,
    height: usize,
    channels: usize,
    #[serde(flatten)]
    provenance: Provenance,
}

/// `<stem>.meta.json` next to a profile raster.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Write the raster as a lossless PNG plus its JSON sidecar.
pub fn export_profile(profile: &MotionProfile, path: impl AsRef<Path>) -> Result<(), ProfileError> {
    let path = path.as_ref();
    let bytes = encode_png(profile).map_err(|reason| ProfileError::Malformed {
        path: path.to_path_buf(),
        reason,
    })?;
    std::fs::write(path, bytes)?;
    let sidecar = Sidecar {
        width: profile.dims.width,
        height: profile.dims.height,
        channels: profile.dims.channels,
        provenance: profile.provenance.clone(),
    };
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

fn encode_png(profile: &MotionProfile) -> Result<Vec<u8>, String> {
    let color = match profile.dims.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(format!("unsupported channel count {c}")),
    };
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &profile.data,
        profile.dims.width as u32,
        profile.dims.height as u32,
        color,
    )
    .map_err(|e| e.to_string())?;
    Ok(out)
}

pub fn import_profile(path: impl AsRef<Path>) -> Result<MotionProfile, ProfileError> {
    let path = path.as_ref();
    let malformed = |reason: String| ProfileError::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let sidecar_text = std::fs::read_to_string(sidecar_path(path))?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| malformed(format!("sidecar: {e}")))?;
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| malformed(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (sidecar.width, sidecar.height) {
        return Err(malformed(format!(
            "raster is {w}x{h}, sidecar says {}x{}",
            sidecar.width, sidecar.height
        )));
    }
    let data = match (sidecar.channels, img) {
        (1, image::DynamicImage::ImageLuma8(buf)) => buf.into_raw(),
        (3, image::DynamicImage::ImageRgb8(buf)) => buf.into_raw(),
        (c, other) => {
            return Err(malformed(format!(
                "raster color type {:?} does not match {c} channels",
                other.color()
            )))
        }
    };
    let dims = ProfileDims::new(w, h, sidecar.channels).map_err(|e| malformed(e.to_string()))?;
    Ok(MotionProfile::new(dims, data, sidecar.provenance))
}

//! Frame sources: a directory of numbered images or a raw planar grayscale
//! blob, described by a JSON manifest.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maneuver::{ManeuverEvent, VanishingPoint};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("size mismatch in {path}: expected {expected} bytes/frames, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("frame {index} is {found_w}x{found_h}, manifest declares {width}x{height}")]
    DimensionMismatch {
        index: usize,
        width: usize,
        height: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("image decode failed for {path}: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Directory of numbered images, read in file-name order.
    FramesDir(PathBuf),
    /// Row-major, frame-major, unpadded 8-bit grayscale.
    RawFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    pub id: String,
    pub source: SourceKind,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub num_frames: usize,
    pub vanishing_point: VanishingPoint,
    #[serde(default)]
    pub events: Vec<ManeuverEvent>,
    /// Directory relative source paths resolve against; set by [`VideoManifest::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl VideoManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
            _ => IngestError::Io(e),
        })?;
        let mut manifest: VideoManifest = serde_json::from_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.num_frames == 0 {
            return Err(IngestError::InvalidManifest("num_frames must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(IngestError::InvalidManifest(format!(
                "frame size {}x{} is empty",
                self.width, self.height
            )));
        }
        if !(self.fps > 0.0) {
            return Err(IngestError::InvalidManifest(format!("fps {} must be positive", self.fps)));
        }
        if !self.vanishing_point.within(self.width, self.height) {
            return Err(IngestError::InvalidManifest(format!(
                "vanishing point ({}, {}) outside {}x{} frame",
                self.vanishing_point.x, self.vanishing_point.y, self.width, self.height
            )));
        }
        for e in &self.events {
            if e.t_start >= e.t_end || e.t_end > self.num_frames {
                return Err(IngestError::InvalidManifest(format!(
                    "event {} [{}, {}) outside [0, {})",
                    e.class, e.t_start, e.t_end, self.num_frames
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// One decoded frame, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * channels, "frame buffer size");
        Self {
            index,
            width,
            height,
            channels,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[u8] {
        let stride = self.width * self.channels;
        &self.data[r * stride..(r + 1) * stride]
    }
}

/// BT.601 luminance, `round(0.299 R + 0.587 G + 0.114 B)` with ties rounded up.
pub fn to_luma(frame: &Frame) -> Frame {
    if frame.channels == 1 {
        return frame.clone();
    }
    assert_eq!(frame.channels, 3, "to_luma expects a 3-channel frame");
    let data = frame
        .data
        .chunks_exact(3)
        .map(|px| {
            let acc = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
            ((acc + 500) / 1000) as u8
        })
        .collect();
    Frame::new(frame.index, frame.width, frame.height, 1, data)
}

enum Reader {
    Raw(BufReader<File>),
    Dir(Vec<PathBuf>),
}

/// Sequential single-consumer frame stream.
pub struct FrameSource {
    manifest: VideoManifest,
    reader: Reader,
    next: usize,
}

impl std::fmt::Debug for FrameSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameSource")
            .field("video", &self.manifest.id)
            .field("next", &self.next)
            .finish()
    }
}

pub fn open_source(manifest: &VideoManifest) -> Result<FrameSource, IngestError> {
    manifest.validate()?;
    let reader = match &manifest.source {
        SourceKind::RawFile(p) => {
            let path = manifest.resolve(p);
            let file = File::open(&path).map_err(|_| IngestError::MissingFile(path.clone()))?;
            let found = file.metadata()?.len();
            let expected = (manifest.width * manifest.height * manifest.num_frames) as u64;
            if found != expected {
                return Err(IngestError::SizeMismatch {
                    path,
                    expected,
                    found,
                });
            }
            Reader::Raw(BufReader::new(file))
        }
        SourceKind::FramesDir(p) => {
            let dir = manifest.resolve(p);
            if !dir.is_dir() {
                return Err(IngestError::MissingFile(dir));
            }
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            if paths.len() != manifest.num_frames {
                return Err(IngestError::SizeMismatch {
                    path: dir,
                    expected: manifest.num_frames as u64,
                    found: paths.len() as u64,
                });
            }
            Reader::Dir(paths)
        }
    };
    Ok(FrameSource {
        manifest: manifest.clone(),
        reader,
        next: 0,
    })
}

impl FrameSource {
    pub fn manifest(&self) -> &VideoManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.num_frames
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.num_frames == 0
    }

    fn read_frame(&mut self) -> Result<Frame, IngestError> {
        let (w, h) = (self.manifest.width, self.manifest.height);
        let index = self.next;
        match &mut self.reader {
            Reader::Raw(r) => {
                let mut data = vec![0u8; w * h];
                r.read_exact(&mut data)?;
                Ok(Frame::new(index, w, h, 1, data))
            }
            Reader::Dir(paths) => {
                let path = &paths[index];
                let img = image::open(path).map_err(|source| IngestError::Decode {
                    path: path.clone(),
                    source,
                })?;
                let (fw, fh) = (img.width() as usize, img.height() as usize);
                if (fw, fh) != (w, h) {
                    return Err(IngestError::DimensionMismatch {
                        index,
                        width: w,
                        height: h,
                        found_w: fw,
                        found_h: fh,
                    });
                }
                if img.color().has_color() {
                    Ok(Frame::new(index, w, h, 3, img.into_rgb8().into_raw()))
                } else {
                    Ok(Frame::new(index, w, h, 1, img.into_luma8().into_raw()))
                }
            }
        }
    }
}

impl Iterator for FrameSource {
    type Item = Result<Frame, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.manifest.num_frames {
            return None;
        }
        let frame = self.read_frame();
        self.next += 1;
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.manifest.num_frames - self.next;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maneuver::ManeuverClass;
    use proptest::prelude::*;

    fn raw_manifest(dir: &Path, w: usize, h: usize, n: usize) -> VideoManifest {
        VideoManifest {
            id: "clip".into(),
            source: SourceKind::RawFile("clip.raw".into()),
            width: w,
            height: h,
            fps: 30.0,
            num_frames: n,
            vanishing_point: VanishingPoint {
                x: w as f64 / 2.0,
                y: h as f64 / 3.0,
            },
            events: vec![],
            base_dir: Some(dir.to_path_buf()),
        }
    }

    #[test]
    fn raw_source_yields_all_frames() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h, n) = (1280, 720, 480);
        let blob: Vec<u8> = (0..w * h * n).map(|i| (i % 251) as u8).collect();
        std::fs::write(dir.path().join("clip.raw"), &blob).unwrap();
        let m = raw_manifest(dir.path(), w, h, n);
        let src = open_source(&m).unwrap();
        assert_eq!(src.len(), 480);
        let mut count = 0;
        for (i, f) in src.enumerate() {
            let f = f.unwrap();
            assert_eq!(f.index, i);
            assert_eq!(&f.data[..], &blob[i * w * h..(i + 1) * w * h]);
            count += 1;
        }
        assert_eq!(count, 480);
    }

    #[test]
    fn empty_video_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = raw_manifest(dir.path(), 8, 8, 0);
        assert!(matches!(open_source(&m), Err(IngestError::InvalidManifest(_))));
    }

    #[test]
    fn short_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("clip.raw"), vec![0u8; 8 * 8 * 3 - 1]).unwrap();
        let m = raw_manifest(dir.path(), 8, 8, 3);
        assert!(matches!(open_source(&m), Err(IngestError::SizeMismatch { .. })));
    }

    #[test]
    fn missing_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = raw_manifest(dir.path(), 8, 8, 3);
        assert!(matches!(open_source(&m), Err(IngestError::MissingFile(_))));
    }

    #[test]
    fn vanishing_point_outside_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = raw_manifest(dir.path(), 8, 8, 3);
        m.vanishing_point.x = 8.0;
        assert!(matches!(m.validate(), Err(IngestError::InvalidManifest(_))));
    }

    #[test]
    fn frames_dir_checks_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames");
        std::fs::create_dir(&frames).unwrap();
        for i in 0..3u32 {
            let size = if i == 2 { 5 } else { 4 };
            let img = image::GrayImage::from_pixel(size, 4, image::Luma([i as u8 * 10]));
            img.save(frames.join(format!("{i:04}.png"))).unwrap();
        }
        let mut m = raw_manifest(dir.path(), 4, 4, 3);
        m.source = SourceKind::FramesDir("frames".into());
        let out: Vec<_> = open_source(&m).unwrap().collect();
        assert_eq!(out[0].as_ref().unwrap().data, vec![0u8; 16]);
        assert_eq!(out[1].as_ref().unwrap().data, vec![10u8; 16]);
        assert!(matches!(out[2], Err(IngestError::DimensionMismatch { index: 2, .. })));
    }

    #[test]
    fn rgb_frames_keep_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames");
        std::fs::create_dir(&frames).unwrap();
        image::RgbImage::from_pixel(4, 2, image::Rgb([255, 0, 0]))
            .save(frames.join("0.png"))
            .unwrap();
        let mut m = raw_manifest(dir.path(), 4, 2, 1);
        m.source = SourceKind::FramesDir("frames".into());
        let f = open_source(&m).unwrap().next().unwrap().unwrap();
        assert_eq!(f.channels, 3);
        assert_eq!(to_luma(&f).data, vec![76u8; 8]);
    }

    #[test]
    fn manifest_json_shape() {
        let text = r#"{
            "id": "v1",
            "source": {"raw_file": "v1.raw"},
            "width": 1280, "height": 720, "fps": 30.0, "num_frames": 480,
            "vanishing_point": {"x": 640.0, "y": 300.0},
            "events": [{"class": "LL", "t_start": 100, "t_end": 200}]
        }"#;
        let m: VideoManifest = serde_json::from_str(text).unwrap();
        assert_eq!(m.source, SourceKind::RawFile("v1.raw".into()));
        assert_eq!(m.events[0].class, ManeuverClass::LaneLeft);
        assert!(serde_json::from_str::<VideoManifest>(&text.replace("\"fps\"", "\"fsp\"")).is_err());
    }

    #[test]
    fn luma_known_values() {
        let f = Frame::new(0, 3, 1, 3, vec![200, 200, 200, 255, 255, 255, 255, 0, 0]);
        assert_eq!(to_luma(&f).data, vec![200, 255, 76]);
    }

    proptest! {
        #[test]
        fn luma_within_channel_range(px in proptest::collection::vec(any::<[u8; 3]>(), 1..64)) {
            let data: Vec<u8> = px.iter().flatten().copied().collect();
            let f = Frame::new(0, px.len(), 1, 3, data);
            let l = to_luma(&f);
            for (p, y) in px.iter().zip(&l.data) {
                let lo = *p.iter().min().unwrap();
                let hi = *p.iter().max().unwrap();
                prop_assert!(lo <= *y && *y <= hi);
            }
        }
    }
}

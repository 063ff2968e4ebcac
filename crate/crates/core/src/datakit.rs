//! Clip manifests: segmentation of source videos into fixed windows, face
//! crops, subject-level train/test splits and JSON-lines I/O.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const CLIP_FPS: u32 = 25;
pub const CLIP_FRAMES: u64 = 50;
pub const DEFAULT_CROP_RATIO: f64 = 0.8;
/// Test clips per clip overall (4:1 split).
pub const TEST_FRACTION: f64 = 0.2;

/// Axis-aligned box in pixels, `(x, y)` the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    fn fits(&self, frame_w: u32, frame_h: u32) -> bool {
        u64::from(self.x) + u64::from(self.w) <= u64::from(frame_w) && u64::from(self.y) + u64::from(self.h) <= u64::from(frame_h)
    }

    fn union(&self, o: &BBox) -> BBox {
        let x0 = self.x.min(o.x);
        let y0 = self.y.min(o.y);
        let x1 = (self.x + self.w).max(o.x + o.w);
        let y1 = (self.y + self.h).max(o.y + o.h);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub source_id: String,
    pub duration_s: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Face boxes at keyframes.
    pub face_bbox: Vec<BBox>,
}

impl SourceMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("{}: duration must be positive", self.source_id)));
        }
        if self.fps != f64::from(CLIP_FPS) {
            return Err(Error::InvalidArgument(format!(
                "{}: expected {CLIP_FPS} fps, got {} (resample upstream)",
                self.source_id, self.fps
            )));
        }
        if self.face_bbox.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: no face boxes", self.source_id)));
        }
        if let Some(b) = self.face_bbox.iter().find(|b| !b.fits(self.width, self.height)) {
            return Err(Error::InvalidArgument(format!(
                "{}: face box {b:?} outside {}x{} frame",
                self.source_id, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One fixed-length clip. Fields not listed here are kept in `extra` and
/// written back after the known ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub source_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
    pub fps: u32,
    pub crop_box: BBox,
    pub landmark_path: String,
    pub beats_path: String,
    pub frames_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.end_frame.checked_sub(self.start_frame) != Some(CLIP_FRAMES) {
            return Err(Error::InvalidArgument(format!(
                "clip [{}, {}) is not {CLIP_FRAMES} frames long",
                self.start_frame, self.end_frame
            )));
        }
        if self.fps != CLIP_FPS {
            return Err(Error::InvalidArgument(format!("clip fps {} is not {CLIP_FPS}", self.fps)));
        }
        Ok(())
    }

    /// File stem shared by the clip's landmark, beat and frame files.
    pub fn stem(&self) -> String {
        format!("{}_{:06}", self.source_id, self.start_frame)
    }
}

/// Square crop around the face box with `side = max(w, h) / ratio`, moved
/// inside the frame first and shrunk only if it is larger than the frame.
pub fn crop_box(face: BBox, frame_w: u32, frame_h: u32, ratio: f64) -> Result<BBox> {
    if face.w == 0 || face.h == 0 {
        return Err(Error::InvalidArgument(format!("degenerate face box {face:?}")));
    }
    if !face.fits(frame_w, frame_h) {
        return Err(Error::InvalidArgument(format!("face box {face:?} outside {frame_w}x{frame_h} frame")));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("crop ratio must be in (0, 1], got {ratio}")));
    }
    let side = (f64::from(face.w.max(face.h)) / ratio).round() as i64;
    let side = side.min(i64::from(frame_w.min(frame_h))).max(1);
    let place = |start: u32, len: u32, frame: u32| -> u32 {
        let centre = f64::from(start) + f64::from(len) / 2.0;
        let lo = (centre - side as f64 / 2.0).round() as i64;
        lo.clamp(0, i64::from(frame) - side) as u32
    };
    Ok(BBox::new(place(face.x, face.w, frame_w), place(face.y, face.h, frame_h), side as u32, side as u32))
}

/// Consecutive non-overlapping 50-frame windows; the tail is dropped. The
/// crop covers the union of all keyframe face boxes.
pub fn segment_clips(m: &SourceMeta, ratio: f64) -> Result<Vec<ClipRecord>> {
    m.validate()?;
    let total = (m.duration_s * m.fps + 1e-9).floor() as u64;
    let face = m.face_bbox[1..].iter().fold(m.face_bbox[0], |acc, b| acc.union(b));
    let crop = crop_box(face, m.width, m.height, ratio)?;
    let clips = (0..total / CLIP_FRAMES)
        .map(|k| {
            let start = k * CLIP_FRAMES;
            let mut r = ClipRecord {
                source_id: m.source_id.clone(),
                start_frame: start,
                end_frame: start + CLIP_FRAMES,
                fps: CLIP_FPS,
                crop_box: crop,
                landmark_path: String::new(),
                beats_path: String::new(),
                frames_path: String::new(),
                split: None,
                extra: Map::new(),
            };
            let stem = r.stem();
            r.landmark_path = format!("{stem}.csv");
            r.beats_path = format!("{stem}.beats");
            r.frames_path = format!("{stem}.sgtf");
            r
        })
        .collect();
    Ok(clips)
}

/// Keeps the records accepted by `keep`.
pub fn filter_clips(records: Vec<ClipRecord>, keep: impl Fn(&ClipRecord) -> bool) -> Vec<ClipRecord> {
    records.into_iter().filter(|r| keep(r)).collect()
}

/// Default quality predicate: keeps everything.
pub fn keep_all(_: &ClipRecord) -> bool {
    true
}

/// Labels every record train or test. Subjects are shuffled with `seed` and
/// assigned whole: a subject joins the test set when that moves the test
/// count closer to one fifth of all clips.
pub fn split_dataset(mut records: Vec<ClipRecord>, seed: u64) -> Result<Vec<ClipRecord>> {
    if records.is_empty() {
        return Err(Error::Empty("split_dataset records"));
    }
    let mut order: Vec<String> = Vec::new();
    let mut sizes: HashMap<String, usize> = HashMap::new();
    for r in &records {
        let n = sizes.entry(r.source_id.clone()).or_insert(0);
        if *n == 0 {
            order.push(r.source_id.clone());
        }
        *n += 1;
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = (records.len() as f64 * TEST_FRACTION).round() as i64;
    let mut test_count = 0i64;
    let mut test_sources = Vec::new();
    for s in &order {
        let n = sizes[s] as i64;
        if (test_count + n - target).abs() < (test_count - target).abs() {
            test_count += n;
            test_sources.push(s.as_str());
        }
    }
    let labels: HashMap<String, Split> = order
        .iter()
        .map(|s| (s.clone(), if test_sources.contains(&s.as_str()) { Split::Test } else { Split::Train }))
        .collect();
    for r in &mut records {
        r.split = Some(labels[&r.source_id]);
    }
    Ok(records)
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn format_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<Vec<ClipRecord>> {
    let records: Vec<ClipRecord> = parse_jsonl(text, origin)?;
    let lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, _)| i + 1);
    for (r, line) in records.iter().zip(lines) {
        r.validate().map_err(|e| Error::Parse {
            path: origin.to_string(),
            line,
            msg: e.to_string(),
        })?;
    }
    Ok(records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let path = path.as_ref();
    parse_manifest(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ClipRecord]) -> Result<()> {
    Ok(fs::write(path, format_jsonl(records)?)?)
}

pub fn read_sources(path: impl AsRef<Path>) -> Result<Vec<SourceMeta>> {
    let path = path.as_ref();
    parse_jsonl(&fs::read_to_string(path)?, &path.display().to_string())
}

//! Landmark CSV and beat files.
//!
//! Landmarks: header `frame,x0,y0,...,x{k-1},y{k-1}`, then one row per frame
//! with frame indices `0, 1, 2, ...`. Beats: one time in seconds per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::motion::{BeatTrack, LandmarkSequence, Point};

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_landmarks(text: &str, origin: &str, fps: f64, mouth_indices: Vec<usize>) -> Result<LandmarkSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(parse_err(origin, 1, "missing header"));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"frame") || cols.len() % 2 != 1 {
        return Err(parse_err(origin, 1, "header must be frame,x0,y0,..."));
    }
    let k = (cols.len() - 1) / 2;
    for p in 0..k {
        if cols[1 + 2 * p] != format!("x{p}") || cols[2 + 2 * p] != format!("y{p}") {
            return Err(parse_err(origin, 1, format!("expected x{p},y{p} in header")));
        }
    }
    let mut frames = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(parse_err(origin, i + 1, format!("expected {} fields, got {}", cols.len(), fields.len())));
        }
        let idx: usize = fields[0].parse().map_err(|_| parse_err(origin, i + 1, format!("bad frame index {:?}", fields[0])))?;
        if idx != frames.len() {
            return Err(parse_err(origin, i + 1, format!("frame index {idx}, expected {}", frames.len())));
        }
        let mut vals = Vec::with_capacity(2 * k);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| parse_err(origin, i + 1, format!("bad coordinate {f:?}")))?;
            vals.push(v);
        }
        frames.push(vals.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<Point>>());
    }
    LandmarkSequence::new(frames, fps, mouth_indices)
}

pub fn format_landmarks(seq: &LandmarkSequence) -> String {
    let mut out = String::from("frame");
    for p in 0..seq.num_points() {
        write!(out, ",x{p},y{p}").unwrap();
    }
    out.push('\n');
    for (i, f) in seq.frames().iter().enumerate() {
        write!(out, "{i}").unwrap();
        for p in f {
            write!(out, ",{},{}", p[0], p[1]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_landmarks(path: impl AsRef<Path>, fps: f64, mouth_indices: Vec<usize>) -> Result<LandmarkSequence> {
    let path = path.as_ref();
    parse_landmarks(&fs::read_to_string(path)?, &path.display().to_string(), fps, mouth_indices)
}

pub fn write_landmarks(path: impl AsRef<Path>, seq: &LandmarkSequence) -> Result<()> {
    Ok(fs::write(path, format_landmarks(seq))?)
}

pub fn parse_beats(text: &str, origin: &str) -> Result<BeatTrack> {
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let t: f64 = line.parse().map_err(|_| parse_err(origin, i + 1, format!("bad beat time {line:?}")))?;
        times.push(t);
    }
    BeatTrack::new(times)
}

/// Onset lists from external detectors: the first field of each line is the
/// time; `#` comments are skipped; times are sorted and deduplicated.
pub fn parse_onsets(text: &str, origin: &str) -> Result<BeatTrack> {
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = line.split(|c: char| c == ',' || c.is_whitespace()).next().unwrap_or("");
        let t: f64 = first.parse().map_err(|_| parse_err(origin, i + 1, format!("bad onset time {first:?}")))?;
        times.push(t);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    BeatTrack::new(times)
}

pub fn format_beats(beats: &BeatTrack) -> String {
    beats.timestamps().iter().map(|t| format!("{t}\n")).collect()
}

pub fn read_beats(path: impl AsRef<Path>) -> Result<BeatTrack> {
    let path = path.as_ref();
    parse_beats(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn write_beats(path: impl AsRef<Path>, beats: &BeatTrack) -> Result<()> {
    Ok(fs::write(path, format_beats(beats))?)
}

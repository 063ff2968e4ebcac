//! Landmark-based motion metrics: mouth LMD, diversity and beat alignment.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSequence {
    frames: Vec<Vec<Point>>,
    fps: f64,
    mouth_indices: Vec<usize>,
}

impl LandmarkSequence {
    /// Empty `mouth_indices` selects every point.
    pub fn new(frames: Vec<Vec<Point>>, fps: f64, mouth_indices: Vec<usize>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        let k = frames.first().map_or(0, Vec::len);
        if let Some(i) = frames.iter().position(|f| f.len() != k) {
            return Err(Error::InvalidArgument(format!("frame {i} has {} points, expected {k}", frames[i].len())));
        }
        if let Some(&m) = mouth_indices.iter().find(|&&m| m >= k) {
            return Err(Error::InvalidArgument(format!("mouth index {m} out of range for {k} points")));
        }
        let mouth_indices = if mouth_indices.is_empty() { (0..k).collect() } else { mouth_indices };
        Ok(LandmarkSequence {
            frames,
            fps,
            mouth_indices,
        })
    }

    pub fn frames(&self) -> &[Vec<Point>] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn mouth_indices(&self) -> &[usize] {
        &self.mouth_indices
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_points(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }
}

/// Audio beat times in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatTrack {
    timestamps: Vec<f64>,
}

impl BeatTrack {
    pub fn new(timestamps: Vec<f64>) -> Result<Self> {
        if timestamps.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument("beat times must be finite and non-negative".into()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("beat times must be strictly increasing".into()));
        }
        Ok(BeatTrack { timestamps })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean distance between corresponding mouth landmarks.
pub fn lmd(a: &LandmarkSequence, b: &LandmarkSequence) -> Result<f64> {
    if a.num_frames() != b.num_frames() || a.num_points() != b.num_points() {
        return Err(Error::InvalidArgument(format!(
            "landmark sequences differ: {}x{} vs {}x{}",
            a.num_frames(),
            a.num_points(),
            b.num_frames(),
            b.num_points()
        )));
    }
    if a.mouth_indices != b.mouth_indices {
        return Err(Error::InvalidArgument("landmark sequences use different mouth indices".into()));
    }
    if a.num_frames() == 0 || a.mouth_indices.is_empty() {
        return Err(Error::Empty("lmd landmarks"));
    }
    let mut total = 0.0;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        for &m in &a.mouth_indices {
            total += dist(fa[m], fb[m]);
        }
    }
    Ok(total / (a.num_frames() * a.mouth_indices.len()) as f64)
}

/// Population standard deviation of each coordinate over time, averaged over
/// points and both axes.
pub fn diversity(a: &LandmarkSequence) -> Result<f64> {
    let n = a.num_frames();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("diversity needs at least 2 frames, got {n}")));
    }
    let k = a.num_points();
    if k == 0 {
        return Err(Error::Empty("diversity landmarks"));
    }
    let mut total = 0.0;
    for p in 0..k {
        for c in 0..2 {
            let mean = a.frames.iter().map(|f| f[p][c]).sum::<f64>() / n as f64;
            let var = a.frames.iter().map(|f| (f[p][c] - mean).powi(2)).sum::<f64>() / n as f64;
            total += var.sqrt();
        }
    }
    Ok(total / (2 * k) as f64)
}

/// Mean landmark displacement from frame `k - 1` to frame `k`, for `k >= 1`.
pub fn displacement(a: &LandmarkSequence) -> Vec<f64> {
    a.frames
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(&p, &q)| dist(p, q)).sum::<f64>() / w[0].len().max(1) as f64)
        .collect()
}

/// Times of the local minima of [`displacement`]. A flat run counts once, at
/// its first frame, when both neighbours are strictly larger.
pub fn motion_beats(a: &LandmarkSequence) -> Vec<f64> {
    let d = displacement(a);
    let mut beats = Vec::new();
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1] == d[i] {
            j += 1;
        }
        if i > 0 && j + 1 < d.len() && d[i - 1] > d[i] && d[j + 1] > d[j] {
            // Displacement entry i spans frames i..i+1; the beat is at frame i + 1.
            beats.push((i + 1) as f64 / a.fps);
        }
        i = j + 1;
    }
    beats
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeatAlignment {
    pub score: f64,
    pub sigma: f64,
    pub motion_beats: Vec<f64>,
    /// Set when no motion beat could be extracted; the score is then 0.
    pub no_motion_beats: bool,
}

/// Default kernel width: three frames.
pub fn default_sigma(fps: f64) -> f64 {
    3.0 / fps
}

/// Beat alignment against explicit motion beat times.
pub fn bas_from_beats(audio: &BeatTrack, motion: &[f64], sigma: f64) -> Result<f64> {
    if audio.is_empty() {
        return Err(Error::Empty("audio beats"));
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if motion.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = audio
        .timestamps
        .iter()
        .map(|&ta| {
            let nearest = motion.iter().map(|&tm| (ta - tm).powi(2)).fold(f64::INFINITY, f64::min);
            (-nearest / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / audio.len() as f64)
}

pub fn bas(audio: &BeatTrack, motion: &LandmarkSequence, sigma: Option<f64>) -> Result<BeatAlignment> {
    let sigma = sigma.unwrap_or_else(|| default_sigma(motion.fps));
    let beats = motion_beats(motion);
    let score = bas_from_beats(audio, &beats, sigma)?;
    if beats.is_empty() {
        log::warn!("no motion beat found in {} frames; beat alignment is 0", motion.num_frames());
    }
    Ok(BeatAlignment {
        score,
        sigma,
        no_motion_beats: beats.is_empty(),
        motion_beats: beats,
    })
}

//! Synthetic audio-correlated clips.
//!
//! Each clip has a sinusoidal "audio" track `a(t) = A sin(2 pi nu t + phi)`.
//! Frames are a smooth static background plus a horizontal mouth band whose
//! intensity follows `a(t)` at the frame centre. The raw audio features are
//! short windows of the same sinusoid, `samples_per_frame` columns per frame.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub channels: usize,
    /// Rows of each raw audio window.
    pub audio_window: usize,
    pub samples_per_frame: usize,
    pub fps: f64,
    /// Fixed amplitude for every clip; `None` draws one per clip in `[0.5, 1.0)`.
    pub amplitude: Option<f64>,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            channels: 1,
            audio_window: 8,
            samples_per_frame: 4,
            fps: 25.0,
            amplitude: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    /// `[f, c, h, w]`.
    pub frames: Tensor,
    /// Raw audio features `[audio_window, f * samples_per_frame]`.
    pub audio: Tensor,
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    /// Extrema of the audio track inside the clip, in seconds.
    pub beats: Vec<f64>,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// First frame, `[c, h, w]`.
    pub fn reference(&self) -> Result<Tensor> {
        let s = self.frames.shape();
        self.frames.slice_axis(0, 0, 1)?.reshape(&s[1..])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clips: Vec<Clip>,
    pub options: SyntheticOptions,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Row range and column range of the mouth band.
    pub fn mouth_region(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        mouth_region(self.height, self.width)
    }
}

pub fn mouth_region(h: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let r0 = (5 * h) / 8;
    let rows = (h / 8).max(1);
    let r0 = r0.min(h - rows);
    (r0..r0 + rows, w / 4..(3 * w / 4).max(w / 4 + 1))
}

fn track(amplitude: f64, frequency: f64, phase: f64, t: f64) -> f64 {
    amplitude * (2.0 * PI * frequency * t + phase).sin()
}

pub fn make_synthetic_dataset(n: usize, f: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_dataset_with(n, f, h, w, seed, &SyntheticOptions::default())
}

pub fn make_synthetic_dataset_with(n: usize, f: usize, h: usize, w: usize, seed: u64, opts: &SyntheticOptions) -> Result<Dataset> {
    if n == 0 || f == 0 || h == 0 || w == 0 || opts.channels == 0 || opts.audio_window == 0 || opts.samples_per_frame == 0 {
        return Err(Error::InvalidArgument("synthetic dataset sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mouth_rows, mouth_cols) = mouth_region(h, w);
    let c = opts.channels;
    let l = f * opts.samples_per_frame;
    let dt_col = 1.0 / (opts.fps * opts.samples_per_frame as f64);
    let mut clips = Vec::with_capacity(n);
    for _ in 0..n {
        let amplitude = opts.amplitude.unwrap_or_else(|| rng.random_range(0.5..1.0));
        let frequency = rng.random_range(1.5..4.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let grad: Vec<[f64; 3]> = (0..c)
            .map(|_| [rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();

        let mut frames = vec![0.0; f * c * h * w];
        for k in 0..f {
            let mouth = track(amplitude, frequency, phase, (k as f64 + 0.5) / opts.fps);
            for (ch, g) in grad.iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let mut v = g[0] + g[1] * (y as f64 / h as f64 - 0.5) + g[2] * (x as f64 / w as f64 - 0.5);
                        if mouth_rows.contains(&y) && mouth_cols.contains(&x) {
                            v += mouth;
                        }
                        frames[((k * c + ch) * h + y) * w + x] = v;
                    }
                }
            }
        }

        let win = opts.audio_window;
        let mut audio = vec![0.0; win * l];
        for j in 0..l {
            for i in 0..win {
                let t = (j as f64 + (i as f64 + 0.5) / win as f64) * dt_col;
                audio[i * l + j] = track(amplitude, frequency, phase, t);
            }
        }

        // Extrema where 2 pi nu t + phi = pi/2 + m pi.
        let duration = f as f64 / opts.fps;
        let mut beats = Vec::new();
        let mut m = ((phase - PI / 2.0) / PI).ceil() as i64 - 1;
        loop {
            let t = (PI / 2.0 + m as f64 * PI - phase) / (2.0 * PI * frequency);
            if t >= duration {
                break;
            }
            if t >= 0.0 {
                beats.push(t);
            }
            m += 1;
        }

        clips.push(Clip {
            frames: Tensor::new(vec![f, c, h, w], frames)?,
            audio: Tensor::new(vec![win, l], audio)?,
            amplitude,
            frequency,
            phase,
            beats,
        });
    }
    Ok(Dataset {
        clips,
        options: opts.clone(),
        height: h,
        width: w,
    })
}

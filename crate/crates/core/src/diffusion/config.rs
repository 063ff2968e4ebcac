//! `key=value` training configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::schedule::DEFAULT_STEPS;
use super::unet::{Flags, UNetDims};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub clips: usize,
    pub val_clips: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_msm: bool,
    pub use_sfm: bool,
    /// Update only the audio encoder and the two wavelet modules.
    pub freeze_backbone: bool,
    pub log_every: usize,
    pub timesteps: usize,
    pub base: usize,
    pub mid: usize,
    pub d_audio: usize,
    pub d_key: usize,
    pub audio_window: usize,
    pub samples_per_frame: usize,
    pub msm_hidden: usize,
    /// Validation clips sampled for the landmark metrics in the ablation report.
    pub eval_clips: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            frames: 16,
            height: 16,
            width: 16,
            channels: 1,
            clips: 64,
            val_clips: 8,
            steps: 500,
            batch: 1,
            lr: 1e-3,
            seed: 42,
            use_msm: true,
            use_sfm: true,
            freeze_backbone: false,
            log_every: 50,
            timesteps: DEFAULT_STEPS,
            base: 8,
            mid: 16,
            d_audio: 8,
            d_key: 8,
            audio_window: 8,
            samples_per_frame: 4,
            msm_hidden: 16,
            eval_clips: 2,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String> {
    raw.parse().map_err(|_| format!("invalid value {raw:?} for {key}"))
}

macro_rules! config_keys {
    ($($field:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$(stringify!($field)),*];

        impl TrainConfig {
            fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, raw)?,)*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// Serializes every key in a fixed order; parses back to `self`.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{}={}", stringify!($field), self.$field).unwrap();)*
                out
            }
        }
    };
}

config_keys!(
    frames,
    height,
    width,
    channels,
    clips,
    val_clips,
    steps,
    batch,
    lr,
    seed,
    use_msm,
    use_sfm,
    freeze_backbone,
    log_every,
    timesteps,
    base,
    mid,
    d_audio,
    d_key,
    audio_window,
    samples_per_frame,
    msm_hidden,
    eval_clips,
);

impl TrainConfig {
    /// Parses config text. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            seen.push(key);
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.steps == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("clips, steps and batch must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        self.dims().validate()
    }

    pub fn flags(&self) -> Flags {
        Flags {
            use_msm: self.use_msm,
            use_sfm: self.use_sfm,
        }
    }

    pub fn dims(&self) -> UNetDims {
        UNetDims {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
            base: self.base,
            mid: self.mid,
            audio_window: self.audio_window,
            audio_len: self.frames * self.samples_per_frame,
            d_audio: self.d_audio,
            d_key: self.d_key,
            msm_hidden: self.msm_hidden,
            timesteps: self.timesteps,
        }
    }
}

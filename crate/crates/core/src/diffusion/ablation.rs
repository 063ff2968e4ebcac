//! Module ablation: trains the four {MSM, SFM} variants under one seed and
//! scores each on held-out clips.

use std::fmt::Write as _;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{self, BeatTrack, LandmarkSequence, Scores};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::data::{mouth_region, Clip};
use super::sample::sample;
use super::schedule::{NoiseSchedule, BETA_END, BETA_START};
use super::train::{datasets, train, validation_loss};
use super::unet::Flags;

/// Rows in report order.
pub const VARIANTS: [(&str, Flags); 4] = [
    ("w/o MSM", Flags { use_msm: false, use_sfm: true }),
    ("w/o SFM", Flags { use_msm: true, use_sfm: false }),
    ("w/o both", Flags::PLAIN),
    ("full", Flags::FULL),
];

/// Pixels of lip travel per unit of mouth intensity in [`proxy_landmarks`].
pub const MOUTH_GAIN: f64 = 4.0;
/// Intensity range assumed by PSNR and SSIM on synthetic clips.
pub const EVAL_PEAK: f64 = 2.0;

/// Four mouth landmarks per frame derived from channel 0: the lips move apart
/// by the mean mouth-band intensity relative to `reference` (`[c, h, w]`),
/// the corners stay at the band's ends.
pub fn proxy_landmarks(frames: &Tensor, reference: &Tensor, fps: f64) -> Result<LandmarkSequence> {
    let &[f, c, h, w] = frames.shape() else {
        return Err(Error::invalid_shape("proxy_landmarks", format!("frames must be [f, c, h, w], got {:?}", frames.shape())));
    };
    if reference.shape() != [c, h, w] {
        return Err(Error::shape("proxy_landmarks", &[c, h, w], reference.shape()));
    }
    let (rows, cols) = mouth_region(h, w);
    let count = (rows.len() * cols.len()) as f64;
    let (top, bottom) = (rows.start as f64, rows.end as f64);
    let mid_y = (top + bottom) / 2.0;
    let mid_x = (cols.start + cols.end) as f64 / 2.0;
    let mut seq = Vec::with_capacity(f);
    for k in 0..f {
        let mut open = 0.0;
        for y in rows.clone() {
            for x in cols.clone() {
                open += frames.data()[((k * c) * h + y) * w + x] - reference.data()[y * w + x];
            }
        }
        let d = MOUTH_GAIN * open / count;
        seq.push(vec![[cols.start as f64, mid_y], [mid_x, top - d], [cols.end as f64, mid_y], [mid_x, bottom + d]]);
    }
    LandmarkSequence::new(seq, fps, vec![])
}

/// Scores a generated clip against the ground-truth clip it was conditioned on.
pub fn score_clip(generated: &Tensor, truth: &Clip, fps: f64) -> Result<Scores> {
    let reference = truth.reference()?;
    let pred = proxy_landmarks(generated, &reference, fps)?;
    let gt = proxy_landmarks(&truth.frames, &reference, fps)?;
    let (h, w) = (truth.frames.shape()[2], truth.frames.shape()[3]);
    let window = metrics::SsimParams::default().window;
    let ssim = if h >= window && w >= window {
        Some(metrics::ssim(generated, &truth.frames, EVAL_PEAK)?)
    } else {
        None
    };
    let (bas, bas_warning) = if truth.beats.is_empty() {
        (None, false)
    } else {
        let r = metrics::bas(&BeatTrack::new(truth.beats.clone())?, &pred, None)?;
        (Some(r.score), r.no_motion_beats)
    };
    Ok(Scores {
        ssim,
        psnr: Some(metrics::psnr(generated, &truth.frames, EVAL_PEAK)?),
        lmd: Some(metrics::lmd(&pred, &gt)?),
        diversity: (pred.num_frames() >= 2).then(|| metrics::diversity(&pred)).transpose()?,
        bas,
        bas_warning,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: &'static str,
    pub flags: Flags,
    pub val_loss: f64,
    pub final_train_loss: f64,
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub config: TrainConfig,
    pub rows: Vec<AblationRow>,
}

fn run_variant(cfg: &TrainConfig, method: &'static str, flags: Flags) -> Result<AblationRow> {
    let cfg = TrainConfig {
        use_msm: flags.use_msm,
        use_sfm: flags.use_sfm,
        ..cfg.clone()
    };
    let (train_set, val_set) = datasets(&cfg)?;
    let schedule = NoiseSchedule::linear(cfg.timesteps, BETA_START, BETA_END)?;
    let out = train(&train_set, &cfg)?;
    let val_loss = validation_loss(&out.params, &val_set.clips, &schedule, flags, cfg.seed)?;
    let fps = val_set.options.fps;
    let mut per_clip = Vec::new();
    for (i, clip) in val_set.clips.iter().take(cfg.eval_clips).enumerate() {
        let generated = sample(&out.params, &clip.audio, &clip.reference()?, &schedule, cfg.seed.wrapping_add(i as u64), flags)?;
        per_clip.push(score_clip(&generated, clip, fps)?);
    }
    let tail = out.losses.len().min(50);
    let final_train_loss = out.losses[out.losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(AblationRow {
        method,
        flags,
        val_loss,
        final_train_loss,
        scores: Scores::mean_of(&per_clip),
    })
}

/// Trains and scores every variant. Variants run on separate threads; each is
/// fully determined by the config, so the report does not depend on scheduling.
pub fn run_ablation(cfg: &TrainConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = VARIANTS.iter().map(|&(m, f)| s.spawn(move || run_variant(cfg, m, f))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("ablation worker panicked".into()))))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AblationReport { config: cfg.clone(), rows })
}

impl AblationReport {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("Method".into(), Value::from(r.method));
                for col in ["Diversity", "BAS", "LMD", "FVD"] {
                    m.insert(col.into(), r.scores.get(col));
                }
                m.insert("SSIM".into(), r.scores.get("SSIM"));
                m.insert("PSNR".into(), r.scores.get("PSNR"));
                m.insert("val_loss".into(), Value::from(r.val_loss));
                m.insert("train_loss_final50".into(), Value::from(r.final_train_loss));
                m.insert("bas_warning".into(), Value::from(r.scores.bas_warning));
                Value::Object(m)
            })
            .collect();
        let c = &self.config;
        json!({
            "rows": rows,
            "seed": c.seed,
            "steps": c.steps,
            "lr": c.lr,
            "clips": c.clips,
            "frames": c.frames,
            "size": [c.height, c.width],
            "eval_clips": c.eval_clips,
            "bas_sigma_frames": 3,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report is valid JSON");
        s.push('\n');
        s
    }

    /// Plain-text table with the same rows.
    pub fn to_table(&self) -> String {
        let fmt = |v: Value| match v {
            Value::Number(n) => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
            Value::String(s) => s,
            other => other.to_string(),
        };
        let mut out = format!("{:<10} {:>10} {:>10} {:>10} {:>8} {:>10}\n", "Method", "Diversity", "BAS", "LMD", "FVD", "val_loss");
        for r in &self.rows {
            writeln!(
                out,
                "{:<10} {:>10} {:>10} {:>10} {:>8} {:>10.6}",
                r.method,
                fmt(r.scores.get("Diversity")),
                fmt(r.scores.get("BAS")),
                fmt(r.scores.get("LMD")),
                fmt(r.scores.get("FVD")),
                r.val_loss
            )
            .unwrap();
        }
        out
    }
}

//! Evaluation metrics that need no pretrained networks.

pub mod image;
pub mod io;
pub mod motion;

use serde_json::{Map, Value};

pub use image::{psnr, ssim, ssim_with, Psnr, SsimParams};
pub use motion::{bas, bas_from_beats, diversity, lmd, motion_beats, BeatAlignment, BeatTrack, LandmarkSequence, Point};

/// Report columns in table order. Columns without an implementation render as `"n/a"`.
pub const COLUMNS: [&str; 9] = ["SSIM", "PSNR", "CPBD", "FVD", "LMD", "LSE-D", "LSE-C", "Diversity", "BAS"];

pub const NOT_AVAILABLE: &str = "n/a";

/// Scores for one clip, or their mean over clips.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub ssim: Option<f64>,
    pub psnr: Option<Psnr>,
    pub lmd: Option<f64>,
    pub diversity: Option<f64>,
    pub bas: Option<f64>,
    /// True when some clip had no extractable motion beat.
    pub bas_warning: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl Scores {
    /// Column-wise mean over the clips that have each score. The PSNR mean is
    /// infinite as soon as one clip is.
    pub fn mean_of(clips: &[Scores]) -> Scores {
        let psnrs: Vec<Psnr> = clips.iter().filter_map(|c| c.psnr).collect();
        let psnr = if psnrs.iter().any(|p| p.is_infinite()) {
            Some(Psnr::Infinite)
        } else {
            mean(psnrs.iter().map(|p| p.value())).map(Psnr::Db)
        };
        Scores {
            ssim: mean(clips.iter().filter_map(|c| c.ssim)),
            psnr,
            lmd: mean(clips.iter().filter_map(|c| c.lmd)),
            diversity: mean(clips.iter().filter_map(|c| c.diversity)),
            bas: mean(clips.iter().filter_map(|c| c.bas)),
            bas_warning: clips.iter().any(|c| c.bas_warning),
        }
    }

    pub fn get(&self, column: &str) -> Value {
        let num = |v: Option<f64>| v.map_or(Value::from(NOT_AVAILABLE), Value::from);
        match column {
            "SSIM" => num(self.ssim),
            "PSNR" => match self.psnr {
                Some(Psnr::Db(v)) => Value::from(v),
                Some(Psnr::Infinite) => Value::from("inf"),
                None => Value::from(NOT_AVAILABLE),
            },
            "LMD" => num(self.lmd),
            "Diversity" => num(self.diversity),
            "BAS" => num(self.bas),
            _ => Value::from(NOT_AVAILABLE),
        }
    }

    /// All table columns in order.
    pub fn to_json(&self) -> Map<String, Value> {
        COLUMNS.iter().map(|c| (c.to_string(), self.get(c))).collect()
    }
}

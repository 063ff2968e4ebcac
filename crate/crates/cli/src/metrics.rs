use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Map, Value};

use waveletcond::datakit::read_manifest;
use waveletcond::metrics::io::{read_beats, read_landmarks};
use waveletcond::metrics::{self, Scores, SsimParams};
use waveletcond::sgtf;
use waveletcond::Result;

/// Scores predicted clips against ground truth. Landmark files are required;
/// frame and beat files are used when present.
#[derive(Args)]
pub struct MetricsArgs {
    /// Directory with predicted landmark CSVs and frame tensors.
    #[arg(long)]
    pred: PathBuf,
    /// Directory with ground-truth landmarks, frames and beat files.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Pixel range for PSNR and SSIM.
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Comma-separated landmark indices used by LMD; all points by default.
    #[arg(long, value_delimiter = ',')]
    mouth: Vec<usize>,
}

pub fn run(args: &MetricsArgs) -> Result<()> {
    let records = read_manifest(&args.manifest)?;
    let mut clips = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    for r in &records {
        let fps = f64::from(r.fps);
        let pred = read_landmarks(args.pred.join(&r.landmark_path), fps, args.mouth.clone())?;
        let gt = read_landmarks(args.gt.join(&r.landmark_path), fps, args.mouth.clone())?;
        let mut s = Scores {
            lmd: Some(metrics::lmd(&pred, &gt)?),
            diversity: Some(metrics::diversity(&pred)?),
            ..Default::default()
        };
        let beats_path = args.gt.join(&r.beats_path);
        if beats_path.is_file() {
            let beats = read_beats(beats_path)?;
            if !beats.is_empty() {
                let b = metrics::bas(&beats, &pred, None)?;
                s.bas = Some(b.score);
                s.bas_warning = b.no_motion_beats;
            }
        }
        let (pf, gf) = (args.pred.join(&r.frames_path), args.gt.join(&r.frames_path));
        if pf.is_file() && gf.is_file() {
            let (a, b) = (sgtf::read(pf)?, sgtf::read(gf)?);
            s.psnr = Some(metrics::psnr(&a, &b, args.peak)?);
            let win = SsimParams::default().window;
            let sh = a.shape();
            if sh.len() >= 2 && sh[sh.len() - 2] >= win && sh[sh.len() - 1] >= win {
                s.ssim = Some(metrics::ssim(&a, &b, args.peak)?);
            }
        }
        let mut entry = Map::new();
        entry.insert("clip".into(), Value::from(r.stem()));
        entry.extend(s.to_json());
        entry.insert("bas_warning".into(), Value::from(s.bas_warning));
        clips.push(Value::Object(entry));
        scores.push(s);
    }
    let report = json!({
        "clips": clips,
        "aggregate": Scores::mean_of(&scores).to_json(),
        "bas_sigma_frames": 3,
        "peak": args.peak,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&args.report, text)?;
    Ok(())
}

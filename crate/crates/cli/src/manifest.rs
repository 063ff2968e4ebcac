use std::path::PathBuf;

use clap::Subcommand;

use waveletcond::datakit::{self, BBox, DEFAULT_CROP_RATIO};
use waveletcond::{Error, Result};

#[derive(Subcommand)]
pub enum ManifestCommand {
    /// Cuts every source (JSON lines of source metadata) into 2 s clips.
    Segment {
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CROP_RATIO)]
        ratio: f64,
    },
    /// Prints the square crop for a face box as `x,y,side,side`.
    Crop {
        /// Face box as `x,y,w,h`.
        #[arg(long)]
        bbox: String,
        /// Frame size as `WxH`.
        #[arg(long)]
        frame: String,
        #[arg(long, default_value_t = DEFAULT_CROP_RATIO)]
        ratio: f64,
    },
    /// Labels clips train or test, 4:1, keeping each subject in one split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn numbers(text: &str, sep: char, n: usize, what: &str) -> Result<Vec<u32>> {
    let vals: Vec<u32> = text
        .split(sep)
        .map(|s| s.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad {what} {text:?}")))?;
    if vals.len() != n {
        return Err(Error::InvalidArgument(format!("{what} needs {n} values, got {text:?}")));
    }
    Ok(vals)
}

pub fn run(cmd: ManifestCommand, seed: u64) -> Result<()> {
    match cmd {
        ManifestCommand::Segment { sources, out, ratio } => {
            let mut records = Vec::new();
            for s in datakit::read_sources(&sources)? {
                records.extend(datakit::segment_clips(&s, ratio)?);
            }
            let records = datakit::filter_clips(records, datakit::keep_all);
            datakit::write_manifest(out, &records)
        }
        ManifestCommand::Crop { bbox, frame, ratio } => {
            let b = numbers(&bbox, ',', 4, "bbox")?;
            let f = numbers(&frame.to_ascii_lowercase(), 'x', 2, "frame size")?;
            let c = datakit::crop_box(BBox::new(b[0], b[1], b[2], b[3]), f[0], f[1], ratio)?;
            println!("{},{},{},{}", c.x, c.y, c.w, c.h);
            Ok(())
        }
        ManifestCommand::Split { manifest, out } => {
            let records = datakit::split_dataset(datakit::read_manifest(&manifest)?, seed)?;
            datakit::write_manifest(out, &records)
        }
    }
}

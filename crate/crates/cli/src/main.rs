use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use waveletcond::diffusion::ablation::run_ablation;
use waveletcond::diffusion::schedule::{NoiseSchedule, BETA_END, BETA_START};
use waveletcond::diffusion::train::{datasets, train};
use waveletcond::diffusion::{sample, ToyUNetParams, TrainConfig};
use waveletcond::msm::{self, AudioEmbedding, MsmParams, DEFAULT_HIDDEN};
use waveletcond::params::{ParamGroup, ParamStore};
use waveletcond::sfm::{self, SfmParams};
use waveletcond::sgtf::{self, Precision};
use waveletcond::wavelet::{self, Band, SubBands};
use waveletcond::{Error, Result};

mod manifest;
mod metrics;

const CONFIG_FILE: &str = "config.txt";
const LOSS_FILE: &str = "losses.txt";

#[derive(Parser)]
#[command(name = "waveletcond", version, about = "Wavelet-domain audio conditioning toolkit")]
struct Cli {
    /// Overrides the seed of commands that use randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Storage precision of written tensors.
    #[arg(long, global = true, default_value = "f64")]
    precision: Precision,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar transform of a tensor; writes PREFIX.{ll,lh,hl,hh}.sgtf.
    Dwt { input: PathBuf, prefix: String },
    /// Inverse of `dwt`.
    Idwt { prefix: String, output: PathBuf },
    /// Reweights an audio embedding's sub-bands from a noisy latent.
    MsmApply {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        latent: PathBuf,
        /// Parameter directory; the identity initialization when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filters bottleneck features `[f, c, h, w]`.
    SfmApply {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the toy model on synthetic clips.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generates a clip with a trained run.
    Sample {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains every module ablation and prints the report.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Writes the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prints a text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    Metrics(metrics::MetricsArgs),
    /// Clip manifest tools.
    #[command(subcommand)]
    Manifest(manifest::ManifestCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let prec = cli.precision;
    match cli.command {
        Command::Dwt { input, prefix } => {
            let bands = wavelet::dwt2_batched(&sgtf::read(&input)?)?;
            for (band, t) in bands.iter() {
                sgtf::write(band_path(&prefix, band), t, prec)?;
            }
            Ok(())
        }
        Command::Idwt { prefix, output } => {
            let bands = Band::ALL.map(|b| sgtf::read(band_path(&prefix, b)));
            let [ll, lh, hl, hh] = bands;
            let s = SubBands::new(ll?, lh?, hl?, hh?)?;
            sgtf::write(output, &wavelet::idwt2_batched(&s)?, prec)
        }
        Command::MsmApply { audio, latent, params, out } => {
            let z = sgtf::read(latent)?;
            let p = match params {
                Some(dir) => load_msm(&dir, z.shape())?,
                None => MsmParams::identity(z.shape(), DEFAULT_HIDDEN),
            };
            let a = sgtf::read(audio)?;
            let frames = if z.rank() == 4 { z.shape()[0] } else { 1 };
            let emb = AudioEmbedding::new(a, frames)?;
            sgtf::write(out, &msm::msm_forward(&emb, &z, &p)?, prec)
        }
        Command::SfmApply { features, params, out } => {
            let h = sgtf::read(features)?;
            let mut p = SfmParams::new(h.shape())?;
            if let Some(dir) = params {
                let store = ParamStore::load(&dir)?;
                p.load_from(&store, prefix_of(&store, "sfm.", "gate_w"))?;
            }
            sgtf::write(out, &sfm::sfm_forward(&h, &p)?, prec)
        }
        Command::TrainToy { config, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let (train_set, _) = datasets(&cfg)?;
            let outcome = train(&train_set, &cfg)?;
            outcome.params.save_store().save(&out, prec)?;
            std::fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
            let losses: String = outcome.losses.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(out.join(LOSS_FILE), losses)?;
            Ok(())
        }
        Command::Sample { params, audio, reference, out } => {
            let cfg = TrainConfig::load(params.join(CONFIG_FILE))?;
            let model = ToyUNetParams::from_store(cfg.dims(), &ParamStore::load(&params)?)?;
            let schedule = NoiseSchedule::linear(cfg.timesteps, BETA_START, BETA_END)?;
            let audio = sgtf::read(audio)?;
            let reference = sgtf::read(reference)?;
            let clip = sample(&model, &audio, &reference, &schedule, cli.seed.unwrap_or(0), cfg.flags())?;
            sgtf::write(out, &clip, prec)
        }
        Command::Ablate { config, out, table } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let report = run_ablation(&cfg)?;
            let text = if table { report.to_table() } else { report.to_json_string() };
            match out {
                Some(path) => Ok(std::fs::write(path, text)?),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Metrics(args) => metrics::run(&args),
        Command::Manifest(cmd) => manifest::run(cmd, cli.seed.unwrap_or(0)),
    }
}

fn band_path(prefix: &str, band: Band) -> PathBuf {
    PathBuf::from(format!("{prefix}.{}.sgtf", band.name().to_ascii_lowercase()))
}

/// `preferred` when the store holds `preferred + probe`, otherwise no prefix.
fn prefix_of(store: &ParamStore, preferred: &'static str, probe: &str) -> &'static str {
    if store.get(&format!("{preferred}{probe}")).is_some() {
        preferred
    } else {
        ""
    }
}

fn load_msm(dir: &Path, latent_shape: &[usize]) -> Result<MsmParams> {
    let store = ParamStore::load(dir)?;
    let prefix = prefix_of(&store, "msm.", "fc1_w");
    let fc1 = store
        .get(&format!("{prefix}fc1_w"))
        .ok_or_else(|| Error::Format(format!("{}: no fc1_w parameter", dir.display())))?;
    let hidden = *fc1.shape().get(1).ok_or_else(|| Error::Format(format!("fc1_w has shape {:?}", fc1.shape())))?;
    let mut p = MsmParams::identity(latent_shape, hidden);
    p.load_from(&store, prefix)?;
    Ok(p)
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

//! Noise-prediction training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::data::{make_synthetic_dataset_with, Clip, Dataset, SyntheticOptions};
use super::schedule::{forward_diffuse, NoiseSchedule};
use super::unet::{repeat_reference, unet_forward_graph, Flags, ParamRole, ToyUNetParams, UNetInputs, UNetVars};

// Independent RNG streams derived from the run seed.
const STREAM_DATA: u64 = 0x5eed_da7a;
const STREAM_VAL: u64 = 0x5eed_0a11;
const STREAM_STEPS: u64 = 0x5eed_57e9;

/// One training example: a clean clip with its conditioning, a step and the noise.
#[derive(Clone, Debug)]
pub struct Example {
    /// `[f, c, h, w]`.
    pub z0: Tensor,
    pub audio: Tensor,
    /// `[c, h, w]`.
    pub reference: Tensor,
    pub t: usize,
    pub eps: Tensor,
}

impl Example {
    pub fn from_clip(clip: &Clip, t: usize, eps: Tensor) -> Result<Self> {
        Ok(Example {
            z0: clip.frames.clone(),
            audio: clip.audio.clone(),
            reference: clip.reference()?,
            t,
            eps,
        })
    }
}

/// Mean over the batch of the per-example mean squared error.
pub fn epsilon_mse(pairs: &[(&Tensor, &Tensor)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("epsilon_mse batch"));
    }
    let mut total = 0.0;
    for (pred, eps) in pairs {
        let d = pred.sub(eps)?;
        total += d.norm_sq() / d.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Records the batch loss on `g`.
pub fn train_loss_graph(g: &mut Graph, params: &ToyUNetParams, vars: &UNetVars, batch: &[Example], s: &NoiseSchedule, flags: Flags) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let z_t = forward_diffuse(&ex.z0, ex.t, &ex.eps, s)?;
        let inputs = UNetInputs {
            z_t: g.leaf(z_t),
            t: ex.t,
            audio: g.leaf(ex.audio.clone()),
            reference: g.leaf(repeat_reference(&ex.reference, params.dims.frames)?),
        };
        let eps_hat = unet_forward_graph(g, &params.dims, vars, &inputs, flags)?;
        let eps = g.leaf(ex.eps.clone());
        let d = g.sub(eps_hat, eps)?;
        let sq = g.mul(d, d)?;
        let m = g.mean(sq)?;
        terms.push(g.reshape(m, &[1])?);
    }
    let all = g.concat(&terms, 0)?;
    g.mean(all)
}

pub fn train_loss(batch: &[Example], params: &ToyUNetParams, s: &NoiseSchedule, flags: Flags) -> Result<f64> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let loss = train_loss_graph(&mut g, params, &vars, batch, s, flags)?;
    g.value(loss).item()
}

/// Loss and the gradient of every parameter, in visiting order.
pub fn loss_and_grads(batch: &[Example], params: &ToyUNetParams, s: &NoiseSchedule, flags: Flags) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let loss = train_loss_graph(&mut g, params, &vars, batch, s, flags)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, vars.in_visit_order().into_iter().map(|v| grads.wrt(v)).collect()))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ToyUNetParams,
    /// Batch loss at every step, before that step's update.
    pub losses: Vec<f64>,
}

pub fn synthetic_options(cfg: &TrainConfig) -> SyntheticOptions {
    SyntheticOptions {
        channels: cfg.channels,
        audio_window: cfg.audio_window,
        samples_per_frame: cfg.samples_per_frame,
        ..Default::default()
    }
}

/// Training and validation sets for a config, drawn from disjoint seeds.
pub fn datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let opts = synthetic_options(cfg);
    let train = make_synthetic_dataset_with(cfg.clips, cfg.frames, cfg.height, cfg.width, cfg.seed ^ STREAM_DATA, &opts)?;
    let val = make_synthetic_dataset_with(cfg.val_clips.max(1), cfg.frames, cfg.height, cfg.width, cfg.seed ^ STREAM_VAL, &opts)?;
    Ok((train, val))
}

/// Fixed probes for validation: every clip at evenly spaced steps with seeded noise.
pub fn validation_examples(clips: &[Clip], s: &NoiseSchedule, seed: u64) -> Result<Vec<Example>> {
    const PROBES: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_VAL);
    let mut out = Vec::with_capacity(clips.len() * PROBES);
    for clip in clips {
        for k in 0..PROBES {
            let t = 1 + (k * (s.steps() - 1)) / (PROBES - 1).max(1);
            let eps = Tensor::randn(clip.frames.shape(), &mut rng);
            out.push(Example::from_clip(clip, t, eps)?);
        }
    }
    Ok(out)
}

pub fn validation_loss(params: &ToyUNetParams, clips: &[Clip], s: &NoiseSchedule, flags: Flags, seed: u64) -> Result<f64> {
    let probes = validation_examples(clips, s, seed)?;
    let mut total = 0.0;
    for ex in &probes {
        total += train_loss(std::slice::from_ref(ex), params, s, flags)?;
    }
    Ok(total / probes.len() as f64)
}

/// Seeded training run on `dataset`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    let schedule = NoiseSchedule::linear(cfg.timesteps, super::schedule::BETA_START, super::schedule::BETA_END)?;
    let mut params = ToyUNetParams::new(cfg.dims(), cfg.seed)?;
    let flags = cfg.flags();

    let mut trainable = Vec::new();
    params.visit(&mut |name, _| trainable.push(!cfg.freeze_backbone || ToyUNetParams::role(name) == ParamRole::Conditioning));
    let mut current: Vec<Tensor> = Vec::new();
    params.visit(&mut |_, t| current.push(t.clone()));
    let mut selected: Vec<Tensor> = select(&current, &trainable);
    let mut state = AdamState::new(&selected);
    let adam = AdamConfig::with_lr(cfg.lr);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_STEPS);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let clip = &dataset.clips[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=schedule.steps());
            let eps = Tensor::randn(clip.frames.shape(), &mut rng);
            batch.push(Example::from_clip(clip, t, eps)?);
        }
        let (loss, grads) = loss_and_grads(&batch, &params, &schedule, flags)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became non-finite at step {step}")));
        }
        losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!("step {:>5} loss {loss:.6}", step + 1);
        }
        if cfg.lr == 0.0 {
            continue;
        }
        adam_step(&mut selected, &select(&grads, &trainable), &mut state, &adam)?;
        let mut it = selected.iter();
        let mut k = 0;
        params.visit_mut(&mut |_, t| {
            if trainable[k] {
                *t = it.next().expect("one tensor per trainable slot").clone();
            }
            k += 1;
        });
    }
    Ok(TrainOutcome { params, losses })
}

fn select(all: &[Tensor], mask: &[bool]) -> Vec<Tensor> {
    all.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t.clone()).collect()
}

//! Toy denoising UNet.
//!
//! ```text
//! [z_t | ref] -> conv_in (+ time embedding) -> SiLU ----------------------------+ skip
//!   -> stride-2 conv -> SiLU -> mid conv 1 -> SiLU -> audio attention          |
//!   -> mid conv 2 -> SiLU -> [filter module] -> upsample -> concat <-----------+
//!   -> conv_up -> SiLU -> conv_out -> eps_hat
//! ```
//!
//! Frames are processed independently as a batch. Audio enters through the
//! attention block: a linear encoder maps raw audio to the embedding, the
//! spectral module optionally reweights it, and each frame attends to the
//! audio tokens of itself and its immediate neighbours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::msm::{self, AttentionParams, AttentionVars, MsmParams, MsmVars};
use crate::params::{ParamGroup, ParamStore};
use crate::sfm::{self, SfmParams, SfmVars};
use crate::tensor::Tensor;

/// Half-width of the audio window each frame attends to.
pub const AUDIO_CONTEXT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flags {
    pub use_msm: bool,
    pub use_sfm: bool,
}

impl Flags {
    pub const FULL: Flags = Flags { use_msm: true, use_sfm: true };
    pub const PLAIN: Flags = Flags { use_msm: false, use_sfm: false };
}

impl Default for Flags {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNetDims {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base: usize,
    pub mid: usize,
    pub audio_window: usize,
    pub audio_len: usize,
    pub d_audio: usize,
    pub d_key: usize,
    pub msm_hidden: usize,
    pub timesteps: usize,
}

impl UNetDims {
    pub fn latent_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn bottleneck_shape(&self) -> [usize; 4] {
        [self.frames, self.mid, self.height / 2, self.width / 2]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.frames,
            self.channels,
            self.height,
            self.width,
            self.base,
            self.mid,
            self.audio_window,
            self.audio_len,
            self.d_audio,
            self.d_key,
            self.msm_hidden,
            self.timesteps,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "frame size {}x{} must be divisible by 4 (stride-2 encoder, wavelet at the bottleneck, 4 latent chunks)",
                self.height, self.width
            )));
        }
        if !self.d_audio.is_multiple_of(2) || !self.audio_len.is_multiple_of(2) || !self.audio_len.is_multiple_of(self.frames) {
            return Err(Error::InvalidArgument(format!(
                "audio embedding {}x{} must have even sides and a length divisible by {} frames",
                self.d_audio, self.audio_len, self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub w: Tensor,
    pub b: Tensor,
}

impl Conv {
    fn new<R: Rng + ?Sized>(c_out: usize, c_in: usize, rng: &mut R) -> Self {
        let fan_in = (9 * c_in) as f64;
        Conv {
            w: Tensor::randn(&[c_out, c_in, 3, 3], rng).scale(1.0 / fan_in.sqrt()),
            b: Tensor::zeros(&[c_out]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyUNetParams {
    pub dims: UNetDims,
    pub audio_enc_w: Tensor,
    pub audio_enc_b: Tensor,
    pub conv_in: Conv,
    pub time_emb: Tensor,
    pub down: Conv,
    pub mid1: Conv,
    pub attn: AttentionParams,
    pub mid2: Conv,
    pub up: Conv,
    pub conv_out: Conv,
    pub msm: MsmParams,
    pub sfm: SfmParams,
}

/// Which parameters a training step may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Audio encoder, spectral module, filter module.
    Conditioning,
    Backbone,
}

impl ToyUNetParams {
    /// Seeded initialization. All tensors are drawn in a fixed order that does
    /// not depend on any ablation flag.
    pub fn new(dims: UNetDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = &dims;
        let audio_enc_w = Tensor::randn(&[d.d_audio, d.audio_window], &mut rng).scale(1.0 / (d.audio_window as f64).sqrt());
        let conv_in = Conv::new(d.base, 2 * d.channels, &mut rng);
        let time_emb = Tensor::randn(&[d.timesteps, d.base], &mut rng).scale(0.1);
        let down = Conv::new(d.mid, d.base, &mut rng);
        let mid1 = Conv::new(d.mid, d.mid, &mut rng);
        let attn = AttentionParams::new(d.mid, d.d_audio, d.d_key, &mut rng);
        let mid2 = Conv::new(d.mid, d.mid, &mut rng);
        let up = Conv::new(d.base, d.mid + d.base, &mut rng);
        let conv_out = Conv::new(d.channels, d.base, &mut rng);
        let msm = MsmParams::new(&d.latent_shape(), d.msm_hidden, &mut rng);
        let sfm = SfmParams::new(&d.bottleneck_shape())?;
        Ok(ToyUNetParams {
            audio_enc_b: Tensor::zeros(&[d.d_audio]),
            audio_enc_w,
            conv_in,
            time_emb,
            down,
            mid1,
            attn,
            mid2,
            up,
            conv_out,
            msm,
            sfm,
            dims,
        })
    }

    pub fn role(name: &str) -> ParamRole {
        if name.starts_with("audio_enc.") || name.starts_with("msm.") || name.starts_with("sfm.") {
            ParamRole::Conditioning
        } else {
            ParamRole::Backbone
        }
    }

    pub fn save_store(&self) -> ParamStore {
        self.to_store("")
    }

    pub fn from_store(dims: UNetDims, store: &ParamStore) -> Result<Self> {
        let mut p = Self::new(dims, 0)?;
        p.load_from(store, "")?;
        Ok(p)
    }

    pub fn bind(&self, g: &mut Graph) -> UNetVars {
        let conv = |g: &mut Graph, c: &Conv| (g.leaf(c.w.clone()), g.leaf(c.b.clone()));
        UNetVars {
            audio_enc_w: g.leaf(self.audio_enc_w.clone()),
            audio_enc_b: g.leaf(self.audio_enc_b.clone()),
            conv_in: conv(g, &self.conv_in),
            time_emb: g.leaf(self.time_emb.clone()),
            down: conv(g, &self.down),
            mid1: conv(g, &self.mid1),
            attn: self.attn.bind(g),
            mid2: conv(g, &self.mid2),
            up: conv(g, &self.up),
            conv_out: conv(g, &self.conv_out),
            msm: self.msm.bind(g),
            sfm: self.sfm.bind(g),
        }
    }
}

impl ParamGroup for ToyUNetParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("audio_enc.w", &self.audio_enc_w);
        f("audio_enc.b", &self.audio_enc_b);
        for (name, c) in [
            ("conv_in", &self.conv_in),
            ("down", &self.down),
            ("mid1", &self.mid1),
            ("mid2", &self.mid2),
            ("up", &self.up),
            ("conv_out", &self.conv_out),
        ] {
            f(&format!("{name}.w"), &c.w);
            f(&format!("{name}.b"), &c.b);
        }
        f("time_emb", &self.time_emb);
        self.attn.visit(&mut |n, t| f(&format!("attn.{n}"), t));
        self.msm.visit(&mut |n, t| f(&format!("msm.{n}"), t));
        self.sfm.visit(&mut |n, t| f(&format!("sfm.{n}"), t));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("audio_enc.w", &mut self.audio_enc_w);
        f("audio_enc.b", &mut self.audio_enc_b);
        for (name, c) in [
            ("conv_in", &mut self.conv_in),
            ("down", &mut self.down),
            ("mid1", &mut self.mid1),
            ("mid2", &mut self.mid2),
            ("up", &mut self.up),
            ("conv_out", &mut self.conv_out),
        ] {
            f(&format!("{name}.w"), &mut c.w);
            f(&format!("{name}.b"), &mut c.b);
        }
        f("time_emb", &mut self.time_emb);
        self.attn.visit_mut(&mut |n, t| f(&format!("attn.{n}"), t));
        self.msm.visit_mut(&mut |n, t| f(&format!("msm.{n}"), t));
        self.sfm.visit_mut(&mut |n, t| f(&format!("sfm.{n}"), t));
    }
}

/// Graph handles for every parameter, in [`ParamGroup::visit`] order.
#[derive(Clone, Debug)]
pub struct UNetVars {
    pub audio_enc_w: Var,
    pub audio_enc_b: Var,
    pub conv_in: (Var, Var),
    pub time_emb: Var,
    pub down: (Var, Var),
    pub mid1: (Var, Var),
    pub attn: AttentionVars,
    pub mid2: (Var, Var),
    pub up: (Var, Var),
    pub conv_out: (Var, Var),
    pub msm: MsmVars,
    pub sfm: SfmVars,
}

impl UNetVars {
    pub fn in_visit_order(&self) -> Vec<Var> {
        let mut v = vec![self.audio_enc_w, self.audio_enc_b];
        for c in [self.conv_in, self.down, self.mid1, self.mid2, self.up, self.conv_out] {
            v.extend([c.0, c.1]);
        }
        v.push(self.time_emb);
        v.extend([self.attn.wq, self.attn.wk, self.attn.wv]);
        v.extend(self.msm.all());
        v.extend(self.sfm.all());
        v
    }
}

/// Inputs for one forward pass, all as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct UNetInputs {
    /// `[f, c, h, w]`.
    pub z_t: Var,
    /// 1-based diffusion step.
    pub t: usize,
    /// Raw audio features `[audio_window, audio_len]`.
    pub audio: Var,
    /// Reference frame repeated per frame, `[f, c, h, w]`.
    pub reference: Var,
}

/// Repeats a `[c, h, w]` reference frame `frames` times.
pub fn repeat_reference(reference: &Tensor, frames: usize) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(reference.shape());
    let one = reference.reshape(&shape)?;
    Tensor::concat(&vec![&one; frames], 0)
}

fn check_inputs(g: &Graph, dims: &UNetDims, x: &UNetInputs) -> Result<()> {
    let latent = dims.latent_shape();
    if g.shape(x.z_t) != latent {
        return Err(Error::shape("unet latent", &latent, g.shape(x.z_t)));
    }
    if g.shape(x.reference) != latent {
        return Err(Error::shape("unet reference", &latent, g.shape(x.reference)));
    }
    let audio = [dims.audio_window, dims.audio_len];
    if g.shape(x.audio) != audio {
        return Err(Error::shape("unet audio", &audio, g.shape(x.audio)));
    }
    if x.t == 0 || x.t > dims.timesteps {
        return Err(Error::InvalidArgument(format!("timestep {} outside 1..={}", x.t, dims.timesteps)));
    }
    Ok(())
}

/// Records the noise prediction for one clip.
pub fn unet_forward_graph(g: &mut Graph, dims: &UNetDims, p: &UNetVars, x: &UNetInputs, flags: Flags) -> Result<Var> {
    check_inputs(g, dims, x)?;
    let f = dims.frames;

    // Audio path.
    let enc = g.matmul(p.audio_enc_w, x.audio)?;
    let enc = g.bias_add(enc, p.audio_enc_b, 0)?;
    let s_hat = if flags.use_msm {
        msm::msm_forward_graph(g, enc, x.z_t, &p.msm)?
    } else {
        enc
    };
    let tokens = msm::audio_tokens_graph(g, s_hat, f)?;

    // Encoder.
    let inp = g.concat(&[x.z_t, x.reference], 1)?;
    let h1 = g.conv2d(inp, p.conv_in.0, p.conv_in.1, 1)?;
    let temb = g.slice(p.time_emb, 0, x.t - 1, 1)?;
    let temb = g.reshape(temb, &[dims.base])?;
    let h1 = g.bias_add(h1, temb, 1)?;
    let h1 = g.silu(h1)?;
    let h2 = g.conv2d(h1, p.down.0, p.down.1, 2)?;
    let h2 = g.silu(h2)?;

    // Bottleneck.
    let b = g.conv2d(h2, p.mid1.0, p.mid1.1, 1)?;
    let b = g.silu(b)?;
    let [_, c_mid, bh, bw] = dims.bottleneck_shape();
    let mut per_frame = Vec::with_capacity(f);
    for i in 0..f {
        let fr = g.slice(b, 0, i, 1)?;
        let fr = g.reshape(fr, &[c_mid, bh * bw])?;
        let video = g.transpose(fr)?;
        let lo = i.saturating_sub(AUDIO_CONTEXT);
        let hi = (i + AUDIO_CONTEXT + 1).min(f);
        let audio = g.slice(tokens, 0, lo, hi - lo)?;
        let (attended, _) = msm::audio_attention_graph(g, video, audio, &p.attn)?;
        let back = g.transpose(attended)?;
        per_frame.push(g.reshape(back, &[1, c_mid, bh, bw])?);
    }
    let b = g.concat(&per_frame, 0)?;
    let b = g.conv2d(b, p.mid2.0, p.mid2.1, 1)?;
    let mut b = g.silu(b)?;
    if flags.use_sfm {
        b = sfm::sfm_forward_graph(g, b, &p.sfm)?;
    }

    // Decoder.
    let u = g.upsample2x(b)?;
    let u = g.concat(&[u, h1], 1)?;
    let u = g.conv2d(u, p.up.0, p.up.1, 1)?;
    let u = g.silu(u)?;
    g.conv2d(u, p.conv_out.0, p.conv_out.1, 1)
}

/// Noise prediction as a plain value.
pub fn unet_forward(z_t: &Tensor, t: usize, audio: &Tensor, reference: &Tensor, params: &ToyUNetParams, flags: Flags) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let inputs = UNetInputs {
        z_t: g.leaf(z_t.clone()),
        t,
        audio: g.leaf(audio.clone()),
        reference: g.leaf(repeat_reference(reference, params.dims.frames)?),
    };
    let out = unet_forward_graph(&mut g, &params.dims, &vars, &inputs, flags)?;
    Ok(g.value(out).clone())
}

//! Multi-scale spectral module: latent-driven reweighting of the audio
//! embedding's Haar sub-bands, plus the audio cross-attention that injects
//! the reconstructed embedding into video features.
//!
//! The noisy latent `z_t` (layout `[f, c, d_w, d_h]`) is multiplied
//! elementwise by a tunable tensor `w`, split into four chunks along `d_w`,
//! and each chunk is mean-pooled to a scalar. A 4 -> hidden -> 4 network
//! with ReLU maps the pooled vector to one weight per sub-band, applied in
//! the order (LL, LH, HL, HH) before the inverse transform.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;
use crate::wavelet::{self, SubBands};

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct MsmParams {
    /// Same shape as the latent.
    pub w: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub fc2_w: Tensor,
    pub fc2_b: Tensor,
}

impl MsmParams {
    /// Identity-at-init parameters: `w = 1`, all FC weights 0, output bias 1.
    pub fn identity(latent_shape: &[usize], hidden: usize) -> Self {
        MsmParams {
            w: Tensor::ones(latent_shape),
            fc1_w: Tensor::zeros(&[4, hidden]),
            fc1_b: Tensor::zeros(&[hidden]),
            fc2_w: Tensor::zeros(&[hidden, 4]),
            fc2_b: Tensor::ones(&[4]),
        }
    }

    /// Trainable initialization. The first layer is random so the hidden
    /// units carry gradient; the output layer is zero, so the module still
    /// starts as the identity.
    pub fn new<R: Rng + ?Sized>(latent_shape: &[usize], hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::identity(latent_shape, hidden);
        p.fc1_w = Tensor::randn(&[4, hidden], rng).scale(0.5);
        p
    }

    pub fn hidden(&self) -> usize {
        self.fc1_b.len()
    }

    pub fn bind(&self, g: &mut Graph) -> MsmVars {
        MsmVars {
            w: g.leaf(self.w.clone()),
            fc1_w: g.leaf(self.fc1_w.clone()),
            fc1_b: g.leaf(self.fc1_b.clone()),
            fc2_w: g.leaf(self.fc2_w.clone()),
            fc2_b: g.leaf(self.fc2_b.clone()),
        }
    }
}

impl ParamGroup for MsmParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("w", &self.w);
        f("fc1_w", &self.fc1_w);
        f("fc1_b", &self.fc1_b);
        f("fc2_w", &self.fc2_w);
        f("fc2_b", &self.fc2_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w", &mut self.w);
        f("fc1_w", &mut self.fc1_w);
        f("fc1_b", &mut self.fc1_b);
        f("fc2_w", &mut self.fc2_w);
        f("fc2_b", &mut self.fc2_b);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MsmVars {
    pub w: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl MsmVars {
    pub fn all(&self) -> [Var; 5] {
        [self.w, self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]
    }
}

/// Encoded audio `[d_a, l]` spanning `frames` video frames.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioEmbedding {
    values: Tensor,
    frames: usize,
}

impl AudioEmbedding {
    pub fn new(values: Tensor, frames: usize) -> Result<Self> {
        let &[d_a, l] = values.shape() else {
            return Err(Error::invalid_shape("audio embedding", format!("expected [d_a, l], got {:?}", values.shape())));
        };
        for (axis, size) in [(0, d_a), (1, l)] {
            if size % 2 != 0 {
                return Err(Error::OddDimension { op: "audio embedding", axis, size });
            }
        }
        check_segments(l, frames)?;
        Ok(AudioEmbedding { values, frames })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

fn check_segments(l: usize, frames: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidArgument("audio must span at least one frame (zero audio tokens)".into()));
    }
    if !l.is_multiple_of(frames) {
        return Err(Error::InvalidArgument(format!("audio length {l} is not divisible by {frames} frames")));
    }
    Ok(())
}

fn check_latent(w: &[usize], z: &[usize]) -> Result<()> {
    if w != z {
        return Err(Error::shape("chunk_weights", w, z));
    }
    if z.len() != 4 {
        return Err(Error::invalid_shape("chunk_weights", format!("latent must be [f, c, d_w, d_h], got {z:?}")));
    }
    if !z[2].is_multiple_of(4) {
        return Err(Error::invalid_shape("chunk_weights", format!("d_w = {} is not divisible by 4", z[2])));
    }
    Ok(())
}

/// Records the four sub-band weights derived from `z_t`; returns a `[4]` node.
pub fn chunk_weights_graph(g: &mut Graph, z_t: Var, p: &MsmVars) -> Result<Var> {
    check_latent(g.shape(p.w), g.shape(z_t))?;
    let wz = g.mul(p.w, z_t)?;
    let quarter = g.shape(wz)[2] / 4;
    let mut pooled = Vec::with_capacity(4);
    for i in 0..4 {
        let chunk = g.slice(wz, 2, i * quarter, quarter)?;
        let m = g.mean(chunk)?;
        pooled.push(g.reshape(m, &[1])?);
    }
    let v = g.concat(&pooled, 0)?;
    let v = g.reshape(v, &[1, 4])?;
    let h = g.matmul(v, p.fc1_w)?;
    let h = g.bias_add(h, p.fc1_b, 1)?;
    let h = g.relu(h);
    let o = g.matmul(h, p.fc2_w)?;
    let o = g.bias_add(o, p.fc2_b, 1)?;
    g.reshape(o, &[4])
}

/// Records the reweighted reconstruction of `audio` (`[d_a, l]`).
pub fn msm_forward_graph(g: &mut Graph, audio: Var, z_t: Var, p: &MsmVars) -> Result<Var> {
    let weights = chunk_weights_graph(g, z_t, p)?;
    let bands = g.dwt2(audio)?;
    let mut scaled = bands;
    for (i, b) in bands.iter().enumerate() {
        let wi = g.slice(weights, 0, i, 1)?;
        scaled[i] = g.mul_scalar(*b, wi)?;
    }
    g.idwt2(scaled)
}

/// The four sub-band weights `[w_LL, w_LH, w_HL, w_HH]`.
pub fn chunk_weights(z_t: &Tensor, p: &MsmParams) -> Result<[f64; 4]> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let z = g.leaf(z_t.clone());
    let out = chunk_weights_graph(&mut g, z, &vars)?;
    let d = g.value(out).data();
    Ok([d[0], d[1], d[2], d[3]])
}

pub fn apply_spectral_weights(s: &SubBands, weights: [f64; 4]) -> SubBands {
    SubBands {
        ll: s.ll.scale(weights[0]),
        lh: s.lh.scale(weights[1]),
        hl: s.hl.scale(weights[2]),
        hh: s.hh.scale(weights[3]),
    }
}

/// Conditioned audio: inverse transform of the latent-weighted sub-bands.
pub fn msm_forward(audio: &AudioEmbedding, z_t: &Tensor, p: &MsmParams) -> Result<Tensor> {
    let weights = chunk_weights(z_t, p)?;
    let bands = wavelet::dwt2(audio.values())?;
    wavelet::idwt2(&apply_spectral_weights(&bands, weights))
}

/// Averaging matrix `[l, frames]` whose column `k` averages the `k`-th
/// contiguous segment of `l / frames` columns.
pub fn segment_mean_matrix(l: usize, frames: usize) -> Result<Tensor> {
    check_segments(l, frames)?;
    let seg = l / frames;
    let mut data = vec![0.0; l * frames];
    for j in 0..l {
        data[j * frames + j / seg] = 1.0 / seg as f64;
    }
    Tensor::new(vec![l, frames], data)
}

/// One audio token per frame: `[d_a, l] -> [frames, d_a]` by segment averaging.
pub fn audio_tokens_graph(g: &mut Graph, s_hat: Var, frames: usize) -> Result<Var> {
    let l = g.shape(s_hat)[1];
    let m = g.leaf(segment_mean_matrix(l, frames)?);
    let per_frame = g.matmul(s_hat, m)?;
    g.transpose(per_frame)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// Query projection `[d, k]` applied to video tokens.
    pub wq: Tensor,
    /// Key projection `[d_a, k]`.
    pub wk: Tensor,
    /// Value projection `[d_a, d]`, written back into the video stream.
    pub wv: Tensor,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(d: usize, d_audio: usize, d_key: usize, rng: &mut R) -> Self {
        AttentionParams {
            wq: Tensor::randn(&[d, d_key], rng).scale(1.0 / (d as f64).sqrt()),
            wk: Tensor::randn(&[d_audio, d_key], rng).scale(1.0 / (d_audio as f64).sqrt()),
            wv: Tensor::randn(&[d_audio, d], rng).scale(0.1 / (d_audio as f64).sqrt()),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> AttentionVars {
        AttentionVars {
            wq: g.leaf(self.wq.clone()),
            wk: g.leaf(self.wk.clone()),
            wv: g.leaf(self.wv.clone()),
        }
    }
}

impl ParamGroup for AttentionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("wq", &self.wq);
        f("wk", &self.wk);
        f("wv", &self.wv);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("wq", &mut self.wq);
        f("wk", &mut self.wk);
        f("wv", &mut self.wv);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Single-head cross-attention with a residual connection.
///
/// `video: [n_v, d]` supplies queries, `audio: [n_a, d_a]` supplies keys and
/// values. Returns the output node and the `[n_v, n_a]` attention weights.
pub fn audio_attention_graph(g: &mut Graph, video: Var, audio: Var, p: &AttentionVars) -> Result<(Var, Var)> {
    let q = g.matmul(video, p.wq)?;
    let k = g.matmul(audio, p.wk)?;
    let v = g.matmul(audio, p.wv)?;
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let d_key = g.shape(q)[1] as f64;
    let logits = g.scale(logits, 1.0 / d_key.sqrt());
    let attn = g.softmax_rows(logits)?;
    let mixed = g.matmul(attn, v)?;
    Ok((g.add(video, mixed)?, attn))
}

/// Pure-value form of [`audio_attention_graph`]; returns output and weights.
pub fn audio_attention(video: &Tensor, audio: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let v = g.leaf(video.clone());
    let a = g.leaf(audio.clone());
    let (out, attn) = audio_attention_graph(&mut g, v, a, &vars)?;
    Ok((g.value(out).clone(), g.value(attn).clone()))
}

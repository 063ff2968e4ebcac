//! Ancestral sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::schedule::NoiseSchedule;
use super::unet::{unet_forward, Flags, ToyUNetParams};

/// Anything that predicts the noise in `z_t` at step `t`.
pub trait Denoiser {
    fn predict_noise(&self, z_t: &Tensor, t: usize) -> Result<Tensor>;
}

/// The toy UNet bound to one audio track and reference frame.
pub struct ToyDenoiser<'a> {
    pub params: &'a ToyUNetParams,
    pub audio: &'a Tensor,
    pub reference: &'a Tensor,
    pub flags: Flags,
}

impl Denoiser for ToyDenoiser<'_> {
    fn predict_noise(&self, z_t: &Tensor, t: usize) -> Result<Tensor> {
        unet_forward(z_t, t, self.audio, self.reference, self.params, self.flags)
    }
}

/// Runs the reverse chain from `z_T ~ N(0, I)` down to a `z_0` estimate.
pub fn sample_with<D: Denoiser + ?Sized>(model: &D, shape: &[usize], s: &NoiseSchedule, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Tensor::randn(shape, &mut rng);
    for t in (1..=s.steps()).rev() {
        let eps = model.predict_noise(&z, t)?;
        let (alpha, beta, ab) = (s.alpha(t)?, s.beta(t)?, s.alpha_bar(t)?);
        let c = beta / (1.0 - ab).sqrt();
        let mut next = z.zip_with(&eps, "sample", |x, e| (x - c * e) / alpha.sqrt())?;
        if t > 1 {
            let sigma = s.posterior_variance(t)?.sqrt();
            let noise = Tensor::randn(shape, &mut rng);
            next = next.zip_with(&noise, "sample", |m, n| m + sigma * n)?;
        }
        if !next.all_finite() {
            return Err(Error::Numeric(format!("sampler produced non-finite values at step {t}")));
        }
        z = next;
    }
    Ok(z)
}

/// Generates a clip `[f, c, h, w]` conditioned on `audio` and `reference` (`[c, h, w]`).
pub fn sample(params: &ToyUNetParams, audio: &Tensor, reference: &Tensor, s: &NoiseSchedule, seed: u64, flags: Flags) -> Result<Tensor> {
    if s.steps() != params.dims.timesteps {
        return Err(Error::InvalidArgument(format!(
            "schedule has {} steps but the model was built for {}",
            s.steps(),
            params.dims.timesteps
        )));
    }
    let model = ToyDenoiser {
        params,
        audio,
        reference,
        flags,
    };
    sample_with(&model, &params.dims.latent_shape(), s, seed)
}

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 50;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Linear beta schedule with derived cumulative products. Steps are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, BETA_START, BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.beta(t)?)
    }

    /// Cumulative product of `1 - beta` up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// Variance of the reverse-process posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        let ab_prev = self.alpha_bar(t - 1)?;
        Ok(self.beta(t)? * (1.0 - ab_prev) / (1.0 - ab))
    }
}

/// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` for an explicit cumulative alpha.
pub fn diffuse_with_alpha_bar(z0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.zip_with(eps, "forward_diffuse", |x, e| a * x + b * e)
}

pub fn forward_diffuse(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    s.check(t)?;
    diffuse_with_alpha_bar(z0, eps, s.alpha_bar(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 50);
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert!((s.beta(50).unwrap() - 0.02).abs() < 1e-15);
        assert!(s.alpha_bar(0).unwrap() <= 1.0);
        for t in 1..=50 {
            assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
        }
        assert!(s.beta(0).is_err() && s.beta(51).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn diffusion_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let z0 = Tensor::randn(&[3, 4], &mut r);
        let eps = Tensor::randn(&[3, 4], &mut r);
        assert_eq!(diffuse_with_alpha_bar(&z0, &eps, 1.0).unwrap(), z0);
        assert_eq!(diffuse_with_alpha_bar(&z0, &eps, 0.0).unwrap(), eps);
        let q = diffuse_with_alpha_bar(&z0, &eps, 0.25).unwrap();
        let want = z0.scale(0.5).add(&eps.scale(3f64.sqrt() / 2.0)).unwrap();
        assert!(q.max_abs_diff(&want).unwrap() < 1e-15);
        let s = NoiseSchedule::default();
        assert!(forward_diffuse(&z0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&z0, 51, &eps, &s).is_err());
        assert!(forward_diffuse(&z0, 1, &Tensor::zeros(&[4, 3]), &s).is_err());
    }

    #[test]
    fn variance_contract() {
        let s = NoiseSchedule::default();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let z0 = Tensor::randn(&[20_000], &mut r);
        let eps = Tensor::randn(&[20_000], &mut r);
        for t in [1, 10, 25, 50] {
            let zt = forward_diffuse(&z0, t, &eps, &s).unwrap();
            let mean = zt.mean_pool_all().unwrap();
            let var = zt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / zt.len() as f64;
            let ab = s.alpha_bar(t).unwrap();
            let var0 = {
                let m = z0.mean_pool_all().unwrap();
                z0.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / z0.len() as f64
            };
            let want = ab * var0 + (1.0 - ab);
            assert!((var - want).abs() / want < 0.05, "t={t}: {var} vs {want}");
        }
    }
}

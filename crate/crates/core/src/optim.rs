//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam grad", p.shape(), g.shape()));
        }
        if p.shape() != m.shape() {
            return Err(Error::shape("adam state", p.shape(), m.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(&[1.0, -2.0])];
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m1 = 0.1 g, v1 = 0.001 g^2, mhat = g, vhat = g^2, delta = -lr g / (|g| + eps).
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.01);
        adam_step(&mut p, &[Tensor::vector(&g)], &mut s, &cfg).unwrap();
        for (got, gv) in p[0].data().iter().zip(g) {
            let want = -0.01 * gv / (gv.abs() + 1e-8);
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let g = 0.5;
        let cfg = AdamConfig::with_lr(0.1);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 2.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
        }
        let mut p = vec![Tensor::vector(&[2.0])];
        let mut s = AdamState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &[Tensor::vector(&[g])], &mut s, &cfg).unwrap();
        }
        assert!((p[0].data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut s, &AdamConfig::default()).is_err());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, &AdamConfig::with_lr(-1.0)).is_err());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, &AdamConfig::with_lr(0.0)).is_err());
    }
}

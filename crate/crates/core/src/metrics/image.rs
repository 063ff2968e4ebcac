//! Frame fidelity: PSNR and windowed SSIM.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB; identical inputs give `Infinite`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<Psnr> {
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let mse = a.sub(b)?.norm_sq() / a.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / mse).log10()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    ssim_with(a, b, peak, &SsimParams::default())
}

/// Mean SSIM over all fully covered window positions. Tensors of rank > 2 are
/// treated as stacks of 2-D images over their last two axes.
pub fn ssim_with(a: &Tensor, b: &Tensor, peak: f64, p: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    if a.rank() < 2 {
        return Err(Error::invalid_shape("ssim", format!("need at least 2 axes, got {:?}", a.shape())));
    }
    let r = a.rank();
    let (h, w) = (a.shape()[r - 2], a.shape()[r - 1]);
    if h < p.window || w < p.window {
        return Err(Error::invalid_shape("ssim", format!("image {h}x{w} is smaller than the {0}x{0} window", p.window)));
    }
    if peak.is_nan() || peak <= 0.0 {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    let taps = p.taps();
    let c1 = (p.k1 * peak).powi(2);
    let c2 = (p.k2 * peak).powi(2);
    let slices = a.len() / (h * w);
    let mut total = 0.0;
    for s in 0..slices {
        let xa = &a.data()[s * h * w..(s + 1) * h * w];
        let xb = &b.data()[s * h * w..(s + 1) * h * w];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { xa.iter().zip(xb).map(|(&u, &v)| f(u, v)).collect() };
        let mu_a = filter_valid(xa, h, w, &taps);
        let mu_b = filter_valid(xb, h, w, &taps);
        let aa = filter_valid(&prod(|u, _| u * u), h, w, &taps);
        let bb = filter_valid(&prod(|_, v| v * v), h, w, &taps);
        let ab = filter_valid(&prod(|u, v| u * v), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / slices as f64)
}

/// Separable "valid" correlation of an `h x w` image with `taps` on both axes.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps.iter().enumerate().map(|(t, &c)| c * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps.iter().enumerate().map(|(t, &c)| c * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

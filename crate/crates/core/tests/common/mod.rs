#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waveletcond::diffusion::UNetDims;
use waveletcond::params::ParamGroup;
use waveletcond::Tensor;

pub const FD_STEP: f64 = 1e-4;
/// Gradients below this are compared absolutely; both sides are then round-off.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug)]
pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub failures: Vec<Mismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

fn set(p: &mut impl ParamGroup, target: usize, index: usize, value: f64) {
    let mut k = 0;
    p.visit_mut(&mut |_, t| {
        if k == target {
            t.data_mut()[index] = value;
        }
        k += 1;
    });
}

/// Central differences for every element of every tensor in `params`,
/// compared with `grads` (one tensor per parameter, visiting order).
pub fn check_gradients<P: ParamGroup + Clone>(params: &P, grads: &[Tensor], tol: f64, loss: impl Fn(&P) -> f64) -> GradReport {
    let mut tensors = Vec::new();
    params.visit(&mut |name, t| tensors.push((name.to_string(), t.clone())));
    assert_eq!(tensors.len(), grads.len(), "one gradient per parameter");
    let mut report = GradReport::default();
    for (ti, ((name, t), g)) in tensors.iter().zip(grads).enumerate() {
        assert_eq!(t.shape(), g.shape(), "gradient shape for {name}");
        for i in 0..t.len() {
            let x = t.data()[i];
            let mut p = params.clone();
            set(&mut p, ti, i, x + FD_STEP);
            let up = loss(&p);
            set(&mut p, ti, i, x - FD_STEP);
            let down = loss(&p);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.data()[i];
            let diff = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            report.checked += 1;
            report.worst_abs = report.worst_abs.max(diff);
            if diff > ABS_FLOOR {
                report.worst_rel = report.worst_rel.max(diff / scale);
                if diff > tol * scale {
                    report.failures.push(Mismatch {
                        name: name.clone(),
                        index: i,
                        analytic,
                        numeric,
                    });
                }
            }
        }
    }
    report
}

/// Model small enough for an exhaustive gradient check.
pub fn tiny_dims() -> UNetDims {
    UNetDims {
        frames: 2,
        channels: 1,
        height: 8,
        width: 8,
        base: 4,
        mid: 8,
        audio_window: 4,
        audio_len: 4,
        d_audio: 4,
        d_key: 4,
        msm_hidden: 4,
        timesteps: 10,
    }
}

pub mod cases {
    use super::*;
    use waveletcond::autodiff::Graph;
    use waveletcond::diffusion::train::{loss_and_grads, train_loss, Example};
    use waveletcond::diffusion::data::make_synthetic_dataset_with;
    use waveletcond::diffusion::{Flags, NoiseSchedule, SyntheticOptions, ToyUNetParams};
    use waveletcond::msm::{self, AudioEmbedding, MsmParams};
    use waveletcond::sfm::{self, SfmParams};

    fn jitter(p: &mut impl ParamGroup, scale: f64, seed: u64) {
        let mut r = rng(seed);
        p.visit_mut(&mut |_, t| {
            let noise = Tensor::randn(t.shape(), &mut r).scale(scale);
            *t = t.add(&noise).unwrap();
        });
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// MSM on a `[2, 1, 8, 8]` latent and a `[4, 8]` audio embedding.
    pub fn msm(tol: f64) -> GradReport {
        let mut r = rng(11);
        let shape = [2, 1, 8, 8];
        let z = Tensor::randn(&shape, &mut r);
        let audio = Tensor::randn(&[4, 8], &mut r);
        let probe = Tensor::randn(&[4, 8], &mut r);
        let mut p = MsmParams::new(&shape, 4, &mut r);
        jitter(&mut p, 0.3, 12);

        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let (a, zv, pr) = (g.leaf(audio.clone()), g.leaf(z.clone()), g.leaf(probe.clone()));
        let out = msm::msm_forward_graph(&mut g, a, zv, &vars).unwrap();
        let weighted = g.mul(out, pr).unwrap();
        let loss = g.sum(weighted);
        let grads = g.backward(loss).unwrap();
        let grads: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt(v)).collect();

        let emb = AudioEmbedding::new(audio, 2).unwrap();
        check_gradients(&p, &grads, tol, |p| dot(&msm::msm_forward(&emb, &z, p).unwrap(), &probe))
    }

    /// SFM on `[2, 3, 4, 6]` features.
    pub fn sfm(tol: f64) -> GradReport {
        let mut r = rng(21);
        let shape = [2, 3, 4, 6];
        let h = Tensor::randn(&shape, &mut r);
        let probe = Tensor::randn(&shape, &mut r);
        let mut p = SfmParams::new(&shape).unwrap();
        jitter(&mut p, 0.5, 22);

        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let (hv, pr) = (g.leaf(h.clone()), g.leaf(probe.clone()));
        let out = sfm::sfm_forward_graph(&mut g, hv, &vars).unwrap();
        let weighted = g.mul(out, pr).unwrap();
        let loss = g.sum(weighted);
        let grads = g.backward(loss).unwrap();
        let grads: Vec<Tensor> = vars.all().iter().map(|&v| grads.wrt(v)).collect();

        check_gradients(&p, &grads, tol, |p| dot(&sfm::sfm_forward(&h, p).unwrap(), &probe))
    }

    /// Every parameter of the full toy model through the training loss.
    pub fn unet(tol: f64) -> (usize, GradReport) {
        let dims = tiny_dims();
        let mut p = ToyUNetParams::new(dims.clone(), 31).unwrap();
        // Move the modules off their initial values so no gradient is trivially zero.
        jitter(&mut p.msm, 0.3, 32);
        jitter(&mut p.sfm, 0.3, 33);
        let s = NoiseSchedule::linear(dims.timesteps, 1e-4, 0.02).unwrap();
        let opts = SyntheticOptions {
            audio_window: 4,
            samples_per_frame: 2,
            ..Default::default()
        };
        let ds = make_synthetic_dataset_with(2, 2, 8, 8, 34, &opts).unwrap();
        let mut r = rng(35);
        let batch: Vec<Example> = ds
            .clips
            .iter()
            .zip([3, 8])
            .map(|(c, t)| Example::from_clip(c, t, Tensor::randn(c.frames.shape(), &mut r)).unwrap())
            .collect();
        let (_, grads) = loss_and_grads(&batch, &p, &s, Flags::FULL).unwrap();
        let report = check_gradients(&p, &grads, tol, |p| train_loss(&batch, p, &s, Flags::FULL).unwrap());
        (p.num_params(), report)
    }
}

/// SSIM evaluated window by window with the full 2-D Gaussian kernel.
pub fn naive_ssim(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let taps = waveletcond::metrics::SsimParams::default().taps();
    let n = taps.len();
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let at = |t: &Tensor, y: usize, x: usize| t.data()[y * w + x];
    let mut total = 0.0;
    let mut count = 0.0;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..n {
                for v in 0..n {
                    ma += taps[u] * taps[v] * at(a, y + u, x + v);
                    mb += taps[u] * taps[v] * at(b, y + u, x + v);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..n {
                for v in 0..n {
                    let k = taps[u] * taps[v];
                    let (da, db) = (at(a, y + u, x + v) - ma, at(b, y + u, x + v) - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    total / count
}

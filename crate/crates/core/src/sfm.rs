//! Self-adaptive filter module for bottleneck features `[f, c_a, hw, hh]`.
//!
//! The features are split into Haar sub-bands, each reweighted elementwise
//! by a tunable tensor, and reconstructed. A sigmoid gate computed from the
//! unfiltered features by a 1x1 channel-mixing layer then scales the
//! reconstruction.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SfmParams {
    /// Sub-band weights in (LL, LH, HL, HH) order, each `[f, c_a, hw/2, hh/2]`.
    pub w_h: [Tensor; 4],
    /// Channel mixing `[c_a (out), c_a (in)]`.
    pub gate_w: Tensor,
    pub gate_b: Tensor,
}

impl SfmParams {
    /// `w_h = 1`, gate weights and bias 0.
    pub fn new(feature_shape: &[usize]) -> Result<Self> {
        let &[f, c, hw, hh] = feature_shape else {
            return Err(Error::invalid_shape("sfm", format!("features must be [f, c_a, hw, hh], got {feature_shape:?}")));
        };
        for (axis, size) in [(2, hw), (3, hh)] {
            if size % 2 != 0 {
                return Err(Error::OddDimension { op: "sfm", axis, size });
            }
        }
        let band = [f, c, hw / 2, hh / 2];
        Ok(SfmParams {
            w_h: std::array::from_fn(|_| Tensor::ones(&band)),
            gate_w: Tensor::zeros(&[c, c]),
            gate_b: Tensor::zeros(&[c]),
        })
    }

    pub fn channels(&self) -> usize {
        self.gate_b.len()
    }

    pub fn bind(&self, g: &mut Graph) -> SfmVars {
        SfmVars {
            w_h: std::array::from_fn(|i| g.leaf(self.w_h[i].clone())),
            gate_w: g.leaf(self.gate_w.clone()),
            gate_b: g.leaf(self.gate_b.clone()),
        }
    }
}

const BAND_NAMES: [&str; 4] = ["w_ll", "w_lh", "w_hl", "w_hh"];

impl ParamGroup for SfmParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, t) in BAND_NAMES.iter().zip(&self.w_h) {
            f(name, t);
        }
        f("gate_w", &self.gate_w);
        f("gate_b", &self.gate_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (name, t) in BAND_NAMES.iter().zip(&mut self.w_h) {
            f(name, t);
        }
        f("gate_w", &mut self.gate_w);
        f("gate_b", &mut self.gate_b);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SfmVars {
    pub w_h: [Var; 4],
    pub gate_w: Var,
    pub gate_b: Var,
}

impl SfmVars {
    pub fn all(&self) -> [Var; 6] {
        [self.w_h[0], self.w_h[1], self.w_h[2], self.w_h[3], self.gate_w, self.gate_b]
    }
}

/// Records `sigmoid(gate_w . h + gate_b)` at every frame and spatial position.
pub fn gate_map_graph(g: &mut Graph, h: Var, p: &SfmVars) -> Result<Var> {
    let &[f, c, hw, hh] = g.shape(h) else {
        return Err(Error::invalid_shape("gate_map", format!("features must be rank 4, got {:?}", g.shape(h))));
    };
    if g.shape(p.gate_w) != [c, c] {
        return Err(Error::shape("gate_map", g.shape(h), g.shape(p.gate_w)));
    }
    let mut frames = Vec::with_capacity(f);
    for i in 0..f {
        let x = g.slice(h, 0, i, 1)?;
        let x = g.reshape(x, &[c, hw * hh])?;
        let mixed = g.matmul(p.gate_w, x)?;
        let mixed = g.bias_add(mixed, p.gate_b, 0)?;
        frames.push(g.reshape(mixed, &[1, c, hw, hh])?);
    }
    let logits = g.concat(&frames, 0)?;
    Ok(g.sigmoid(logits))
}

/// Records the filtered features `w_a * idwt2(w_h * dwt2(h))`.
pub fn sfm_forward_graph(g: &mut Graph, h: Var, p: &SfmVars) -> Result<Var> {
    let bands = g.dwt2(h)?;
    let mut weighted = bands;
    for i in 0..4 {
        if g.shape(p.w_h[i]) != g.shape(bands[i]) {
            return Err(Error::shape("sfm", g.shape(bands[i]), g.shape(p.w_h[i])));
        }
        weighted[i] = g.mul(p.w_h[i], bands[i])?;
    }
    let recon = g.idwt2(weighted)?;
    let gate = gate_map_graph(g, h, p)?;
    g.mul(gate, recon)
}

pub fn gate_map(h: &Tensor, p: &SfmParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let hv = g.leaf(h.clone());
    let out = gate_map_graph(&mut g, hv, &vars)?;
    Ok(g.value(out).clone())
}

pub fn sfm_forward(h: &Tensor, p: &SfmParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let hv = g.leaf(h.clone());
    let out = sfm_forward_graph(&mut g, hv, &vars)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;
    use crate::wavelet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: [usize; 4] = [2, 3, 4, 6];

    #[test]
    fn zero_features_give_zero() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut p = SfmParams::new(&SHAPE).unwrap();
        p.gate_w = Tensor::randn(&[3, 3], &mut r);
        p.gate_b = Tensor::randn(&[3], &mut r);
        assert_eq!(sfm_forward(&Tensor::zeros(&SHAPE), &p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn init_halves_features() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let h = Tensor::randn(&SHAPE, &mut r);
        let p = SfmParams::new(&SHAPE).unwrap();
        let out = sfm_forward(&h, &p).unwrap();
        assert!(out.max_abs_diff(&h.scale(0.5)).unwrap() < 1e-9);
    }

    #[test]
    fn doubling_band_weights_doubles_output() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let h = Tensor::randn(&SHAPE, &mut r);
        let mut p = SfmParams::new(&SHAPE).unwrap();
        for w in &mut p.w_h {
            *w = Tensor::randn(w.shape(), &mut r);
        }
        let base = sfm_forward(&h, &p).unwrap();
        for w in &mut p.w_h {
            *w = w.scale(2.0);
        }
        let doubled = sfm_forward(&h, &p).unwrap();
        assert!(doubled.max_abs_diff(&base.scale(2.0)).unwrap() < 1e-12);
    }

    #[test]
    fn gate_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let h = Tensor::randn(&SHAPE, &mut r);
        let mut p = SfmParams::new(&SHAPE).unwrap();
        assert!(gate_map(&h, &p).unwrap().data().iter().all(|&v| v == 0.5));
        p.gate_w = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        assert!(gate_map(&Tensor::zeros(&SHAPE), &p).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gate_matches_per_position_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let h = Tensor::randn(&SHAPE, &mut r);
        let mut p = SfmParams::new(&SHAPE).unwrap();
        p.gate_w = Tensor::randn(&[3, 3], &mut r);
        p.gate_b = Tensor::randn(&[3], &mut r);
        let got = gate_map(&h, &p).unwrap();
        let [f, c, hw, hh] = SHAPE;
        let idx = |a: usize, b: usize, x: usize, y: usize| ((a * c + b) * hw + x) * hh + y;
        for a in 0..f {
            for x in 0..hw {
                for y in 0..hh {
                    for o in 0..c {
                        let mut z = p.gate_b.data()[o];
                        for i in 0..c {
                            z += p.gate_w.data()[o * c + i] * h.data()[idx(a, i, x, y)];
                        }
                        assert!((got.data()[idx(a, o, x, y)] - sigmoid(z)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn output_bounded_by_reconstruction() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let h = Tensor::randn(&SHAPE, &mut r);
        let mut p = SfmParams::new(&SHAPE).unwrap();
        for w in &mut p.w_h {
            *w = Tensor::randn(w.shape(), &mut r);
        }
        p.gate_w = Tensor::randn(&[3, 3], &mut r);
        let out = sfm_forward(&h, &p).unwrap();
        let bands = wavelet::dwt2_batched(&h).unwrap();
        let recon = wavelet::idwt2_batched(&bands.map(|b, t| t.ew_mul(&p.w_h[b.index()]).unwrap()).unwrap()).unwrap();
        assert!(out.max_abs() <= recon.max_abs());
        for (o, rv) in out.data().iter().zip(recon.data()) {
            assert!(o.abs() <= rv.abs());
        }
    }

    #[test]
    fn shape_errors() {
        assert!(SfmParams::new(&[1, 2, 3, 4]).is_err());
        assert!(SfmParams::new(&[2, 4]).is_err());
        let p = SfmParams::new(&SHAPE).unwrap();
        assert!(sfm_forward(&Tensor::zeros(&[2, 3, 4, 8]), &p).is_err());
        assert!(gate_map(&Tensor::zeros(&[2, 2, 4, 6]), &p).is_err());
    }
}

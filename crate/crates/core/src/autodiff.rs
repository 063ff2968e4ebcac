//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as a node holding its forward value.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] simply walks it in reverse.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;
use crate::wavelet::{self, Band, SubBands};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize },
    Upsample2x(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    BiasAdd { x: Var, b: Var, axis: usize },
    HaarBand { x: Var, band: Band },
    Idwt2([Var; 4]),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; an unreachable node gets an all-zero tensor.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => *acc = acc.add(&g)?,
        None => *slot = Some(g),
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input tensor. Parameters and constants are both leaves;
    /// the caller decides which gradients it reads back.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).ew_mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Multiplies tensor `x` by the one-element node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let v = self.value(x).scale(sv);
        Ok(self.push(v, Op::MulScalar(x, s)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a)))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let v = ops::conv2d(self.value(x), self.value(w), self.value(b), stride)?;
        Ok(self.push(v, Op::Conv2d { x, w, b, stride }))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let v = ops::upsample2x(self.value(x))?;
        Ok(self.push(v, Op::Upsample2x(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).sigmoid();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).relu();
        self.push(v, Op::Relu(x))
    }

    /// `x * sigmoid(x)`, composed from primitives.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let s = self.sigmoid(x);
        self.mul(x, s)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax_rows(self.value(x))?;
        Ok(self.push(v, Op::SoftmaxRows(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).mean_pool_all()?);
        Ok(self.push(v, Op::Mean(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&vals, axis)?;
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_axis(axis, start, len)?;
        Ok(self.push(v, Op::Slice { x, axis, start }))
    }

    /// Adds the vector node `b` along `axis` of `x`.
    pub fn bias_add(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let v = ops::bias_add(self.value(x), self.value(b), axis)?;
        Ok(self.push(v, Op::BiasAdd { x, b, axis }))
    }

    /// Haar decomposition of `x` into four sub-band nodes (canonical order).
    pub fn dwt2(&mut self, x: Var) -> Result<[Var; 4]> {
        let mut out = [x; 4];
        for band in Band::ALL {
            let v = wavelet::analyze_band(self.value(x), band)?;
            out[band.index()] = self.push(v, Op::HaarBand { x, band });
        }
        Ok(out)
    }

    pub fn idwt2(&mut self, bands: [Var; 4]) -> Result<Var> {
        let s = SubBands::new(
            self.value(bands[0]).clone(),
            self.value(bands[1]).clone(),
            self.value(bands[2]).clone(),
            self.value(bands[3]).clone(),
        )?;
        let v = wavelet::idwt2_batched(&s)?;
        Ok(self.push(v, Op::Idwt2(bands)))
    }

    /// Exact reverse-mode gradients of the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::invalid_shape("backward", format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g.clone())?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone())?;
                    accumulate(&mut grads[b.0], g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.ew_mul(self.value(*b))?;
                    let gb = g.ew_mul(self.value(*a))?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s))?,
                Op::MulScalar(x, s) => {
                    let sv = self.value(*s).item()?;
                    let gs: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    accumulate(&mut grads[x.0], g.scale(sv))?;
                    accumulate(&mut grads[s.0], Tensor::full(self.shape(*s), gs))?;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose()?)?;
                    let gb = self.value(*a).transpose()?.matmul(&g)?;
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()?)?,
                Op::Conv2d { x, w, b, stride } => {
                    let (gx, gw, gb) = ops::conv2d_backward(self.value(*x), self.value(*w), self.value(*b), *stride, &g)?;
                    accumulate(&mut grads[x.0], gx)?;
                    accumulate(&mut grads[w.0], gw)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Upsample2x(x) => accumulate(&mut grads[x.0], ops::upsample2x_backward(&g)?)?,
                Op::Sigmoid(x) => {
                    let d = node.value.map(|y| y * (1.0 - y)).ew_mul(&g)?;
                    accumulate(&mut grads[x.0], d)?;
                }
                Op::Relu(x) => {
                    let d = self.value(*x).zip_with(&g, "relu", |v, gv| if v > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads[x.0], d)?;
                }
                Op::SoftmaxRows(x) => accumulate(&mut grads[x.0], ops::softmax_rows_backward(&node.value, &g)?)?,
                Op::Sum(x) => {
                    let gv = g.item()?;
                    accumulate(&mut grads[x.0], Tensor::full(self.shape(*x), gv))?;
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    let gv = g.item()? / n;
                    accumulate(&mut grads[x.0], Tensor::full(self.shape(*x), gv))?;
                }
                Op::Reshape(x) => accumulate(&mut grads[x.0], g.reshape(self.shape(*x))?)?,
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for p in parts {
                        let len = self.shape(*p)[*axis];
                        accumulate(&mut grads[p.0], g.slice_axis(*axis, start, len)?)?;
                        start += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let full = self.shape(*x);
                    let len = g.shape()[*axis];
                    let mut parts = Vec::new();
                    let before = (*start > 0).then(|| {
                        let mut s = full.to_vec();
                        s[*axis] = *start;
                        Tensor::zeros(&s)
                    });
                    let after_len = full[*axis] - start - len;
                    let after = (after_len > 0).then(|| {
                        let mut s = full.to_vec();
                        s[*axis] = after_len;
                        Tensor::zeros(&s)
                    });
                    if let Some(b) = &before {
                        parts.push(b);
                    }
                    parts.push(&g);
                    if let Some(a) = &after {
                        parts.push(a);
                    }
                    accumulate(&mut grads[x.0], Tensor::concat(&parts, *axis)?)?;
                }
                Op::BiasAdd { x, b, axis } => {
                    accumulate(&mut grads[b.0], ops::bias_grad(&g, *axis)?)?;
                    accumulate(&mut grads[x.0], g)?;
                }
                Op::HaarBand { x, band } => {
                    // Adjoint of one analysis band: synthesis with only that band populated.
                    let zeros = Tensor::zeros(g.shape());
                    let mut bands = [zeros.clone(), zeros.clone(), zeros.clone(), zeros];
                    bands[band.index()] = g;
                    let gx = wavelet::idwt2_batched(&SubBands::from_array(bands)?)?;
                    accumulate(&mut grads[x.0], gx)?;
                }
                Op::Idwt2(bands) => {
                    let s = wavelet::dwt2_batched(&g)?;
                    for band in Band::ALL {
                        accumulate(&mut grads[bands[band.index()].0], s.get(band).clone())?;
                    }
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of `f` w.r.t. every entry of `x`.
    fn fd(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-4;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Checks the vector-Jacobian product of a unary graph op against finite differences,
    /// projecting the output on a random direction.
    fn check_unary(x: Tensor, seed: u64, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe_shape = {
            let mut g = Graph::new();
            let v = g.leaf(x.clone());
            let y = build(&mut g, v);
            g.shape(y).to_vec()
        };
        let r = Tensor::randn(&probe_shape, &mut rng);
        let eval = |t: &Tensor| -> f64 {
            let mut g = Graph::new();
            let v = g.leaf(t.clone());
            let y = build(&mut g, v);
            g.value(y).ew_mul(&r).unwrap().sum()
        };
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let y = build(&mut g, v);
        let rv = g.leaf(r.clone());
        let p = g.mul(y, rv).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.wrt(v);
        for (a, n) in analytic.data().iter().zip(fd(&x, &eval)) {
            assert!(rel_err(*a, n) < 1e-4, "analytic {a} vs fd {n}");
        }
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item().unwrap(), 6.0);
    }

    #[test]
    fn sigmoid_sum_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[5]));
        let s = g.sigmoid(x);
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn detached_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(&[3]));
        let unused = g.leaf(Tensor::ones(&[2, 2]));
        let l = g.sum(x);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn independent_subgraphs_are_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xa = Tensor::randn(&[3, 4], &mut rng);
        let xb = Tensor::randn(&[4], &mut rng);
        let part_a = |g: &mut Graph, a: Var| {
            let s = g.sigmoid(a);
            g.sum(s)
        };
        let part_b = |g: &mut Graph, b: Var| {
            let s = g.mul(b, b).unwrap();
            g.mean(s).unwrap()
        };
        let mut g = Graph::new();
        let a = g.leaf(xa.clone());
        let b = g.leaf(xb.clone());
        let la = part_a(&mut g, a);
        let lb = part_b(&mut g, b);
        let l = g.add(la, lb).unwrap();
        let joint = g.backward(l).unwrap();

        let mut ga = Graph::new();
        let a2 = ga.leaf(xa);
        let la2 = part_a(&mut ga, a2);
        let mut gb = Graph::new();
        let b2 = gb.leaf(xb);
        let lb2 = part_b(&mut gb, b2);
        assert_eq!(joint.wrt(a), ga.backward(la2).unwrap().wrt(a2));
        assert_eq!(joint.wrt(b), gb.backward(lb2).unwrap().wrt(b2));
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        check_unary(Tensor::randn(&[3, 4], &mut rng), 1, |g, x| g.sigmoid(x));
        check_unary(Tensor::randn(&[3, 4], &mut rng), 2, |g, x| g.silu(x).unwrap());
        check_unary(Tensor::randn(&[3, 4], &mut rng), 3, |g, x| g.softmax_rows(x).unwrap());
        check_unary(Tensor::randn(&[3, 4], &mut rng), 4, |g, x| g.transpose(x).unwrap());
        check_unary(Tensor::randn(&[2, 3, 4], &mut rng), 5, |g, x| g.slice(x, 1, 1, 2).unwrap());
        check_unary(Tensor::randn(&[2, 3, 4], &mut rng), 6, |g, x| g.reshape(x, &[6, 4]).unwrap());
        check_unary(Tensor::randn(&[1, 2, 3, 2], &mut rng), 7, |g, x| g.upsample2x(x).unwrap());
        check_unary(Tensor::randn(&[2, 3, 4], &mut rng), 8, |g, x| g.mean(x).unwrap());
        check_unary(Tensor::randn(&[2, 3], &mut rng), 9, |g, x| g.scale(x, -2.5));
        // Keep inputs away from the kink.
        check_unary(Tensor::randn(&[10], &mut rng).map(|v| if v.abs() < 0.05 { 0.5 } else { v }), 10, |g, x| g.relu(x));
    }

    #[test]
    fn binary_and_parametric_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let other = Tensor::randn(&[3, 4], &mut rng);
        let o = other.clone();
        check_unary(Tensor::randn(&[3, 4], &mut rng), 20, move |g, x| {
            let c = g.leaf(o.clone());
            let m = g.mul(x, c).unwrap();
            let s = g.sub(m, x).unwrap();
            g.add(s, c).unwrap()
        });
        let rhs = Tensor::randn(&[4, 2], &mut rng);
        check_unary(Tensor::randn(&[3, 4], &mut rng), 21, move |g, x| {
            let r = g.leaf(rhs.clone());
            g.matmul(x, r).unwrap()
        });
        let lhs = Tensor::randn(&[2, 3], &mut rng);
        check_unary(Tensor::randn(&[3, 4], &mut rng), 22, move |g, x| {
            let l = g.leaf(lhs.clone());
            g.matmul(l, x).unwrap()
        });
        let w = Tensor::randn(&[4, 2, 3, 3], &mut rng);
        let b = Tensor::randn(&[4], &mut rng);
        let x0 = Tensor::randn(&[2, 2, 5, 6], &mut rng);
        for stride in [1, 2] {
            let (w1, b1) = (w.clone(), b.clone());
            check_unary(x0.clone(), 23, move |g, x| {
                let wv = g.leaf(w1.clone());
                let bv = g.leaf(b1.clone());
                g.conv2d(x, wv, bv, stride).unwrap()
            });
            let (x1, b1) = (x0.clone(), b.clone());
            check_unary(w.clone(), 24, move |g, wv| {
                let xv = g.leaf(x1.clone());
                let bv = g.leaf(b1.clone());
                g.conv2d(xv, wv, bv, stride).unwrap()
            });
            let (x1, w1) = (x0.clone(), w.clone());
            check_unary(b.clone(), 25, move |g, bv| {
                let xv = g.leaf(x1.clone());
                let wv = g.leaf(w1.clone());
                g.conv2d(xv, wv, bv, stride).unwrap()
            });
        }
        let base = Tensor::randn(&[2, 3, 2], &mut rng);
        check_unary(Tensor::randn(&[3], &mut rng), 26, move |g, bv| {
            let x = g.leaf(base.clone());
            g.bias_add(x, bv, 1).unwrap()
        });
        let t = Tensor::randn(&[2, 3], &mut rng);
        check_unary(Tensor::scalar(0.7), 27, move |g, s| {
            let x = g.leaf(t.clone());
            g.mul_scalar(x, s).unwrap()
        });
        let t = Tensor::randn(&[2, 3], &mut rng);
        check_unary(Tensor::randn(&[2, 3], &mut rng), 28, move |g, x| {
            let c = g.leaf(t.clone());
            g.concat(&[c, x, c], 0).unwrap()
        });
    }

    #[test]
    fn wavelet_gradient_is_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Tensor::randn(&[2, 4, 6], &mut rng);
        let up: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[2, 2, 3], &mut rng)).collect();
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let bands = g.dwt2(xv).unwrap();
        let mut terms = Vec::new();
        for (b, u) in bands.iter().zip(&up) {
            let uv = g.leaf(u.clone());
            let p = g.mul(*b, uv).unwrap();
            terms.push(g.sum(p));
        }
        let mut loss = terms[0];
        for t in &terms[1..] {
            loss = g.add(loss, *t).unwrap();
        }
        let grads = g.backward(loss).unwrap();
        let want = wavelet::idwt2_batched(&SubBands::from_array([up[0].clone(), up[1].clone(), up[2].clone(), up[3].clone()]).unwrap()).unwrap();
        assert!(grads.wrt(xv).max_abs_diff(&want).unwrap() < 1e-12);

        check_unary(x.clone(), 31, |g, x| {
            let b = g.dwt2(x).unwrap();
            let s = g.scale(b[1], 3.0);
            g.idwt2([b[0], s, b[3], b[2]]).unwrap()
        });
    }
}

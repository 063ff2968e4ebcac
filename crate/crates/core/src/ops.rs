//! Forward kernels and their adjoints for the layered ops used by the graph.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::invalid_shape(op, format!("expected rank-4 [N, C, H, W], got {s:?}"))),
    }
}

pub fn conv_out_size(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// Shapes of a 3x3, padding-1 convolution: returns `(n, ci, h, w, co, ho, wo)`.
fn conv_dims(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let [n, ci, h, wd] = dims4(x, "conv2d")?;
    let [co, wci, kh, kw] = dims4(w, "conv2d")?;
    if wci != ci || kh != 3 || kw != 3 {
        return Err(Error::shape("conv2d", x.shape(), w.shape()));
    }
    if b.shape() != [co] {
        return Err(Error::shape("conv2d bias", w.shape(), b.shape()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    Ok((n, ci, h, wd, co, conv_out_size(h, stride), conv_out_size(wd, stride)))
}

/// 3x3 convolution, zero padding 1, given stride. `x: [N, Ci, H, W]`, `w: [Co, Ci, 3, 3]`, `b: [Co]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let (n, ci, h, wd, co, ho, wo) = conv_dims(x, w, b, stride)?;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * co * ho * wo];
    for bn in 0..n {
        for o in 0..co {
            let plane = &mut out[(bn * co + o) * ho * wo..(bn * co + o + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = b.data()[o]);
            for i in 0..ci {
                let src = &xd[(bn * ci + i) * h * wd..(bn * ci + i + 1) * h * wd];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = wdat[((o * ci + i) * 3 + ky) * 3 + kx];
                        for y in 0..ho {
                            let iy = (y * stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut plane[y * wo..(y + 1) * wo];
                            for (xo, ov) in orow.iter_mut().enumerate() {
                                let ix = (xo * stride + kx) as isize - 1;
                                if ix >= 0 && ix < wd as isize {
                                    *ov += k * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Adjoint of [`conv2d`]: gradients for input, weight, and bias.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, grad: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, ci, h, wd, co, ho, wo) = conv_dims(x, w, b, stride)?;
    if grad.shape() != [n, co, ho, wo] {
        return Err(Error::shape("conv2d backward", &[n, co, ho, wo], grad.shape()));
    }
    let xd = x.data();
    let wdat = w.data();
    let gd = grad.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wdat.len()];
    let mut db = vec![0.0; co];
    for bn in 0..n {
        for o in 0..co {
            let gplane = &gd[(bn * co + o) * ho * wo..(bn * co + o + 1) * ho * wo];
            db[o] += gplane.iter().sum::<f64>();
            for i in 0..ci {
                let base = (bn * ci + i) * h * wd;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((o * ci + i) * 3 + ky) * 3 + kx;
                        let k = wdat[widx];
                        let mut acc = 0.0;
                        for y in 0..ho {
                            let iy = (y * stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let roff = base + iy as usize * wd;
                            for xo in 0..wo {
                                let ix = (xo * stride + kx) as isize - 1;
                                if ix >= 0 && ix < wd as isize {
                                    let g = gplane[y * wo + xo];
                                    acc += g * xd[roff + ix as usize];
                                    dx[roff + ix as usize] += g * k;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![co], db)?,
    ))
}

/// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "upsample2x")?;
    let mut out = vec![0.0; n * c * 4 * h * w];
    for p in 0..n * c {
        for y in 0..2 * h {
            for xo in 0..2 * w {
                out[p * 4 * h * w + y * 2 * w + xo] = x.data()[p * h * w + (y / 2) * w + xo / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], out)
}

pub fn upsample2x_backward(grad: &Tensor) -> Result<Tensor> {
    let [n, c, h2, w2] = dims4(grad, "upsample2x backward")?;
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        for y in 0..h2 {
            for xo in 0..w2 {
                out[p * h * w + (y / 2) * w + xo / 2] += grad.data()[p * h2 * w2 + y * w2 + xo];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let &[_, cols] = x.shape() else {
        return Err(Error::invalid_shape("softmax", format!("expected a matrix, got {:?}", x.shape())));
    };
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_rows_backward(y: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let cols = y.shape()[1];
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out.chunks_mut(cols).zip(y.data().chunks(cols)).zip(grad.data().chunks(cols)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Adds vector `b` along `axis` of `x`.
pub fn bias_add(x: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() || b.rank() != 1 || b.len() != x.shape()[axis] {
        return Err(Error::shape("bias_add", x.shape(), b.shape()));
    }
    let (outer, dim, inner) = axis_layout(x.shape(), axis);
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for d in 0..dim {
            let bv = b.data()[d];
            out[(o * dim + d) * inner..(o * dim + d + 1) * inner].iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Sums `grad` over every axis except `axis`.
pub fn bias_grad(grad: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, dim, inner) = axis_layout(grad.shape(), axis);
    let mut out = vec![0.0; dim];
    for o in 0..outer {
        for (d, acc) in out.iter_mut().enumerate() {
            *acc += grad.data()[(o * dim + d) * inner..(o * dim + d + 1) * inner].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![dim], out)
}

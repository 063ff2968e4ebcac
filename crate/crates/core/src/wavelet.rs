//! Single-level 2-D Haar transform.
//!
//! Orientation: in a kernel name `XY`, the first filter `X` runs along the
//! vertical (row) axis and the second `Y` along the horizontal (column)
//! axis, so `k_XY[i][j] = X[i] * Y[j]`. With this convention the block
//! `[[1, 2], [3, 4]]` decomposes to `ll = 5, lh = 1, hl = 2, hh = 0`.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Kernel = [[f64; 2]; 2];

pub const LOW_PASS: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
pub const HIGH_PASS: [f64; 2] = [-FRAC_1_SQRT_2, FRAC_1_SQRT_2];

/// Sub-band identifiers in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "ll",
            Band::LH => "lh",
            Band::HL => "hl",
            Band::HH => "hh",
        }
    }

    pub fn kernel(self) -> Kernel {
        let (v, h) = match self {
            Band::LL => (LOW_PASS, LOW_PASS),
            Band::LH => (LOW_PASS, HIGH_PASS),
            Band::HL => (HIGH_PASS, LOW_PASS),
            Band::HH => (HIGH_PASS, HIGH_PASS),
        };
        let mut k = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                k[i][j] = v[i] * h[j];
            }
        }
        k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HaarKernels {
    pub ll: Kernel,
    pub lh: Kernel,
    pub hl: Kernel,
    pub hh: Kernel,
}

impl HaarKernels {
    pub fn get(&self, band: Band) -> &Kernel {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    /// 4x4 Gram matrix of the flattened kernels in canonical order.
    pub fn gram(&self) -> [[f64; 4]; 4] {
        let flat: Vec<[f64; 4]> = Band::ALL
            .iter()
            .map(|&b| {
                let k = self.get(b);
                [k[0][0], k[0][1], k[1][0], k[1][1]]
            })
            .collect();
        let mut g = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                g[i][j] = (0..4).map(|p| flat[i][p] * flat[j][p]).sum();
            }
        }
        g
    }
}

pub fn haar_kernels() -> HaarKernels {
    HaarKernels {
        ll: Band::LL.kernel(),
        lh: Band::LH.kernel(),
        hl: Band::HL.kernel(),
        hh: Band::HH.kernel(),
    }
}

/// The four sub-bands of a decomposed tensor, all of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubBands {
    pub fn new(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Result<Self> {
        for t in [&lh, &hl, &hh] {
            if t.shape() != ll.shape() {
                return Err(Error::shape("subbands", ll.shape(), t.shape()));
            }
        }
        if ll.rank() < 2 {
            return Err(Error::invalid_shape("subbands", "sub-bands need at least two dimensions"));
        }
        Ok(SubBands { ll, lh, hl, hh })
    }

    pub fn from_array(bands: [Tensor; 4]) -> Result<Self> {
        let [ll, lh, hl, hh] = bands;
        Self::new(ll, lh, hl, hh)
    }

    pub fn get(&self, band: Band) -> &Tensor {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Band, &Tensor)> {
        Band::ALL.into_iter().map(move |b| (b, self.get(b)))
    }

    pub fn map(&self, mut f: impl FnMut(Band, &Tensor) -> Tensor) -> Result<SubBands> {
        Self::new(
            f(Band::LL, &self.ll),
            f(Band::LH, &self.lh),
            f(Band::HL, &self.hl),
            f(Band::HH, &self.hh),
        )
    }

    pub fn energy(&self) -> f64 {
        self.iter().map(|(_, t)| t.norm_sq()).sum()
    }
}

fn split_trailing(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::invalid_shape(op, format!("need at least 2 dims, got {shape:?}")));
    }
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    for (axis, size) in [(r - 2, h), (r - 1, w)] {
        if size % 2 != 0 {
            return Err(Error::OddDimension { op, axis, size });
        }
    }
    let lead = shape[..r - 2].iter().product();
    Ok((lead, h, w))
}

/// Correlates one `h x w` slice with `kernel` over non-overlapping 2x2 blocks.
pub(crate) fn analyze_slice(src: &[f64], w: usize, kernel: &Kernel, dst: &mut [f64]) {
    let half_w = w / 2;
    for (idx, out) in dst.iter_mut().enumerate() {
        let (r, c) = (idx / half_w, idx % half_w);
        let top = 2 * r * w + 2 * c;
        let bot = top + w;
        *out = kernel[0][0] * src[top] + kernel[0][1] * src[top + 1] + kernel[1][0] * src[bot] + kernel[1][1] * src[bot + 1];
    }
}

/// Accumulates `coef * kernel` into every 2x2 output block of a `2h x 2w` slice.
pub(crate) fn synthesize_slice(coefs: &[f64], half_w: usize, kernel: &Kernel, dst: &mut [f64]) {
    let w = 2 * half_w;
    for (idx, &c) in coefs.iter().enumerate() {
        let (r, col) = (idx / half_w, idx % half_w);
        let top = 2 * r * w + 2 * col;
        let bot = top + w;
        dst[top] += c * kernel[0][0];
        dst[top + 1] += c * kernel[0][1];
        dst[bot] += c * kernel[1][0];
        dst[bot + 1] += c * kernel[1][1];
    }
}

/// Single band of the transform, over every trailing 2-D slice.
pub fn analyze_band(x: &Tensor, band: Band) -> Result<Tensor> {
    let (lead, h, w) = split_trailing(x.shape(), "dwt2")?;
    let k = band.kernel();
    let slice_in = h * w;
    let slice_out = slice_in / 4;
    let mut out = vec![0.0; lead * slice_out];
    for s in 0..lead {
        analyze_slice(
            &x.data()[s * slice_in..(s + 1) * slice_in],
            w,
            &k,
            &mut out[s * slice_out..(s + 1) * slice_out],
        );
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = h / 2;
    shape[r - 1] = w / 2;
    Tensor::new(shape, out)
}

/// 2-D Haar decomposition of a single `h x w` matrix.
pub fn dwt2(x: &Tensor) -> Result<SubBands> {
    if x.rank() != 2 {
        return Err(Error::invalid_shape("dwt2", format!("expected a 2-D slice, got {:?}; use dwt2_batched", x.shape())));
    }
    dwt2_batched(x)
}

/// Decomposes every trailing `h x w` slice, preserving leading dimensions.
pub fn dwt2_batched(x: &Tensor) -> Result<SubBands> {
    split_trailing(x.shape(), "dwt2")?;
    SubBands::new(
        analyze_band(x, Band::LL)?,
        analyze_band(x, Band::LH)?,
        analyze_band(x, Band::HL)?,
        analyze_band(x, Band::HH)?,
    )
}

/// Inverse of [`dwt2`] for a single slice.
pub fn idwt2(s: &SubBands) -> Result<Tensor> {
    if s.shape().len() != 2 {
        return Err(Error::invalid_shape("idwt2", format!("expected 2-D sub-bands, got {:?}; use idwt2_batched", s.shape())));
    }
    idwt2_batched(s)
}

/// Exact inverse of [`dwt2_batched`]: each output block is the kernel-weighted sum of the four coefficients.
pub fn idwt2_batched(s: &SubBands) -> Result<Tensor> {
    let shape = s.shape();
    let r = shape.len();
    let (hh, hw) = (shape[r - 2], shape[r - 1]);
    let lead: usize = shape[..r - 2].iter().product();
    let slice_in = hh * hw;
    let slice_out = 4 * slice_in;
    let mut out = vec![0.0; lead * slice_out];
    for (band, t) in s.iter() {
        let k = band.kernel();
        for sl in 0..lead {
            synthesize_slice(
                &t.data()[sl * slice_in..(sl + 1) * slice_in],
                hw,
                &k,
                &mut out[sl * slice_out..(sl + 1) * slice_out],
            );
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = 2 * hh;
    out_shape[r - 1] = 2 * hw;
    Tensor::new(out_shape, out)
}

/// A tensor padded to even trailing dimensions, remembering the original size.
#[derive(Clone, Debug)]
pub struct Padded {
    pub tensor: Tensor,
    pub original: (usize, usize),
}

impl Padded {
    /// Crops a same-layout tensor back to the original trailing size.
    pub fn crop(&self, x: &Tensor) -> Result<Tensor> {
        let r = x.rank();
        let (h, w) = self.original;
        x.slice_axis(r - 2, 0, h)?.slice_axis(r - 1, 0, w)
    }
}

/// Zero-pads one trailing row and/or column where the size is odd.
pub fn pad_even(x: &Tensor) -> Result<Padded> {
    if x.rank() < 2 {
        return Err(Error::invalid_shape("pad_even", format!("need at least 2 dims, got {:?}", x.shape())));
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (ph, pw) = (h + h % 2, w + w % 2);
    let lead: usize = x.shape()[..r - 2].iter().product();
    let mut data = vec![0.0; lead * ph * pw];
    for s in 0..lead {
        for i in 0..h {
            let src = &x.data()[s * h * w + i * w..s * h * w + (i + 1) * w];
            data[s * ph * pw + i * pw..s * ph * pw + i * pw + w].copy_from_slice(src);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = ph;
    shape[r - 1] = pw;
    Ok(Padded {
        tensor: Tensor::new(shape, data)?,
        original: (h, w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force correlation of an explicit kernel with each 2x2 block.
    fn naive_band(x: &[Vec<f64>], k: &Kernel) -> Vec<Vec<f64>> {
        let (h, w) = (x.len(), x[0].len());
        let mut out = vec![vec![0.0; w / 2]; h / 2];
        for r in 0..h / 2 {
            for c in 0..w / 2 {
                let mut acc = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        acc += k[i][j] * x[2 * r + i][2 * c + j];
                    }
                }
                out[r][c] = acc;
            }
        }
        out
    }

    #[test]
    fn kernel_values() {
        let k = haar_kernels();
        assert!(k.ll.iter().flatten().all(|&v| (v - 0.5).abs() < 1e-15));
        let hh = [[0.5, -0.5], [-0.5, 0.5]];
        for (got, want) in k.hh.iter().flatten().zip(hh.iter().flatten()) {
            assert!((got - want).abs() < 1e-15);
        }
        for (i, row) in k.gram().iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_slice() {
        let x = Tensor::full(&[4, 6], 1.5);
        let s = dwt2(&x).unwrap();
        assert!(s.ll.data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
        for b in [&s.lh, &s.hl, &s.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn reference_block_orientation() {
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let s = dwt2(&x).unwrap();
        let got = [s.ll.item().unwrap(), s.lh.item().unwrap(), s.hl.item().unwrap(), s.hh.item().unwrap()];
        for (g, w) in got.iter().zip([5.0, 1.0, 2.0, 0.0]) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
        let back = idwt2(&s).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn inverse_of_reference_coefficients() {
        let s = SubBands::new(Tensor::full(&[1, 1], 5.0), Tensor::full(&[1, 1], 1.0), Tensor::full(&[1, 1], 2.0), Tensor::zeros(&[1, 1])).unwrap();
        let x = idwt2(&s).unwrap();
        let want = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert!(x.max_abs_diff(&want).unwrap() < 1e-12);
    }

    #[test]
    fn zero_subbands_invert_to_zero() {
        let z = Tensor::zeros(&[3, 2]);
        let s = SubBands::new(z.clone(), z.clone(), z.clone(), z).unwrap();
        assert_eq!(idwt2(&s).unwrap(), Tensor::zeros(&[6, 4]));
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[8, 8], &mut rng);
        let rows: Vec<Vec<f64>> = x.data().chunks(8).map(|r| r.to_vec()).collect();
        let s = dwt2(&x).unwrap();
        for (band, t) in s.iter() {
            let want: Vec<f64> = naive_band(&rows, &band.kernel()).into_iter().flatten().collect();
            for (a, b) in t.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_dimension_is_named() {
        match dwt2(&Tensor::zeros(&[4, 5])).unwrap_err() {
            Error::OddDimension { axis, size, .. } => assert_eq!((axis, size), (1, 5)),
            e => panic!("unexpected {e}"),
        }
        match dwt2_batched(&Tensor::zeros(&[2, 3, 4])).unwrap_err() {
            Error::OddDimension { axis, size, .. } => assert_eq!((axis, size), (1, 3)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn mismatched_subbands_rejected() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(SubBands::new(a.clone(), a.clone(), b, a).is_err());
    }

    #[test]
    fn pad_even_then_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[2, 5, 7], &mut rng);
        let p = pad_even(&x).unwrap();
        assert_eq!(p.tensor.shape(), &[2, 6, 8]);
        let back = idwt2_batched(&dwt2_batched(&p.tensor).unwrap()).unwrap();
        let cropped = p.crop(&back).unwrap();
        assert!(cropped.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn batched_equals_per_slice_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::randn(&[3, 2, 6, 4], &mut rng);
        let s = dwt2_batched(&x).unwrap();
        for a in 0..3 {
            for b in 0..2 {
                let slice = x.slice_axis(0, a, 1).unwrap().slice_axis(1, b, 1).unwrap().reshape(&[6, 4]).unwrap();
                let single = dwt2(&slice).unwrap();
                for band in Band::ALL {
                    let batched = s.get(band).slice_axis(0, a, 1).unwrap().slice_axis(1, b, 1).unwrap();
                    assert_eq!(batched.data(), single.get(band).data());
                }
            }
        }
        let back = idwt2_batched(&s).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn reconstruction_energy_linearity(
            h in 1usize..12, w in 1usize..12, seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[2 * h, 2 * w], &mut rng);
            let y = Tensor::randn(&[2 * h, 2 * w], &mut rng);
            let sx = dwt2(&x).unwrap();
            prop_assert!(idwt2(&sx).unwrap().max_abs_diff(&x).unwrap() < 1e-10);
            prop_assert!((sx.energy() - x.norm_sq()).abs() / x.norm_sq() < 1e-10);

            let combo = x.scale(alpha).add(&y.scale(beta)).unwrap();
            let sy = dwt2(&y).unwrap();
            let sc = dwt2(&combo).unwrap();
            for band in Band::ALL {
                let lin = sx.get(band).scale(alpha).add(&sy.get(band).scale(beta)).unwrap();
                prop_assert!(sc.get(band).max_abs_diff(&lin).unwrap() < 1e-10);
            }
        }
    }
}

//! Dense kernels shared by the `Tensor` API and the autodiff graph.
//!
//! Every reduction accumulates sequentially in index order, so the graph and
//! the plain-tensor paths produce bit-identical results for the same inputs.

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-major boolean matrix; `true` marks a visible entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension {
                op: "mask",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn all(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.data[i * self.cols + j] = value;
    }

    pub fn count_row(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&b| b).count()
    }
}

pub(crate) fn matmul_slices<T: Real>(a: &[T], rows: usize, inner: usize, b: &[T], cols: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        let out_row = &mut out[i * cols..(i + 1) * cols];
        let a_row = &a[i * inner..(i + 1) * inner];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b[k * cols..(k + 1) * cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    out
}

pub(crate) fn transpose_slice<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// `a · bᵀ` with `a: rows×inner`, `b: other×inner`.
pub(crate) fn matmul_t_slices<T: Real>(a: &[T], rows: usize, inner: usize, b: &[T], other: usize) -> Vec<T> {
    let bt = transpose_slice(b, other, inner);
    matmul_slices(a, rows, inner, &bt, other)
}

/// Softmax of one row in place; masked entries become exactly zero.
fn softmax_row<T: Real>(row: &mut [T], mask: Option<&[bool]>) -> bool {
    let visible = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    let mut any = false;
    for (j, &v) in row.iter().enumerate() {
        if visible(j) {
            any = true;
            if v > max {
                max = v;
            }
        }
    }
    if !any {
        return false;
    }
    let mut sum = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if visible(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = T::zero();
        }
    }
    let inv = T::one() / sum;
    for (j, v) in row.iter_mut().enumerate() {
        if visible(j) {
            *v *= inv;
        }
    }
    true
}

pub(crate) fn softmax_rows_slice<T: Real>(x: &[T], rows: usize, cols: usize, mask: Option<&Mask>) -> Result<Vec<T>> {
    if let Some(m) = mask {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Dimension {
                op: "softmax_rows mask",
                left: vec![rows, cols],
                right: vec![m.rows(), m.cols()],
            });
        }
    }
    let mut out = x.to_vec();
    for i in 0..rows {
        let row = &mut out[i * cols..(i + 1) * cols];
        if !softmax_row(row, mask.map(|m| m.row(i))) {
            return Err(Error::InvalidMask { row: i });
        }
    }
    Ok(out)
}

pub(crate) fn gelu_scalar<T: Real>(x: T) -> T {
    let half = T::of_f64(0.5);
    x * half * (T::one() + (x * T::of_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// d/dx [x·Φ(x)] = Φ(x) + x·φ(x).
pub(crate) fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let half = T::of_f64(0.5);
    let cdf = half * (T::one() + (x * T::of_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::of_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer norm over each row; returns the output plus per-row `(mean, 1/std)`.
pub(crate) fn layer_norm_slice<T: Real>(
    x: &[T],
    rows: usize,
    cols: usize,
    gain: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<(T, T)>) {
    let n = T::of_f64(cols as f64);
    let eps = T::of_f64(LAYER_NORM_EPS);
    let mut out = vec![T::zero(); rows * cols];
    let mut stats = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        let o = &mut out[i * cols..(i + 1) * cols];
        for j in 0..cols {
            o[j] = (row[j] - mean) * rstd * gain[j] + bias[j];
        }
        stats.push((mean, rstd));
    }
    (out, stats)
}

/// Multi-head scaled dot-product self-attention over one sequence.
///
/// `q`, `k`, `v` are `len×dim`; keys with `key_visible[j] == false` are
/// ignored. Returns the output and, when `keep_probs`, the per-head
/// probability matrices (`heads×len×len`).
pub(crate) fn attention_forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    dim: usize,
    heads: usize,
    key_visible: Option<&[bool]>,
    keep_probs: bool,
) -> Result<(Vec<T>, Option<Vec<T>>)> {
    let dh = dim / heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); len * dim];
    let mut probs = keep_probs.then(|| vec![T::zero(); heads * len * len]);
    let mut scores = vec![T::zero(); len];
    for h in 0..heads {
        let qh = head_slice(q, len, dim, h, dh);
        let kh_t = transpose_slice(&head_slice(k, len, dim, h, dh), len, dh);
        let vh = head_slice(v, len, dim, h, dh);
        for i in 0..len {
            scores.fill(T::zero());
            let q_row = &qh[i * dh..(i + 1) * dh];
            for (c, &qc) in q_row.iter().enumerate() {
                let k_row = &kh_t[c * len..(c + 1) * len];
                for (s, &kc) in scores.iter_mut().zip(k_row) {
                    *s += qc * kc;
                }
            }
            for s in scores.iter_mut() {
                *s *= scale;
            }
            if !softmax_row(&mut scores, key_visible) {
                return Err(Error::InvalidMask { row: i });
            }
            let o = &mut out[i * dim + h * dh..i * dim + (h + 1) * dh];
            for (j, &p) in scores.iter().enumerate() {
                if p == T::zero() {
                    continue;
                }
                let v_row = &vh[j * dh..(j + 1) * dh];
                for (oc, &vc) in o.iter_mut().zip(v_row) {
                    *oc += p * vc;
                }
            }
            if let Some(pr) = probs.as_mut() {
                pr[(h * len + i) * len..(h * len + i + 1) * len].copy_from_slice(&scores);
            }
        }
    }
    Ok((out, probs))
}

pub(crate) fn head_slice<T: Real>(x: &[T], len: usize, dim: usize, h: usize, dh: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len * dh);
    for i in 0..len {
        out.extend_from_slice(&x[i * dim + h * dh..i * dim + (h + 1) * dh]);
    }
    out
}

fn check_finite(t: &Tensor, context: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Standard matrix product of `r×k` and `k×c` tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ar, ac) = a.dims2()?;
    let (br, bc) = b.dims2()?;
    if ac != br {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Tensor::matrix(ar, bc, matmul_slices(a.data(), ar, ac, b.data(), bc))
}

/// Row-wise softmax with optional visibility mask (max-subtracted).
pub fn softmax_rows(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let (r, c) = x.dims2()?;
    let out = softmax_rows_slice(x.data(), r, c, mask)?;
    let t = Tensor::new(x.shape().to_vec(), out)?;
    check_finite(&t, "softmax_rows")?;
    Ok(t)
}

pub fn tanh_map(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_map(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, v: &[f32]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let i2 = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let m = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&i2, &m).unwrap().data(), m.data());
        let r = matmul(&t(1, 2, &[1.0, 2.0]), &t(2, 1, &[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = matmul(&t(3, 4, &a), &t(4, 2, &b)).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += a[i * 4 + k] as f64 * b[k * 2 + j] as f64;
                }
                assert!((got.data()[i * 2 + j] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&t(2, 3, &[0.0; 6]), &t(2, 3, &[0.0; 6])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let u = softmax_rows(&t(1, 3, &[0.0, 0.0, 0.0]), None).unwrap();
        for &v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let mask = Mask::new(1, 2, vec![true, false]).unwrap();
        let m = softmax_rows(&t(1, 2, &[5.0, 5.0]), Some(&mask)).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0]);

        let s = softmax_rows(&t(1, 3, &[1.0, 2.0, 3.0]), None).unwrap();
        let e = std::f64::consts::E;
        let expected = e.powi(3) / (e + e * e + e.powi(3));
        assert!((s.data()[2] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn softmax_fully_masked_row_is_an_error() {
        let mask = Mask::new(2, 2, vec![true, true, false, false]).unwrap();
        match softmax_rows(&t(2, 2, &[0.0; 4]), Some(&mask)) {
            Err(Error::InvalidMask { row }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let s = softmax_rows(&t(1, 2, &[1000.0, 999.0]), None).unwrap();
        assert!(s.is_finite());
        assert!((s.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tanh_and_gelu_points() {
        let z = t(1, 1, &[0.0]);
        assert_eq!(tanh_map(&z).data(), &[0.0]);
        assert_eq!(gelu_map(&z).data(), &[0.0]);
        let big = tanh_map(&t(1, 1, &[30.0]));
        assert!((big.data()[0] - 1.0).abs() < 1e-6);
    }

    /// Φ(1) by composite Simpson quadrature of the normal density on [-12, 1].
    fn normal_cdf_quadrature(x: f64) -> f64 {
        let (a, n) = (-12.0, 20_000);
        let h = (x - a) / n as f64;
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(a) + pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn gelu_matches_gaussian_cdf_oracle() {
        for &x in &[1.0f32, -0.7, 2.5] {
            let got = gelu_map(&t(1, 1, &[x])).data()[0] as f64;
            let want = x as f64 * normal_cdf_quadrature(x as f64);
            assert!((got - want).abs() < 1e-6, "{x}: {got} vs {want}");
        }
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-2.0f64, -0.3, 0.0, 0.8, 3.0] {
            let h = 1e-5;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn kernels_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f32> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = t(8, 8, &a);
        let one = softmax_rows(&matmul(&x, &x).unwrap(), None).unwrap();
        let two = softmax_rows(&matmul(&x, &x).unwrap(), None).unwrap();
        assert_eq!(one.data(), two.data());
    }
}

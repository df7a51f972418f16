//! Shared numerical primitives: stable log-sum-exp and softmax, a small dense
//! row-major matrix, and the seeded random number generator.
//!
//! Everything here is `f64`. Probability work elsewhere in the crate stays in
//! log space and only calls [`softmax`] at the boundary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `ln Σ exp(v_k)`, evaluated as `m + ln Σ exp(v_k - m)` with `m = max(v)`.
///
/// Entries equal to `-inf` are allowed and contribute nothing (masked
/// candidates). If every entry is `-inf` the result is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyLogits);
    }
    let mut m = f64::NEG_INFINITY;
    for &x in v {
        if x.is_nan() || x == f64::INFINITY {
            return Err(Error::NonFinite(format!("logit {x}")));
        }
        if x > m {
            m = x;
        }
    }
    if m == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Tempered softmax `exp(β v_k - lse(β v))`.
pub fn softmax(v: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let scaled: Vec<f64> = v.iter().map(|&x| beta * x).collect();
    normalize_log_weights(&scaled)
}

/// Softmax of values that are already log-weights (no temperature).
pub fn normalize_log_weights(logits: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(logits)?;
    if lse == f64::NEG_INFINITY {
        return Err(Error::NonFinite("every logit is -inf".into()));
    }
    Ok(logits.iter().map(|&x| (x - lse).exp()).collect())
}

pub fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `acc += w * x`
pub fn axpy(acc: &mut [f64], w: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        check_finite("matrix entry", &data)?;
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Mat::identity(n);
        m.data.iter_mut().for_each(|x| *x *= s);
        m
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a `0x0` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Mat::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "t_matvec dimension");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(&mut out, xi, self.row(i));
        }
        out
    }

    /// Bilinear form `aᵀ · self · b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.rows, "bilinear left dimension");
        assert_eq!(b.len(), self.cols, "bilinear right dimension");
        a.iter()
            .enumerate()
            .map(|(i, &ai)| ai * dot(self.row(i), b))
            .sum()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                axpy(dst, a, other.row(k));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Deterministic generator used wherever the crate draws random numbers.
///
/// The stream is ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`) seeded via
/// `seed_from_u64`. ChaCha output is defined bit-for-bit independent of
/// platform and endianness, so a seed pins the stream everywhere.
/// Substreams are derived with [`SeededRng::substream`], which selects a ChaCha
/// stream id under the same key.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `id` under the same master seed.
    pub fn substream(&self, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(id);
        SeededRng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.normal()).collect()
    }

    /// Inverse-CDF draw from a categorical distribution given by `probs`.
    ///
    /// Zero-probability entries are never returned.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut cum = 0.0;
        let mut last_nonzero = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                cum += p;
                last_nonzero = k;
                if u < cum {
                    return k;
                }
            }
        }
        // rounding left the cumulative sum just under u
        last_nonzero
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), Err(Error::EmptyLogits));
    }

    #[test]
    fn lse_matches_naive_at_small_magnitude() {
        let v = [0.3, -1.2, 2.0, 0.0];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v).unwrap() - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_masked_entries() {
        let v = [f64::NEG_INFINITY, 0.0];
        assert_eq!(log_sum_exp(&v).unwrap(), 0.0);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_sum_exp(&[f64::NAN]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let hard = softmax(&[1.0, 0.0], 50.0).unwrap();
        assert!((hard[0] - 1.0).abs() < 1e-12);
        assert!(hard[1] < 1e-12);
        assert_eq!(softmax(&[1.0], 0.0), Err(Error::InvalidBeta(0.0)));
        assert!(softmax(&[1.0], -2.0).is_err());
    }

    #[test]
    fn mat_ops() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(a.matvec(&[1.0, -1.0]), vec![-1.0, -1.0, -1.0]);
        assert_eq!(a.t_matvec(&[1.0, 0.0, 1.0]), vec![6.0, 8.0]);
        let at = a.transpose();
        assert_eq!(at.shape(), (2, 3));
        let g = at.matmul(&a).unwrap();
        assert_eq!(g.data(), &[35.0, 44.0, 44.0, 56.0]);
        assert_eq!(a.bilinear(&[1.0, 0.0, 0.0], &[0.0, 1.0]), 2.0);
        assert!(a.matmul(&a).is_err());
        assert!(Mat::new(2, 2, vec![1.0]).is_err());
        assert!(Mat::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut s1 = a.substream(3);
        let mut s2 = b.substream(3);
        assert_eq!(s1.normal().to_bits(), s2.normal().to_bits());
        assert_ne!(SeededRng::new(1).next_u64(), SeededRng::new(2).next_u64());
    }

    #[test]
    fn categorical_skips_zero_mass() {
        let mut rng = SeededRng::new(9);
        for _ in 0..1000 {
            let k = rng.categorical(&[0.0, 0.4, 0.0, 0.6, 0.0]);
            assert!(k == 1 || k == 3);
        }
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0..50.0f64, 1..12)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in logits(), log_beta in -3.0..3.0f64) {
            let beta = 10f64.powf(log_beta);
            let p = softmax(&v, beta).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn softmax_shift_invariant(v in logits(), c in -100.0..100.0f64, beta in 0.01..10.0f64) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v, beta).unwrap();
            let b = softmax(&shifted, beta).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn lse_shift(v in logits(), c in -100.0..100.0f64) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = log_sum_exp(&v).unwrap() + c;
            let b = log_sum_exp(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Dense real/complex matrices, a Hermitian solver, seeded sampling and the
//! elementwise nonlinearities shared by the rest of the crate.
//!
//! Matrices are row-major. Products sum left to right over the inner index so
//! results are bit-reproducible for a given input.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Pivot ratio below which a Hermitian solve is refused.
pub const PIVOT_RATIO_FLOOR: f64 = 1e-12;

/// Row sums at or below this are treated as zero rows by [`row_l1_normalize`].
pub const ROW_SUM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<C64>;

impl<T: Copy + Zero> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map<U: Copy + Zero>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl<T> Matrix<T>
where
    T: Copy + Zero + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    pub fn identity(n: usize) -> Self
    where
        T: num_traits::One,
    {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// Standard product, accumulating over the inner index in increasing order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lhs = self.row(i);
            let dst = out.row_mut(i);
            for (k, &a) in lhs.iter().enumerate() {
                let rhs = other.row(k);
                for (d, &b) in dst.iter_mut().zip(rhs) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch(format!(
                "elementwise {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }
}

impl RealMatrix {
    /// `self^T · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "t_matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let lhs = self.row(k);
            let rhs = other.row(k);
            for (i, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(rhs) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · other^T`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "matmul_t {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Self::from_fn(self.rows, other.rows, |i, j| {
            self.row(i).iter().zip(other.row(j)).fold(0.0, |s, (a, b)| s + a * b)
        }))
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl ComplexMatrix {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.frobenius_norm_sqr() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
}

/// Conjugate transpose.
pub fn hermitian(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.cols, a.rows, |r, c| a[(c, r)].conj())
}

/// Solves `A X = B` for Hermitian positive definite `A` via an LDL^H
/// factorisation. Only the lower triangle of `A` is read.
///
/// Fails with [`Error::IllConditioned`] when the smallest pivot divided by the
/// largest drops below [`PIVOT_RATIO_FLOOR`], or any pivot is non-positive.
pub fn solve_hermitian_system(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.rows;
    if a.cols != n || b.rows != n {
        return Err(Error::DimensionMismatch(format!(
            "solve with A {}x{} and B {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut lower = ComplexMatrix::identity(n);
    let mut pivots = vec![0.0f64; n];
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= lower[(j, k)].norm_sqr() * pivots[k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::IllConditioned { ratio: 0.0 });
        }
        pivots[j] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= lower[(i, k)] * lower[(j, k)].conj() * pivots[k];
            }
            lower[(i, j)] = s / d;
        }
    }
    let max = pivots.iter().cloned().fold(0.0, f64::max);
    let min = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if n > 0 && min / max < PIVOT_RATIO_FLOOR {
        return Err(Error::IllConditioned { ratio: min / max });
    }

    let mut x = b.clone();
    for c in 0..b.cols {
        // L z = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= lower[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s;
        }
        for i in 0..n {
            x[(i, c)] /= pivots[i];
        }
        // L^H x = w
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= lower[(k, i)].conj() * x[(k, c)];
            }
            x[(i, c)] = s;
        }
    }
    Ok(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministic generator: ChaCha20 keyed from a 64-bit seed.
///
/// Independent sub-streams are derived with [`SeededRng::derive`], which mixes
/// the parent seed and a textual tag through FNV-1a and SplitMix64. The derived
/// seed is exposed so run manifests can record it.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn derive_seed(seed: u64, tag: &str) -> u64 {
        splitmix64(seed ^ splitmix64(fnv1a(tag)))
    }

    /// Fresh stream for `tag`, independent of how much of `self` was consumed.
    pub fn derive(&self, tag: &str) -> Self {
        Self::new(Self::derive_seed(self.seed, tag))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.gen_range(lo..hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

/// I.i.d. circularly-symmetric complex Gaussian entries of total variance
/// `variance` (half in each of the real and imaginary parts).
pub fn sample_cn(rng: &mut SeededRng, rows: usize, cols: usize, variance: f64) -> ComplexMatrix {
    assert!(variance >= 0.0, "negative variance");
    let sd = (variance / 2.0).sqrt();
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re = rng.standard_normal();
        let im = rng.standard_normal();
        C64::new(sd * re, sd * im)
    })
}

/// Real Gaussian matrix with standard deviation `sd`.
pub fn sample_normal(rng: &mut SeededRng, rows: usize, cols: usize, sd: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| sd * rng.standard_normal())
}

/// Divides every row whose sum exceeds [`ROW_SUM_EPS`] by that sum; other
/// rows are returned unchanged. Inputs are expected to be nonnegative.
pub fn row_l1_normalize(a: &RealMatrix) -> RealMatrix {
    let mut out = a.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let sum: f64 = row.iter().sum();
        if sum > ROW_SUM_EPS {
            row.iter_mut().for_each(|x| *x /= sum);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    SoftmaxRow,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn elementwise(a: &RealMatrix, f: Activation) -> RealMatrix {
    match f {
        Activation::Relu => a.map(|x| x.max(0.0)),
        Activation::Tanh => a.map(f64::tanh),
        Activation::Sigmoid => a.map(sigmoid),
        Activation::SoftmaxRow => {
            assert!(a.cols >= 1, "softmax over an empty row");
            let mut out = a.clone();
            for r in 0..a.rows {
                softmax_into(a.row(r), out.row_mut(r));
            }
            out
        }
    }
}

//! Dense vector/matrix arithmetic and deterministic random streams.
//!
//! Everything here is `f64`. Vectors are immutable values: arithmetic returns
//! a new vector, and every binary operation checks dimensions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::error::{Error, Result};

/// A point, gradient, or estimator in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(components: Vec<f64>) -> Self {
        DenseVector(components)
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        DenseVector(vec![value; dim])
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        DenseVector((0..dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// `sum_j v_j^2`.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_dim(&self, other: &DenseVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, a: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|v| a * v).collect())
    }

    /// Componentwise `f(self_j, other_j)`.
    pub fn zip_with(
        &self,
        other: &DenseVector,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseVector> {
        self.check_dim(other)?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &DenseVector) -> Result<()> {
        self.check_dim(x)?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += a * v;
        }
        Ok(())
    }

    /// Arithmetic mean of a non-empty set of equally sized vectors.
    pub fn mean<'a>(vectors: impl IntoIterator<Item = &'a DenseVector>) -> Result<DenseVector> {
        let mut iter = vectors.into_iter();
        let first = iter.next().ok_or(Error::Empty("mean of zero vectors"))?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            acc.add_scaled(1.0, v)?;
            count += 1;
        }
        Ok(acc.scale(1.0 / count as f64))
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Display for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Returns `a * x + y`.
pub fn axpy(a: f64, x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
    y.zip_with(x, |yj, xj| a * xj + yj)
}

pub fn norm_sq(v: &DenseVector) -> f64 {
    v.norm_sq()
}

/// I.i.d. `N(0, sigma^2)` components. `sigma == 0` yields exact zeros and
/// consumes no randomness.
pub fn gaussian(rng: &mut RngStream, dim: usize, sigma: f64) -> DenseVector {
    if sigma == 0.0 {
        return DenseVector::zeros(dim);
    }
    DenseVector::from_fn(dim, |_| sigma * rng.standard_normal())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: row.len(),
                });
            }
            data.extend(row);
        }
        Ok(DenseMatrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn gaussian(rng: &mut RngStream, rows: usize, cols: usize, sigma: f64) -> Self {
        if sigma == 0.0 {
            return Self::zeros(rows, cols);
        }
        Self::from_fn(rows, cols, |_, _| sigma * rng.standard_normal())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * x`.
    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.dim() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.dim(),
            });
        }
        Ok(DenseVector::from_fn(self.rows, |i| {
            self.row(i).iter().zip(x.iter()).map(|(a, b)| a * b).sum()
        }))
    }

    /// `self^T * y`.
    pub fn matvec_t(&self, y: &DenseVector) -> Result<DenseVector> {
        if y.dim() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: y.dim(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let yi = y[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Ok(DenseVector::new(out))
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// Squared spectral norm `||M||_2^2` via power iteration on `M^T M`.
    pub fn spectral_norm_sq(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let mut v = DenseVector::filled(self.cols, 1.0 / (self.cols as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let w = self
                .matvec_t(&self.matvec(&v).expect("dims"))
                .expect("dims");
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            let next = n;
            v = w.scale(1.0 / n);
            if (next - lambda).abs() <= 1e-14 * next {
                return next;
            }
            lambda = next;
        }
        lambda
    }
}

/// Deterministic random stream keyed by `(seed, identity path)`.
///
/// Named children (`child("oracle")`) depend only on the parent identity and
/// the label, so adding a new consumer never shifts an existing stream.
/// Anonymous children (`split()`) append a per-parent counter that is never
/// reused.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: String,
    splits: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, run: &str) -> Self {
        Self::keyed(seed, format!("run:{run}"))
    }

    fn keyed(seed: u64, path: String) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(path.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            seed,
            path,
            splits: 0,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn identity(&self) -> &str {
        &self.path
    }

    /// Stream for a named purpose; pure in `(self identity, purpose)`.
    pub fn child(&self, purpose: &str) -> RngStream {
        Self::keyed(self.seed, format!("{}/{}", self.path, purpose))
    }

    /// Fresh anonymous child; each call yields a new identity.
    pub fn split(&mut self) -> RngStream {
        let child = Self::keyed(self.seed, format!("{}#{}", self.path, self.splits));
        self.splits += 1;
        child
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `lo..hi`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

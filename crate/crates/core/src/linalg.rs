//! Dense small-matrix linear algebra and bounded-noise sampling.
//!
//! Everything here operates at `(d + 2) x (d + 2)` scale for modest `d`, so
//! plain row-major storage with O(n^3) Gauss-Jordan inversion is the right
//! tool. No general-purpose linear algebra lives in this module.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Entries at or below this magnitude count as zero for the structural
/// checks on generated matrices.
pub const NONZERO_EPS: f64 = 1e-9;

/// Matrices with an estimated condition number above this cap are rejected
/// as numerically unusable.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// Draws attempted before `generate_invertible_matrix` gives up.
pub const DEFAULT_RETRY_BUDGET: usize = 1000;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
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
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from row slices. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape does not match entry count");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Mat::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..other.cols {
                    let v = out.get(r, c) + a * other.get(k, c);
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "vector length must match columns");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// Outer product `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Mat {
        let mut m = Mat::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                m.set(i, j, a * b);
            }
        }
        m
    }

    /// Evaluates the quadratic form `y^T M y`.
    pub fn quadratic_form(&self, y: &[f64]) -> f64 {
        assert_eq!(self.rows, self.cols, "quadratic form needs a square matrix");
        assert_eq!(self.rows, y.len(), "vector length must match dimension");
        let mut acc = 0.0;
        for r in 0..self.rows {
            let yr = y[r];
            if yr == 0.0 {
                continue;
            }
            let row = self.row(r);
            let mut inner = 0.0;
            for (a, x) in row.iter().zip(y) {
                inner += a * x;
            }
            acc += yr * inner;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Largest absolute entry difference between two same-shaped matrices.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Mat> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "cannot invert a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            // Pivot on the largest remaining magnitude in this column.
            let mut pivot = col;
            let mut best = a.get(col, col).abs();
            for r in (col + 1)..n {
                let v = a.get(r, col).abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best < 1e-300 {
                return Err(Error::SingularMatrix);
            }
            if pivot != col {
                for c in 0..n {
                    let (x, y) = (a.get(col, c), a.get(pivot, c));
                    a.set(col, c, y);
                    a.set(pivot, c, x);
                    let (x, y) = (inv.get(col, c), inv.get(pivot, c));
                    inv.set(col, c, y);
                    inv.set(pivot, c, x);
                }
            }
            let p = a.get(col, col);
            for c in 0..n {
                a.set(col, c, a.get(col, c) / p);
                inv.set(col, c, inv.get(col, c) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f == 0.0 {
                    continue;
                }
                for c in 0..n {
                    a.set(r, c, a.get(r, c) - f * a.get(col, c));
                    inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
                }
            }
        }
        Ok(inv)
    }

    /// Condition number estimate in the infinity norm; infinite for
    /// singular input.
    pub fn condition_inf(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => self.norm_inf() * inv.norm_inf(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Checked inverse: rejects ill-conditioned matrices before returning.
pub fn invert(m: &Mat) -> Result<Mat> {
    let inv = m.inverse()?;
    let cond = m.norm_inf() * inv.norm_inf();
    if cond > DEFAULT_CONDITION_CAP {
        return Err(Error::IllConditioned(cond));
    }
    Ok(inv)
}

/// Draws a matrix with i.i.d. standard-normal entries until the structural
/// constraints hold: invertible (condition number under `cond_cap`), at
/// least two non-negligible entries per row, and a fully non-negligible
/// last column.
pub fn generate_invertible_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Mat> {
    generate_invertible_matrix_with(dim, rng, DEFAULT_CONDITION_CAP, DEFAULT_RETRY_BUDGET)
}

pub fn generate_invertible_matrix_with<R: Rng + ?Sized>(
    dim: usize,
    rng: &mut R,
    cond_cap: f64,
    retry_budget: usize,
) -> Result<Mat> {
    if dim < 3 {
        return Err(Error::DimensionMismatch(format!(
            "perturbation matrices need dim >= 3, got {dim}"
        )));
    }
    for _ in 0..retry_budget {
        let mut m = Mat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                m.set(r, c, rng.sample::<f64, _>(StandardNormal));
            }
        }
        if !structural_constraints_hold(&m) {
            continue;
        }
        let inv = match m.inverse() {
            Ok(inv) => inv,
            Err(_) => continue,
        };
        if m.norm_inf() * inv.norm_inf() > cond_cap {
            continue;
        }
        return Ok(m);
    }
    Err(Error::RetryBudget(retry_budget))
}

fn structural_constraints_hold(m: &Mat) -> bool {
    let n = m.rows();
    for r in 0..n {
        let nonzero = m.row(r).iter().filter(|v| v.abs() > NONZERO_EPS).count();
        if nonzero < 2 {
            return false;
        }
        if m.get(r, n - 1).abs() <= NONZERO_EPS {
            return false;
        }
    }
    true
}

/// Bounds for the random noise coordinate appended to every perturbed
/// vector. Samples land in `(v0, v1]`: the strict lower bound keeps the
/// `(v - v0)` factor in transformed query conditions positive, and the
/// upper bound lets query bounding boxes cover every possible data noise.
///
/// The interval width is an efficiency knob, not a security one: every
/// transformed-query bounding box must span the noise extent in all
/// output dimensions, so a wide interval inflates stage-1 candidate sets
/// across the board. The default keeps the interval narrow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub v0: f64,
    pub v1: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { v0: 4.0, v1: 4.25 }
    }
}

impl NoiseSpec {
    pub fn new(v0: f64, v1: f64) -> Result<Self> {
        if !v0.is_finite() || !v1.is_finite() || v1 <= v0 {
            return Err(Error::InvalidNoiseSpec { v0, v1 });
        }
        Ok(NoiseSpec { v0, v1 })
    }

    /// Uniform draw from `(v0, v1]`, never equal to `v0`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // gen::<f64>() is in [0, 1), so v1 - u * span is in (v0, v1].
        let u: f64 = rng.gen();
        self.v1 - u * (self.v1 - self.v0)
    }
}

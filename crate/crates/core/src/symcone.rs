//! Dense linear algebra on small real symmetric matrices and the
//! positive-semidefinite cone.
//!
//! All norms and inner products are Frobenius (entry-wise). Eigenproblems are
//! solved with cyclic Jacobi rotations, which is accurate and dependency-free
//! for the small dimensions used throughout the crate.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for cone-membership tests.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_THRESHOLD: f64 = 1e-12;

/// Real symmetric `dim x dim` matrix stored as its upper triangle, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

#[inline]
fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "SymMatrix dimension must be positive");
        Self {
            dim,
            upper: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from the upper triangle in row-major order.
    pub fn from_upper(dim: usize, upper: Vec<f64>) -> Result<Self> {
        if dim == 0 || upper.len() != dim * (dim + 1) / 2 {
            return Err(Error::dims(dim * (dim + 1) / 2, upper.len()));
        }
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        Ok(Self { dim, upper })
    }

    /// Builds from full rows; the input must be symmetric up to `1e-12` relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::dims("non-empty square matrix", "0 rows"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::dims(format!("{dim} columns"), r.len()));
        }
        let scale = rows
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (rows[i][j] - rows[j][i]).abs() > 1e-12 * (1.0 + scale) {
                    return Err(Error::invalid(
                        "matrix",
                        format!("not symmetric at ({i},{j})"),
                    ));
                }
            }
        }
        let m = Self::from_fn(dim, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        if m.upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        Ok(m)
    }

    /// `a a^T` for a column vector `a`.
    pub fn outer(a: &[f64]) -> Self {
        Self::from_fn(a.len(), |i, j| a[i] * a[j])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[tri_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = tri_index(self.dim, i, j);
        self.upper[k] = v;
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Zeroes the off-diagonal entries.
    pub fn diag_part(&self) -> Self {
        Self::from_diag(&self.diag())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "SymMatrix::dot dimension mismatch");
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * other.get(i, i);
            for j in (i + 1)..self.dim {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            upper: self.upper.iter().map(|v| v * a).collect(),
        }
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "SymMatrix::axpy dimension mismatch");
        Self {
            dim: self.dim,
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    /// `self * v` for a column vector.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Quadratic form `u^T self v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += u[i] * self.get(i, j) * v[j];
            }
        }
        s
    }

    /// Maximum absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Conjugation `q diag(f(lambda)) q^T` of this matrix's spectrum.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Ok(eig_sym(self)?.recompose(f))
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        self.axpy(-1.0, rhs)
    }
}

impl Neg for &SymMatrix {
    type Output = SymMatrix;
    fn neg(self) -> SymMatrix {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

/// Dense row-major rectangular matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!("{rows}x{cols}"), data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims(format!("{cols} columns"), r.len()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dims(
                format!("{} rows", self.cols),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T other`, e.g. the `K x K` overlap `x^T x'` of two `N x K` matrices.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims(
                format!("{} rows", self.rows),
                format!("{} rows", other.rows),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, ai) in a.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    out.data[i * other.cols + j] += ai * bj;
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product with rows indexed lexicographically, first factor most significant.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut data = vec![0.0; rows * cols];
        for i in 0..self.rows {
            for k in 0..other.rows {
                let r = i * other.rows + k;
                for j in 0..self.cols {
                    let a = self.get(i, j);
                    let base = r * cols + j * other.cols;
                    for (l, b) in other.row(k).iter().enumerate() {
                        data[base + l] = a * b;
                    }
                }
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dims(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

/// Anything with an entry-wise inner product.
pub trait Frobenius {
    fn frobenius(&self, other: &Self) -> Result<f64>;
}

impl Frobenius for SymMatrix {
    fn frobenius(&self, other: &Self) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::dims(self.dim, other.dim));
        }
        Ok(self.dot(other))
    }
}

impl Frobenius for Matrix {
    fn frobenius(&self, other: &Self) -> Result<f64> {
        self.dot(other)
    }
}

/// `sum_ij a_ij b_ij`
pub fn frobenius_dot<T: Frobenius>(a: &T, b: &T) -> Result<f64> {
    a.frobenius(b)
}

/// Eigenvalues in ascending order; column `i` of `vectors` pairs with `values[i]`.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenDecomposition {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.vectors.rows())
            .map(|r| self.vectors.get(r, i))
            .collect()
    }

    /// `V diag(f(lambda)) V^T`
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let k = self.values.len();
        let mapped: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        SymMatrix::from_fn(k, |i, j| {
            (0..k)
                .map(|c| self.vectors.get(i, c) * mapped[c] * self.vectors.get(j, c))
                .sum()
        })
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn eig_sym(m: &SymMatrix) -> Result<EigenDecomposition> {
    if !m.is_finite() {
        return Err(Error::NonFinite("eig_sym input"));
    }
    let n = m.dim();
    let mut a = m.to_matrix();
    let mut v = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
    let cap = 100 * n * n;
    let threshold = JACOBI_THRESHOLD * (1.0 + m.norm());
    let mut rotations = 0usize;

    loop {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a.get(p, q).abs());
            }
        }
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= threshold * 1e-3 {
                    continue;
                }
                rotations += 1;
                if rotations > cap {
                    return Err(Error::IterationCap {
                        what: "Jacobi eigensolver",
                        cap,
                    });
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(EigenDecomposition { values, vectors })
}

pub fn min_eigenvalue(m: &SymMatrix) -> Result<f64> {
    if m.dim() == 1 {
        return Ok(m.get(0, 0));
    }
    Ok(eig_sym(m)?.min())
}

/// `min eig(m) >= -tol`
pub fn is_psd(m: &SymMatrix, tol: f64) -> Result<bool> {
    debug_assert!(tol >= 0.0);
    Ok(min_eigenvalue(m)? >= -tol)
}

pub(crate) fn require_psd(m: &SymMatrix, tol: f64) -> Result<()> {
    let min = min_eigenvalue(m)?;
    if min < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Loewner order `a <= b`, i.e. `b - a` is PSD within `tol`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::dims(a.dim(), b.dim()));
    }
    is_psd(&(b - a), tol)
}

/// Principal square root of a PSD matrix; eigenvalues within tolerance below
/// zero are clipped.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    if m.dim() == 1 {
        let v = m.get(0, 0);
        if v < -PSD_TOL {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        return Ok(SymMatrix::from_diag(&[v.max(0.0).sqrt()]));
    }
    let e = eig_sym(m)?;
    if e.min() < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: e.min(),
        });
    }
    Ok(e.recompose(|l| l.max(0.0).sqrt()))
}

/// Frobenius-nearest PSD matrix: negative eigenvalues clipped to zero.
pub fn psd_project(m: &SymMatrix) -> Result<SymMatrix> {
    if m.dim() == 1 {
        return Ok(SymMatrix::from_diag(&[m.get(0, 0).max(0.0)]));
    }
    Ok(eig_sym(m)?.recompose(|l| l.max(0.0)))
}

/// `|h| |h^{-1}|` for positive definite `h`, `+inf` when `h` is singular.
pub fn condition_number(h: &SymMatrix) -> Result<f64> {
    let e = eig_sym(h)?;
    if e.min() < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: e.min(),
        });
    }
    let scale = e.max().abs().max(f64::MIN_POSITIVE);
    if e.min() <= 1e-14 * scale {
        return Ok(f64::INFINITY);
    }
    let norm: f64 = e.values.iter().map(|l| l * l).sum::<f64>().sqrt();
    let inv_norm: f64 = e.values.iter().map(|l| 1.0 / (l * l)).sum::<f64>().sqrt();
    Ok(norm * inv_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_from(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn reconstruction_residual(m: &SymMatrix) -> (f64, f64) {
        let e = eig_sym(m).unwrap();
        let back = e.recompose(|l| l);
        let k = m.dim();
        let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
        let mut orth = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                orth = orth.max((vtv.get(i, j) - target).abs());
            }
        }
        ((&back - m).norm(), orth)
    }

    fn arb_sym(k: usize) -> impl Strategy<Value = SymMatrix> {
        proptest::collection::vec(-5.0f64..5.0, k * (k + 1) / 2)
            .prop_map(move |v| SymMatrix::from_upper(k, v).unwrap())
    }

    fn arb_psd(k: usize) -> impl Strategy<Value = SymMatrix> {
        proptest::collection::vec(-2.0f64..2.0, k * k).prop_map(move |b| {
            let b = Matrix::from_vec(k, k, b).unwrap();
            let g = b.matmul(&b.transpose()).unwrap();
            SymMatrix::from_fn(k, |i, j| g.get(i, j))
        })
    }

    #[test]
    fn eig_of_diagonal() {
        let e = eig_sym(&SymMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values, vec![1.0, 3.0]);
        assert!((e.vector(0)[1].abs() - 1.0).abs() < 1e-15);
        assert!((e.vector(1)[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_of_swap() {
        let e = eig_sym(&sym_from(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_random_4x4_reconstructs() {
        let m = SymMatrix::from_upper(
            4,
            vec![1.3, -0.2, 0.7, 2.1, -0.4, 0.9, 0.05, 3.3, -1.7, 0.6],
        )
        .unwrap();
        let (res, orth) = reconstruction_residual(&m);
        assert!(res <= 1e-10 * (1.0 + m.norm()), "residual {res}");
        assert!(orth <= 1e-10);
    }

    #[test]
    fn psd_membership() {
        assert!(is_psd(&SymMatrix::identity(3), 0.0).unwrap());
        assert!(!is_psd(&sym_from(&[&[1.0, 2.0], &[2.0, 1.0]]), 1e-12).unwrap());
        assert!(is_psd(&SymMatrix::zeros(2), 0.0).unwrap());
    }

    #[test]
    fn loewner_examples() {
        let i = SymMatrix::identity(2);
        assert!(loewner_leq(&i, &i.scale(2.0), 0.0).unwrap());
        assert!(!loewner_leq(
            &SymMatrix::from_diag(&[1.0, 0.0]),
            &SymMatrix::from_diag(&[0.0, 1.0]),
            0.0
        )
        .unwrap());
        let m = sym_from(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert!(loewner_leq(&SymMatrix::zeros(2), &m, 0.0).unwrap());
        assert!(matches!(
            loewner_leq(&SymMatrix::zeros(2), &SymMatrix::zeros(3), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sqrt_examples() {
        let r = sqrt_psd(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!((&r - &SymMatrix::from_diag(&[2.0, 3.0])).norm() < 1e-14);
        let r = sqrt_psd(&SymMatrix::identity(3)).unwrap();
        assert!((&r - &SymMatrix::identity(3)).norm() < 1e-14);
        assert!(matches!(
            sqrt_psd(&SymMatrix::from_diag(&[1.0, -1.0])),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let p = psd_project(&SymMatrix::from_diag(&[2.0, -1.0])).unwrap();
        assert!((&p - &SymMatrix::from_diag(&[2.0, 0.0])).norm() < 1e-14);
        let m = sym_from(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert!((&psd_project(&m).unwrap() - &m).norm() < 1e-12);
        let p = psd_project(&sym_from(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        let expect = sym_from(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!((&p - &expect).norm() < 1e-12);
    }

    #[test]
    fn frobenius_examples() {
        let i = SymMatrix::identity(2);
        assert_eq!(frobenius_dot(&i, &i).unwrap(), 2.0);
        let m = sym_from(&[&[1.0, 2.0], &[2.0, 3.0]]);
        assert_eq!(frobenius_dot(&m, &SymMatrix::zeros(2)).unwrap(), 0.0);
        let s = sym_from(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(frobenius_dot(&m, &s).unwrap(), 4.0);
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(frobenius_dot(&a, &b).is_err());
    }

    #[test]
    fn condition_numbers() {
        assert!((condition_number(&SymMatrix::identity(2)).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(
            condition_number(&SymMatrix::from_diag(&[1.0, 0.0])).unwrap(),
            f64::INFINITY
        );
        let k = condition_number(&SymMatrix::from_diag(&[0.37, 0.37])).unwrap();
        assert!((k - 2.0).abs() < 1e-13);
        assert!(condition_number(&SymMatrix::from_diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn serde_as_rows() {
        let m = sym_from(&[&[1.0, 2.0], &[2.0, 3.0]]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[2.0,3.0]]");
        let back: SymMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn eig_invariants(m in (1usize..=6).prop_flat_map(arb_sym)) {
            let (res, orth) = reconstruction_residual(&m);
            prop_assert!(res <= 1e-10 * (1.0 + m.norm()));
            prop_assert!(orth <= 1e-10);
        }

        #[test]
        fn sqrt_squares_back(b in (1usize..=4).prop_flat_map(arb_psd)) {
            let r = sqrt_psd(&b).unwrap();
            prop_assert!(is_psd(&r, PSD_TOL).unwrap());
            let rr = r.to_matrix().matmul(&r.to_matrix()).unwrap();
            let diff = SymMatrix::from_fn(b.dim(), |i, j| rr.get(i, j) - b.get(i, j));
            prop_assert!(diff.norm() <= 1e-9 * (1.0 + b.norm()));
        }

        #[test]
        fn projection_idempotent_and_nonexpansive(
            (a, b) in (1usize..=4).prop_flat_map(|k| (arb_sym(k), arb_sym(k)))
        ) {
            let pa = psd_project(&a).unwrap();
            let pb = psd_project(&b).unwrap();
            prop_assert!((&psd_project(&pa).unwrap() - &pa).norm() <= 1e-10 * (1.0 + a.norm()));
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-10);
        }

        #[test]
        fn loewner_partial_order(
            (a, c1, c2) in (1usize..=3).prop_flat_map(|k| (arb_sym(k), arb_psd(k), arb_psd(k)))
        ) {
            prop_assert!(loewner_leq(&a, &a, 0.0).unwrap());
            let b = &a + &c1;
            let c = &b + &c2;
            prop_assert!(loewner_leq(&a, &b, PSD_TOL).unwrap());
            prop_assert!(loewner_leq(&b, &c, PSD_TOL).unwrap());
            prop_assert!(loewner_leq(&a, &c, PSD_TOL).unwrap());
            if loewner_leq(&b, &a, PSD_TOL).unwrap() {
                prop_assert!((&a - &b).norm() <= 1e-8 * (1.0 + a.norm()));
            }
        }
    }

    // Dual description of the cone: PSD iff nonnegative against every PSD matrix.
    #[test]
    fn psd_dual_characterization() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let random_psd = |k: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let b = Matrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
            let g = b.matmul(&b.transpose()).unwrap();
            SymMatrix::from_fn(k, |i, j| g.get(i, j))
        };
        for k in 1..=3 {
            let a: Vec<SymMatrix> = (0..200).map(|_| random_psd(k, &mut rng)).collect();
            let b: Vec<SymMatrix> = (0..200).map(|_| random_psd(k, &mut rng)).collect();
            for (x, y) in a.iter().zip(&b) {
                assert!(x.dot(y) >= -1e-12);
            }
            for _ in 0..50 {
                let m = SymMatrix::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
                let e = eig_sym(&m).unwrap();
                if e.min() >= 0.0 {
                    continue;
                }
                let witness = SymMatrix::outer(&e.vector(0));
                assert!(is_psd(&witness, PSD_TOL).unwrap());
                assert!(m.dot(&witness) < 0.0);
            }
        }
    }
}

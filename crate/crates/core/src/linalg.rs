//! Dense linear-algebra kernels: symmetric eigendecomposition (cyclic Jacobi),
//! LU with partial pivoting and Householder-QR least squares.
//!
//! Matrices here are small (correlation matrices, reduced Jacobians, PCE
//! design matrices), so everything is stored row-major in a flat `Vec<f64>`.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, allowed {allowed:e})")]
    NotSymmetric { asymmetry: f64, allowed: f64 },
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("least-squares matrix is rank deficient: {deficient} of {cols} columns are numerically dependent")]
    RankDeficient { deficient: usize, cols: usize },
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries. Rejects empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Shape(format!("{rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::Shape("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Finite-valued vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Self(data))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order and
/// eigenvectors stored column-wise.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DenseVector,
    pub vectors: DenseMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition. Iterates until the off-diagonal
/// Frobenius norm drops below `1e-12 * ||A||_F`.
pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(LinalgError::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let scale = a.frobenius_norm();
    let asym = a.max_asymmetry();
    let allowed = 1e-12 * scale;
    if asym > allowed {
        return Err(LinalgError::NotSymmetric {
            asymmetry: asym,
            allowed,
        });
    }

    let mut m = a.clone();
    // symmetrize exactly so rotations see a symmetric matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let target = 1e-12 * scale;

    let off_norm = |m: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > target {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence(sweeps));
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, col)] = v[(k, src)];
        }
    }
    Ok(SymEig {
        values: DenseVector(values),
        vectors,
    })
}

/// LU factorization with partial pivoting, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl LuFactorization {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(LinalgError::Shape(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let tol = 1e-14 * a.frobenius_norm();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv_row, piv_val) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_val <= tol || piv_val == 0.0 {
                return Err(LinalgError::Singular {
                    column: k,
                    pivot: piv_val,
                });
            }
            if piv_row != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, piv_row * n + j);
                }
                perm.swap(k, piv_row);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= factor * u;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows;
        if b.len() != n {
            return Err(LinalgError::Shape(format!(
                "right-hand side of length {} for a {n}x{n} system",
                b.len()
            )));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }
}

pub fn lu_solve(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    let x = LuFactorization::new(a)?.solve(b.as_slice())?;
    DenseVector::new(x)
}

/// Least-squares solution `argmin ||L c - y||_2` by Householder QR.
///
/// A column whose `|R_kk|` falls below `1e-12` times the largest diagonal
/// magnitude is counted as deficient and the solve is rejected.
pub fn lstsq(l: &DenseMatrix, y: &DenseVector) -> Result<DenseVector> {
    let (m, n) = (l.rows, l.cols);
    if m < n {
        return Err(LinalgError::Shape(format!(
            "least squares needs rows >= cols, got {m}x{n}"
        )));
    }
    if y.len() != m {
        return Err(LinalgError::Shape(format!(
            "observation vector of length {} for {m} rows",
            y.len()
        )));
    }
    let mut r = l.clone();
    let mut rhs = y.as_slice().to_vec();

    for k in 0..n {
        let alpha = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let sign = if r[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
        // v = x + sign*|x| e1, stored in a scratch vector
        let mut v: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let proj: f64 = v.iter().enumerate().map(|(t, vi)| vi * r[(k + t, j)]).sum();
            let f = 2.0 * proj / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                r[(k + t, j)] -= f * vi;
            }
        }
        let proj: f64 = v.iter().enumerate().map(|(t, vi)| vi * rhs[k + t]).sum();
        let f = 2.0 * proj / vnorm2;
        for (t, vi) in v.iter().enumerate() {
            rhs[k + t] -= f * vi;
        }
    }

    let diag_max = (0..n).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    let deficient = (0..n)
        .filter(|&k| r[(k, k)].abs() < 1e-12 * diag_max || diag_max == 0.0)
        .count();
    if deficient > 0 {
        return Err(LinalgError::RankDeficient { deficient, cols: n });
    }

    let mut c = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in (i + 1)..n {
            s -= r[(i, j)] * c[j];
        }
        c[i] = s / r[(i, i)];
    }
    DenseVector::new(c)
}

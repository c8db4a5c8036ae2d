//! Regression-based polynomial chaos expansion in probabilists' Hermite
//! polynomials.

use std::fmt::Write as _;

use thiserror::Error;

use crate::linalg::{lstsq, norm2, sym_eig, DenseMatrix, DenseVector, LinalgError};
use crate::sampling::Standardization;

#[derive(Debug, Error)]
pub enum PceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{samples} samples cannot determine {terms} expansion terms")]
    Underdetermined { samples: usize, terms: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("malformed model text: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, PceError>;

/// Total-degree multi-index set in graded-lexicographic order: by total
/// degree, then by the first component descending, then the second, and so
/// on. For n=2, p=2 this is (0,0),(1,0),(0,1),(2,0),(1,1),(0,2).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexSet {
    pub dim: usize,
    pub degree: usize,
    pub indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Squared norm `prod_k m_k!` of each basis polynomial under the
    /// standard normal measure.
    pub fn norms_squared(&self) -> Vec<f64> {
        self.indices.iter().map(|m| m.iter().map(|&k| factorial(k)).product()).collect()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

pub fn multi_indices(n: usize, p: usize) -> Result<MultiIndexSet> {
    if n == 0 {
        return Err(PceError::InvalidInput("dimension must be at least 1".into()));
    }
    fn fill(prefix: &mut Vec<usize>, remaining: usize, slots: usize, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            fill(prefix, remaining - first, slots - 1, out);
            prefix.pop();
        }
    }
    let mut indices = Vec::new();
    for total in 0..=p {
        fill(&mut Vec::with_capacity(n), total, n, &mut indices);
    }
    Ok(MultiIndexSet { dim: n, degree: p, indices })
}

/// Probabilists' Hermite polynomial He_m(x).
pub fn hermite(m: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if m == 0 {
        return prev;
    }
    for k in 1..m {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn basis_row(basis: &MultiIndexSet, z: &[f64]) -> Vec<f64> {
    let tables: Vec<Vec<f64>> = z.iter().map(|&x| (0..=basis.degree).map(|m| hermite(m, x)).collect()).collect();
    basis
        .indices
        .iter()
        .map(|m| m.iter().enumerate().map(|(k, &mk)| tables[k][mk]).product())
        .collect()
}

/// Rows `psi_j(zeta_i)` for standardized samples.
pub fn design_matrix(zeta: &[Vec<f64>], basis: &MultiIndexSet) -> Result<DenseMatrix> {
    if zeta.is_empty() {
        return Err(PceError::InvalidInput("no samples".into()));
    }
    let mut entries = Vec::with_capacity(zeta.len() * basis.len());
    for z in zeta {
        if z.len() != basis.dim {
            return Err(PceError::InvalidInput(format!(
                "sample has {} coordinates, basis dimension is {}",
                z.len(),
                basis.dim
            )));
        }
        entries.extend(basis_row(basis, z));
    }
    Ok(DenseMatrix::new(zeta.len(), basis.len(), entries)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PceModel {
    pub basis: MultiIndexSet,
    pub coefficients: DenseVector,
    pub standardization: Standardization,
    /// Euclidean norm of the training residual `L c - y`.
    pub training_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    /// Some standardized coordinate lies outside [-3, 3].
    pub extrapolated: bool,
}

/// Least-squares fit of the coefficients.
pub fn fit(
    basis: &MultiIndexSet,
    design: &DenseMatrix,
    y: &[f64],
    standardization: Standardization,
) -> Result<PceModel> {
    if design.cols() != basis.len() || design.rows() != y.len() {
        return Err(PceError::InvalidInput(format!(
            "design matrix {}x{} does not match {} terms and {} outputs",
            design.rows(),
            design.cols(),
            basis.len(),
            y.len()
        )));
    }
    if standardization.dim() != basis.dim {
        return Err(PceError::InvalidInput("standardization dimension differs from basis dimension".into()));
    }
    if design.rows() < design.cols() {
        return Err(PceError::Underdetermined { samples: design.rows(), terms: design.cols() });
    }
    let yv = DenseVector::new(y.to_vec())?;
    let c = lstsq(design, &yv)?;
    let fitted = design.matvec(c.as_slice());
    let r: Vec<f64> = fitted.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(PceModel { basis: basis.clone(), coefficients: c, standardization, training_residual: norm2(&r) })
}

impl PceModel {
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let z = self.standardization.forward(x);
        self.predict_standardized(&z)
    }

    pub fn predict_standardized(&self, z: &[f64]) -> Prediction {
        let row = basis_row(&self.basis, z);
        let value = row.iter().zip(self.coefficients.as_slice()).map(|(a, b)| a * b).sum();
        Prediction { value, extrapolated: z.iter().any(|v| v.abs() > 3.0) }
    }

    /// Mean and variance of the expansion under standard normal inputs.
    pub fn moments(&self) -> (f64, f64) {
        let c = self.coefficients.as_slice();
        let norms = self.basis.norms_squared();
        let var = c.iter().zip(&norms).skip(1).map(|(c, n)| c * c * n).sum();
        (c[0], var)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pce-model v1");
        let _ = writeln!(s, "dimension {}", self.basis.dim);
        let _ = writeln!(s, "degree {}", self.basis.degree);
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "means {}", join(&self.standardization.means));
        let _ = writeln!(s, "stds {}", join(&self.standardization.stds));
        let _ = writeln!(s, "training_residual {:.16e}", self.training_residual);
        let _ = writeln!(s, "terms {}", self.basis.len());
        for (m, c) in self.basis.indices.iter().zip(self.coefficients.as_slice()) {
            let idx = m.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "{idx} {c:.16e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| PceError::Parse(what.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("pce-model v1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected {key}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad number {v}")));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad(&format!("bad integer {v}")));
        let dim = int(&field("dimension")?.concat())?;
        let degree = int(&field("degree")?.concat())?;
        let means = field("means")?.iter().map(|v| num(v)).collect::<Result<Vec<_>>>()?;
        let stds = field("stds")?.iter().map(|v| num(v)).collect::<Result<Vec<_>>>()?;
        let training_residual = num(&field("training_residual")?.concat())?;
        let terms = int(&field("terms")?.concat())?;
        let basis = multi_indices(dim, degree)?;
        if basis.len() != terms {
            return Err(bad("term count does not match dimension and degree"));
        }
        let mut coefficients = Vec::with_capacity(terms);
        for expected in &basis.indices {
            let line = lines.next().ok_or_else(|| bad("missing coefficient row"))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != dim + 1 {
                return Err(bad("coefficient row has the wrong width"));
            }
            let idx = parts[..dim].iter().map(|v| int(v)).collect::<Result<Vec<_>>>()?;
            if &idx != expected {
                return Err(bad("multi-index order differs from graded-lexicographic"));
            }
            coefficients.push(num(parts[dim])?);
        }
        let standardization = Standardization::new(means, stds).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { basis, coefficients: DenseVector::new(coefficients)?, standardization, training_residual })
    }
}

/// L2 relative error in percent, `100 |c - r| / |r|`.
pub fn relative_error(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(PceError::InvalidInput(format!(
            "length mismatch: {} reference vs {} candidate values",
            reference.len(),
            candidate.len()
        )));
    }
    let den = norm2(reference);
    if !(den > 0.0) {
        return Err(PceError::InvalidInput("reference vector has zero norm".into()));
    }
    let diff: Vec<f64> = reference.iter().zip(candidate).map(|(r, c)| r - c).collect();
    Ok(100.0 * norm2(&diff) / den)
}

/// Orthonormal Hermite values `He_{n-1}(x)/sqrt((n-1)!)` and
/// `He_n(x)/sqrt(n!)`.
fn normalized_hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

/// Gauss-Hermite rule for the standard normal weight, weights summing to
/// one. Nodes start from the Golub-Welsch eigenvalues and are polished by
/// Newton steps on He_n; weights use `1 / (n psi_{n-1}(x)^2)`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(PceError::InvalidInput("quadrature needs at least one node".into()));
    }
    let mut entries = vec![0.0; n * n];
    for k in 1..n {
        let b = (k as f64).sqrt();
        entries[(k - 1) * n + k] = b;
        entries[k * n + k - 1] = b;
    }
    let eig = sym_eig(&DenseMatrix::new(n, n, entries)?)?;
    let mut nodes: Vec<f64> = eig.values.as_slice().to_vec();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pm1, pn) = normalized_hermite_pair(n, *x);
            let step = pn / ((n as f64).sqrt() * pm1);
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let (pm1, _) = normalized_hermite_pair(n, *x);
        weights.push(1.0 / (n as f64 * pm1 * pm1));
    }
    Ok((nodes, weights))
}

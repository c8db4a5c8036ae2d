//! Snapshot homogenization, POD by the method of snapshots, supremizer
//! enrichment and energy diagnostics.

use std::path::Path;

use log::warn;
use thiserror::Error;

use crate::fom::banded::BandedMatrix;
use crate::fom::operators;
use crate::fom::{solve_potential_lifting, velocity_bcs, FomError, ParameterPoint};
use crate::linalg::{sym_eig, DenseMatrix, LinalgError};
use crate::mesh::{Arity, Bc, CellField, MeshError, StructuredMesh};

#[derive(Debug, Error)]
pub enum PodError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("snapshot {0} has no parameter point attached")]
    MissingParameters(usize),
    #[error("degenerate snapshot set: {0}")]
    Degenerate(String),
    #[error("field is not divergence-free: max per-cell net flux {0:e}")]
    NotDivergenceFree(f64),
    #[error("{0}")]
    Solve(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fom(#[from] FomError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PodError>;

/// Per-cell net flux allowed for homogenized snapshots.
pub const HOMOGENIZED_DIVERGENCE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub fields: Vec<CellField>,
    pub params: Vec<Option<ParameterPoint>>,
}

impl SnapshotSet {
    pub fn new(fields: Vec<CellField>, params: Vec<Option<ParameterPoint>>) -> Result<Self> {
        if fields.is_empty() {
            return Err(PodError::InvalidInput("a snapshot set needs at least one snapshot".into()));
        }
        if params.len() != fields.len() {
            return Err(PodError::InvalidInput(format!(
                "{} snapshots but {} parameter entries",
                fields.len(),
                params.len()
            )));
        }
        let (id, arity) = (fields[0].mesh_id(), fields[0].arity());
        if fields.iter().any(|f| f.mesh_id() != id || f.arity() != arity) {
            return Err(PodError::Mesh(MeshError::Mismatch));
        }
        Ok(Self { fields, params })
    }

    pub fn with_params(fields: Vec<CellField>, params: &[ParameterPoint]) -> Result<Self> {
        Self::new(fields, params.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Potential-flow lifting functions with unit inlet values (1,0) and (0,1).
#[derive(Debug, Clone)]
pub struct LiftingPair {
    pub cx: CellField,
    pub cy: CellField,
}

impl LiftingPair {
    pub fn compute(mesh: &StructuredMesh) -> Result<Self> {
        Ok(Self { cx: solve_potential_lifting(mesh, [1.0, 0.0])?, cy: solve_potential_lifting(mesh, [0.0, 1.0])? })
    }

    /// `mu_x phi_cx + mu_y phi_cy`.
    pub fn field(&self, mu: &ParameterPoint) -> Result<CellField> {
        let [mx, my] = mu.mu();
        Ok(self.cx.lin_comb(mx, &self.cy, my)?)
    }
}

fn max_net_flux(mesh: &StructuredMesh, field: &CellField) -> Option<f64> {
    field
        .flux()
        .map(|f| operators::net_flux(mesh, f).iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Subtracts the lifting contribution `mu_x phi_cx + mu_y phi_cy` from
/// every velocity snapshot.
pub fn homogenize(mesh: &StructuredMesh, snaps: &SnapshotSet, lifting: &LiftingPair) -> Result<SnapshotSet> {
    let mut out = Vec::with_capacity(snaps.len());
    for (k, (u, mu)) in snaps.fields.iter().zip(&snaps.params).enumerate() {
        let mu = mu.ok_or(PodError::MissingParameters(k))?;
        let h = u.lin_comb(1.0, &lifting.field(&mu)?, -1.0)?;
        if let Some(div) = max_net_flux(mesh, &h) {
            if div > HOMOGENIZED_DIVERGENCE_TOL {
                return Err(PodError::NotDivergenceFree(div));
            }
        }
        out.push(h);
    }
    SnapshotSet::new(out, snaps.params.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Velocity,
    Pressure,
    Supremizer,
}

#[derive(Debug, Clone)]
pub struct PodBasis {
    pub kind: BasisKind,
    pub modes: Vec<CellField>,
    /// Full clamped spectrum, descending; may be longer than `modes`.
    pub eigenvalues: Vec<f64>,
}

impl PodBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn truncated(&self, n: usize) -> PodBasis {
        PodBasis { kind: self.kind, modes: self.modes[..n.min(self.len())].to_vec(), eigenvalues: self.eigenvalues.clone() }
    }

    /// Coefficients of the orthogonal projection of `field`.
    pub fn project(&self, mesh: &StructuredMesh, field: &CellField) -> Result<Vec<f64>> {
        self.modes.iter().map(|m| Ok(mesh.inner_product(m, field)?)).collect()
    }

    /// `sum_i c_i phi_i`.
    pub fn expand(&self, coefficients: &[f64]) -> Result<CellField> {
        if coefficients.len() != self.len() || self.is_empty() {
            return Err(PodError::InvalidInput(format!(
                "{} coefficients for {} modes",
                coefficients.len(),
                self.len()
            )));
        }
        combination(&self.modes, coefficients)
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self, mesh: &StructuredMesh) -> Result<f64> {
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            for j in 0..=i {
                let g = mesh.inner_product(&self.modes[i], &self.modes[j])?;
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        Ok(worst)
    }
}

/// `sum_k c_k f_k` over fields sharing mesh and boundary structure.
pub fn combination(fields: &[CellField], coefficients: &[f64]) -> Result<CellField> {
    let mut acc = fields[0].scaled(coefficients[0]);
    for (f, &c) in fields.iter().zip(coefficients).skip(1) {
        acc.axpy(c, f)?;
    }
    Ok(acc)
}

fn gram(mesh: &StructuredMesh, fields: &[CellField]) -> Result<DenseMatrix> {
    let n = fields.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = mesh.inner_product(&fields[i], &fields[j])?;
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(DenseMatrix::new(n, n, k)?)
}

/// Modified Gram-Schmidt (two passes) under the mesh inner product. Fields
/// whose remaining norm falls below `drop_tol` times their original norm are
/// discarded.
fn orthonormalize(mesh: &StructuredMesh, fields: Vec<CellField>, drop_tol: f64) -> Result<Vec<CellField>> {
    let mut out: Vec<CellField> = Vec::with_capacity(fields.len());
    for (k, mut f) in fields.into_iter().enumerate() {
        let original = mesh.norm(&f)?;
        for _ in 0..2 {
            for q in &out {
                let c = mesh.inner_product(q, &f)?;
                f.axpy(-c, q)?;
            }
        }
        let norm = mesh.norm(&f)?;
        if !(norm > drop_tol * original) || norm == 0.0 {
            warn!("dropping linearly dependent field {k} during orthonormalization");
            continue;
        }
        out.push(f.scaled(1.0 / norm));
    }
    Ok(out)
}

fn clamped_spectrum(values: &[f64], scale: f64) -> Vec<f64> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    values
        .iter()
        .map(|&v| if v < 1e-12 * top { 0.0 } else { v / scale })
        .collect()
}

/// POD by the method of snapshots: eigenvalues of `K/N_s` with
/// `K_mn = (u_m, u_n)`, modes `sum_n v_i(n) u_n / sqrt(N_s lambda_i)`.
/// Modes with eigenvalue below `1e-12 lambda_1` are never returned.
pub fn pod_modes(mesh: &StructuredMesh, snaps: &SnapshotSet, n: usize, kind: BasisKind) -> Result<PodBasis> {
    let ns = snaps.len();
    if n == 0 || n > ns {
        return Err(PodError::InvalidInput(format!("requested {n} modes from {ns} snapshots")));
    }
    let k = gram(mesh, &snaps.fields)?;
    let eig = sym_eig(&k)?;
    let raw = eig.values.as_slice();
    if !(raw[0] > 0.0) {
        return Err(PodError::Degenerate("all snapshots are zero".into()));
    }
    let eigenvalues = clamped_spectrum(raw, ns as f64);
    let mut modes = Vec::with_capacity(n);
    for i in 0..n {
        if eigenvalues[i] == 0.0 {
            break;
        }
        let v = eig.vectors.column(i);
        let scale = 1.0 / (ns as f64 * eigenvalues[i]).sqrt();
        let coeffs: Vec<f64> = v.iter().map(|x| x * scale).collect();
        modes.push(combination(&snaps.fields, &coeffs)?);
    }
    let modes = orthonormalize(mesh, modes, 1e-8)?;
    Ok(PodBasis { kind, modes, eigenvalues })
}

/// Running energy fractions `sum_{i<=k} lambda_i / sum_i lambda_i`.
pub fn cumulative_energy(basis: &PodBasis) -> Result<Vec<f64>> {
    cumulative_fractions(&basis.eigenvalues)
}

pub fn cumulative_fractions(values: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(PodError::Degenerate("zero total energy".into()));
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    Ok(out)
}

/// Matrix of the vector Laplacian with homogeneous Dirichlet data on
/// inlet, walls and obstacle and zero gradient at the outlet, negated so it
/// is positive definite, in integrated (not per-volume) form.
fn dirichlet_laplacian(mesh: &StructuredMesh, bcs: &[Bc]) -> BandedMatrix {
    let mut m = BandedMatrix::new(mesh.n_cells(), mesh.bandwidth());
    for face in mesh.faces() {
        let c = face.area / face.distance;
        let o = face.owner;
        match face.neighbour {
            Some(nb) => {
                m.add(o, o, c);
                m.add(nb, nb, c);
                m.add(o, nb, -c);
                m.add(nb, o, -c);
            }
            None => {
                let (slope, _) = bcs[face.patch.expect("boundary face")].face_coefficients(0, face.distance);
                m.add(o, o, c * (1.0 - slope));
            }
        }
    }
    m
}

/// Supremizers `s_i` solving `lap s_i = grad chi_i`, orthonormalized among
/// themselves. Face fluxes are interpolated from the cell values.
pub fn supremizer_modes(mesh: &StructuredMesh, pressure: &PodBasis, n_sup: usize) -> Result<PodBasis> {
    if n_sup > pressure.len() {
        return Err(PodError::InvalidInput(format!(
            "{n_sup} supremizers requested but only {} pressure modes exist",
            pressure.len()
        )));
    }
    let bcs = velocity_bcs([0.0, 0.0]);
    let lu = dirichlet_laplacian(mesh, &bcs)
        .factor()
        .map_err(|b| PodError::Solve(format!("supremizer Laplace solve broke down at row {} (pivot {:e})", b.row, b.pivot)))?;
    let n = mesh.n_cells();
    let mut raw = Vec::with_capacity(n_sup);
    for (i, chi) in pressure.modes.iter().take(n_sup).enumerate() {
        let g = operators::gradient(mesh, chi);
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= 1e-14 * chi.max_abs().max(f64::MIN_POSITIVE) {
            warn!("pressure mode {i} has zero gradient; skipping its supremizer");
            continue;
        }
        let mut values = vec![0.0; 2 * n];
        for c in 0..2 {
            let mut b: Vec<f64> = (0..n).map(|k| -mesh.cells()[k].volume * g[2 * k + c]).collect();
            lu.solve(&mut b);
            for k in 0..n {
                values[2 * k + c] = b[k];
            }
        }
        let s = CellField::new(mesh, Arity::Vector, values, bcs.clone())?;
        let flux = operators::interpolated_flux(mesh, &s);
        raw.push(s.with_flux(mesh, flux)?);
    }
    if raw.is_empty() {
        return Err(PodError::Degenerate("no nonzero supremizer could be generated".into()));
    }
    let k = gram(mesh, &raw)?;
    let spectrum = clamped_spectrum(sym_eig(&k)?.values.as_slice(), raw.len() as f64);
    let modes = orthonormalize(mesh, raw, 1e-10)?;
    Ok(PodBasis { kind: BasisKind::Supremizer, modes, eigenvalues: spectrum })
}

/// Eigenvalue table with cumulative energy columns for velocity, pressure
/// and supremizer spectra; shorter spectra leave empty cells.
pub fn write_energy_csv(path: &Path, velocity: &PodBasis, pressure: &PodBasis, supremizer: &PodBasis) -> Result<()> {
    let cols = [velocity, pressure, supremizer]
        .iter()
        .map(|b| Ok((b.eigenvalues.clone(), cumulative_energy(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = cols.iter().map(|c| c.0.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "lambda_u", "cumulative_u", "lambda_p", "cumulative_p", "lambda_sup", "cumulative_sup"])?;
    for r in 0..rows {
        let mut rec = vec![(r + 1).to_string()];
        for (lam, cum) in &cols {
            match (lam.get(r), cum.get(r)) {
                (Some(l), Some(c)) => {
                    rec.push(format!("{l:.16e}"));
                    rec.push(format!("{c:.16e}"));
                }
                _ => {
                    rec.push(String::new());
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

//! POD-Galerkin reduced model over the extended velocity basis
//! `[phi_cx, phi_cy, POD modes, supremizers]` and the pressure POD basis.
//!
//! The lifting coefficients are pinned to the inflow components, so the
//! operators are assembled once and the parameter enters only through those
//! two slots.

use std::fmt::Write as _;
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use thiserror::Error;

use crate::fom::operators::{self, Upwind};
use crate::fom::{compute_lift, FlowState, FomError, ParameterPoint};
use crate::linalg::{norm2, DenseMatrix, LinalgError, LuFactorization};
use crate::mesh::{Arity, Bc, CellField, MeshError, StructuredMesh};
use crate::pod::{combination, BasisKind, LiftingPair, PodBasis, PodError};

#[derive(Debug, Error)]
pub enum RomError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("reduced Jacobian is singular at Newton iteration {iteration} ({source}); try more supremizer modes")]
    SingularJacobian {
        iteration: usize,
        #[source]
        source: LinalgError,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Fom(#[from] FomError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("malformed artifact: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RomError>;

pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 100;

/// All bases needed online.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub lifting: LiftingPair,
    pub velocity: PodBasis,
    pub supremizers: PodBasis,
    pub pressure: PodBasis,
}

impl ReducedBasis {
    pub fn n_u(&self) -> usize {
        self.velocity.len()
    }

    pub fn n_sup(&self) -> usize {
        self.supremizers.len()
    }

    pub fn n_p(&self) -> usize {
        self.pressure.len()
    }

    /// Velocity fields in slot order.
    pub fn extended(&self) -> Vec<CellField> {
        let mut v = vec![self.lifting.cx.clone(), self.lifting.cy.clone()];
        v.extend(self.velocity.modes.iter().cloned());
        v.extend(self.supremizers.modes.iter().cloned());
        v
    }

    pub fn truncated(&self, n_u: usize, n_sup: usize, n_p: usize) -> Result<Self> {
        if n_u > self.n_u() || n_sup > self.n_sup() || n_p > self.n_p() {
            return Err(RomError::InvalidInput(format!(
                "cannot truncate ({}, {}, {}) modes to ({n_u}, {n_sup}, {n_p})",
                self.n_u(),
                self.n_sup(),
                self.n_p()
            )));
        }
        Ok(Self {
            lifting: self.lifting.clone(),
            velocity: self.velocity.truncated(n_u),
            supremizers: self.supremizers.truncated(n_sup),
            pressure: self.pressure.truncated(n_p),
        })
    }

    /// Reduced coordinates of a full-order state: pinned lifting slots,
    /// POD projection of the homogenized velocity, zero supremizer
    /// coefficients and the pressure projection.
    pub fn project_state(&self, mesh: &StructuredMesh, flow: &FlowState) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = flow.velocity.lin_comb(1.0, &self.lifting.field(&flow.mu)?, -1.0)?;
        let mut a = flow.mu.mu().to_vec();
        a.extend(self.velocity.project(mesh, &h)?);
        a.extend(std::iter::repeat(0.0).take(self.n_sup()));
        let b = self.pressure.project(mesh, &flow.pressure)?;
        Ok((a, b))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::from("reduced-basis v1\n");
        let mut block = |name: &str, fields: &[CellField]| {
            let _ = writeln!(s, "block {name} {}", fields.len());
            for f in fields {
                write_field(&mut s, f);
            }
        };
        block("lifting", &[self.lifting.cx.clone(), self.lifting.cy.clone()]);
        block("velocity", &self.velocity.modes);
        block("supremizer", &self.supremizers.modes);
        block("pressure", &self.pressure.modes);
        let mut spectra = |name: &str, v: &[f64]| {
            let _ = writeln!(s, "spectrum {name} {}", join(v));
        };
        spectra("velocity", &self.velocity.eigenvalues);
        spectra("supremizer", &self.supremizers.eigenvalues);
        spectra("pressure", &self.pressure.eigenvalues);
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path, mesh: &StructuredMesh) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("reduced-basis v1") {
            return Err(RomError::Parse("missing basis header".into()));
        }
        let mut read_block = |name: &str| -> Result<Vec<CellField>> {
            let header = lines.next().ok_or_else(|| RomError::Parse(format!("missing block {name}")))?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "block" || parts[1] != name {
                return Err(RomError::Parse(format!("expected block {name}, found {header:?}")));
            }
            let n: usize = parts[2].parse().map_err(|_| RomError::Parse("bad block size".into()))?;
            (0..n).map(|_| read_field(&mut lines, mesh)).collect()
        };
        let lifting = read_block("lifting")?;
        let velocity = read_block("velocity")?;
        let supremizers = read_block("supremizer")?;
        let pressure = read_block("pressure")?;
        let mut spectrum = |name: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| RomError::Parse(format!("missing spectrum {name}")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("spectrum") || parts.next() != Some(name) {
                return Err(RomError::Parse(format!("expected spectrum {name}")));
            }
            parts.map(parse_f64).collect()
        };
        let (sv, ss, sp) = (spectrum("velocity")?, spectrum("supremizer")?, spectrum("pressure")?);
        let mut lifting = lifting.into_iter();
        let (cx, cy) = match (lifting.next(), lifting.next()) {
            (Some(cx), Some(cy)) => (cx, cy),
            _ => return Err(RomError::Parse("lifting block needs two fields".into())),
        };
        Ok(Self {
            lifting: LiftingPair { cx, cy },
            velocity: PodBasis { kind: BasisKind::Velocity, modes: velocity, eigenvalues: sv },
            supremizers: PodBasis { kind: BasisKind::Supremizer, modes: supremizers, eigenvalues: ss },
            pressure: PodBasis { kind: BasisKind::Pressure, modes: pressure, eigenvalues: sp },
        })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| RomError::Parse(format!("bad number {s:?}")))
}

fn write_field(s: &mut String, f: &CellField) {
    let arity = match f.arity() {
        Arity::Scalar => "scalar",
        Arity::Vector => "vector",
    };
    let bcs: Vec<String> = f
        .bcs()
        .iter()
        .map(|b| match b {
            Bc::FixedValue(v) => format!("fixed {:.16e} {:.16e}", v[0], v[1]),
            Bc::ZeroGradient => "zero".to_string(),
            Bc::FixedGradient(g) => format!("gradient {:.16e} {:.16e}", g[0], g[1]),
        })
        .collect();
    let _ = writeln!(s, "field {arity} {}", bcs.join(" ; "));
    let _ = writeln!(s, "{}", join(f.values()));
    match f.flux() {
        Some(flux) => {
            let _ = writeln!(s, "flux {}", join(flux));
        }
        None => {
            let _ = writeln!(s, "noflux");
        }
    }
}

fn read_field<'a>(lines: &mut impl Iterator<Item = &'a str>, mesh: &StructuredMesh) -> Result<CellField> {
    let bad = |m: &str| RomError::Parse(m.to_string());
    let header = lines.next().ok_or_else(|| bad("missing field header"))?;
    let rest = header.strip_prefix("field ").ok_or_else(|| bad("expected field header"))?;
    let (arity, bcs) = rest.split_once(' ').ok_or_else(|| bad("field header too short"))?;
    let arity = match arity {
        "scalar" => Arity::Scalar,
        "vector" => Arity::Vector,
        _ => return Err(bad("unknown arity")),
    };
    let bcs = bcs
        .split(';')
        .map(|b| {
            let p: Vec<&str> = b.split_whitespace().collect();
            match p.as_slice() {
                ["zero"] => Ok(Bc::ZeroGradient),
                ["fixed", x, y] => Ok(Bc::FixedValue([parse_f64(x)?, parse_f64(y)?])),
                ["gradient", x, y] => Ok(Bc::FixedGradient([parse_f64(x)?, parse_f64(y)?])),
                _ => Err(bad("bad boundary condition")),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let values = lines
        .next()
        .ok_or_else(|| bad("missing values"))?
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<Vec<_>>>()?;
    let field = CellField::new(mesh, arity, values, bcs)?;
    let flux_line = lines.next().ok_or_else(|| bad("missing flux line"))?;
    if flux_line == "noflux" {
        return Ok(field);
    }
    let flux = flux_line
        .strip_prefix("flux ")
        .ok_or_else(|| bad("bad flux line"))?
        .split_whitespace()
        .map(parse_f64)
        .collect::<Result<Vec<_>>>()?;
    Ok(field.with_flux(mesh, flux)?)
}

/// Reduced operators; velocity slots are `[lift x, lift y, POD..., sup...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedOperators {
    pub n_u: usize,
    pub n_sup: usize,
    pub n_p: usize,
    pub nu: f64,
    /// `(phi_i, lap phi_j)`.
    pub b: DenseMatrix,
    /// `(phi_i, conv(F_j, phi_k))` stored at `(i * n + j) * n + k`.
    pub c: Vec<f64>,
    /// `(phi_i, grad chi_j)`.
    pub h: DenseMatrix,
    /// `(chi_i, div F_j)`.
    pub p: DenseMatrix,
}

impl ReducedOperators {
    /// Extended velocity dimension `2 + n_u + n_sup`.
    pub fn n(&self) -> usize {
        2 + self.n_u + self.n_sup
    }

    pub fn pod_slots(&self) -> std::ops::Range<usize> {
        2..2 + self.n_u
    }

    pub fn supremizer_slots(&self) -> std::ops::Range<usize> {
        2 + self.n_u..self.n()
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n();
        self.c[(i * n + j) * n + k]
    }

    /// Operators of the leading `n_u` POD, `n_sup` supremizer and `n_p`
    /// pressure modes (the bases are hierarchical, so this is exact).
    pub fn truncated(&self, n_u: usize, n_sup: usize, n_p: usize) -> Result<Self> {
        if n_u > self.n_u || n_sup > self.n_sup || n_p > self.n_p {
            return Err(RomError::InvalidInput(format!(
                "cannot truncate ({}, {}, {}) operators to ({n_u}, {n_sup}, {n_p})",
                self.n_u, self.n_sup, self.n_p
            )));
        }
        let slots: Vec<usize> = (0..2 + n_u).chain(2 + self.n_u..2 + self.n_u + n_sup).collect();
        let m = slots.len();
        let pick = |a: &DenseMatrix, rows: &[usize], cols: &[usize]| {
            let e = rows.iter().flat_map(|&r| cols.iter().map(move |&c| a[(r, c)])).collect();
            DenseMatrix::new(rows.len(), cols.len(), e)
        };
        let pslots: Vec<usize> = (0..n_p).collect();
        let mut c = Vec::with_capacity(m * m * m);
        for &i in &slots {
            for &j in &slots {
                for &k in &slots {
                    c.push(self.c(i, j, k));
                }
            }
        }
        Ok(Self {
            n_u,
            n_sup,
            n_p,
            nu: self.nu,
            b: pick(&self.b, &slots, &slots)?,
            c,
            h: pick(&self.h, &slots, &pslots)?,
            p: pick(&self.p, &pslots, &slots)?,
        })
    }

    /// `sum_jk C_ijk a_j a_k` for every row i.
    fn convective(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..n {
                    if a[j] == 0.0 {
                        continue;
                    }
                    let row = &self.c[(i * n + j) * n..(i * n + j + 1) * n];
                    s += a[j] * row.iter().zip(a).map(|(c, ak)| c * ak).sum::<f64>();
                }
                s
            })
            .collect()
    }

    /// Momentum residual `nu B a - a C a - H b` on the free (test) rows
    /// followed by the continuity residual `P a`.
    pub fn residual(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let ba = self.b.matvec(a);
        let hb = self.h.matvec(b);
        let conv = self.convective(a);
        let mut r: Vec<f64> = (2..n).map(|i| self.nu * ba[i] - conv[i] - hb[i]).collect();
        r.extend(self.p.matvec(a));
        r
    }

    /// Absolute residual tolerance `1e-9 max(1, |nu B a|)` over free rows.
    pub fn tolerance(&self, a: &[f64]) -> f64 {
        let ba = self.b.matvec(a);
        let free: Vec<f64> = ba[2..].iter().map(|v| self.nu * v).collect();
        NEWTON_TOL * norm2(&free).max(1.0)
    }

    /// Newton Jacobian with pressure unknowns and continuity rows scaled by
    /// `sigma` (block equilibration of the saddle-point system).
    fn jacobian(&self, a: &[f64], sigma: f64) -> DenseMatrix {
        let n = self.n();
        let nf = n - 2;
        let m = nf + self.n_p;
        let mut jac = vec![0.0; m * m];
        for (r, i) in (2..n).enumerate() {
            for (cidx, j) in (2..n).enumerate() {
                let mut s = self.nu * self.b[(i, j)];
                for k in 0..n {
                    s -= (self.c(i, j, k) + self.c(i, k, j)) * a[k];
                }
                jac[r * m + cidx] = s;
            }
            for l in 0..self.n_p {
                jac[r * m + nf + l] = -sigma * self.h[(i, l)];
            }
        }
        for l in 0..self.n_p {
            for (cidx, j) in (2..n).enumerate() {
                jac[(nf + l) * m + cidx] = sigma * self.p[(l, j)];
            }
        }
        DenseMatrix::new(m, m, jac).expect("finite Jacobian")
    }

    fn saddle_scale(&self) -> f64 {
        let n = self.n();
        let block = |m: &DenseMatrix, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
            rows.flat_map(|i| cols.clone().map(move |j| m[(i, j)].powi(2))).sum::<f64>().sqrt()
        };
        let vb = self.nu * block(&self.b, 2..n, 2..n);
        let ph = block(&self.h, 2..n, 0..self.n_p) * block(&self.p, 0..self.n_p, 2..n);
        if vb > 0.0 && ph > 0.0 {
            vb / ph.sqrt()
        } else {
            1.0
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("reduced-operators v1\n");
        let _ = writeln!(s, "n {} n_p {}", self.n(), self.n_p);
        let _ = writeln!(s, "n_u {} n_sup {}", self.n_u, self.n_sup);
        let _ = writeln!(s, "nu {:.16e}", self.nu);
        let mut block = |name: &str, rows: usize, cols: usize, v: &[f64]| {
            let _ = writeln!(s, "{name} {rows} {cols}");
            for r in 0..rows {
                let _ = writeln!(s, "{}", join(&v[r * cols..(r + 1) * cols]));
            }
        };
        let n = self.n();
        block("B", n, n, self.b.as_slice());
        block("C", n * n, n, &self.c);
        block("H", n, self.n_p, self.h.as_slice());
        block("P", self.n_p, n, self.p.as_slice());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| RomError::Parse(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("reduced-operators v1") {
            return Err(bad("missing operator header"));
        }
        let mut kv = |keys: &[&str]| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let p: Vec<&str> = line.split_whitespace().collect();
            if p.len() != 2 * keys.len() || keys.iter().enumerate().any(|(i, k)| p[2 * i] != *k) {
                return Err(bad(&format!("expected keys {keys:?}, found {line:?}")));
            }
            Ok(p.iter().skip(1).step_by(2).map(|s| s.to_string()).collect())
        };
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let h1 = kv(&["n", "n_p"])?;
        let h2 = kv(&["n_u", "n_sup"])?;
        let nu = parse_f64(&kv(&["nu"])?[0])?;
        let (n, n_p, n_u, n_sup) = (int(&h1[0])?, int(&h1[1])?, int(&h2[0])?, int(&h2[1])?);
        if n != 2 + n_u + n_sup {
            return Err(bad("inconsistent basis sizes"));
        }
        let mut block = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let header = lines.next().ok_or_else(|| bad(&format!("missing block {name}")))?;
            if header.split_whitespace().collect::<Vec<_>>() != [name, &rows.to_string(), &cols.to_string()] {
                return Err(bad(&format!("bad {name} block header {header:?}")));
            }
            let mut v = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines.next().ok_or_else(|| bad(&format!("truncated {name} block")))?;
                let row = line.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?;
                if row.len() != cols {
                    return Err(bad(&format!("wrong row width in {name}")));
                }
                v.extend(row);
            }
            Ok(v)
        };
        let b = DenseMatrix::new(n, n, block("B", n, n)?)?;
        let c = block("C", n * n, n)?;
        let h = DenseMatrix::new(n, n_p, block("H", n, n_p)?)?;
        let p = DenseMatrix::new(n_p, n, block("P", n_p, n)?)?;
        Ok(Self { n_u, n_sup, n_p, nu, b, c, h, p })
    }
}

/// Galerkin projection of the discrete operators. Convection is upwinded
/// with the fixed `reference_flux` so that it stays a trilinear form.
pub fn assemble_operators(
    mesh: &StructuredMesh,
    basis: &ReducedBasis,
    nu: f64,
    reference_flux: &[f64],
) -> Result<ReducedOperators> {
    if reference_flux.len() != mesh.faces().len() {
        return Err(RomError::InvalidInput("reference flux length differs from face count".into()));
    }
    if !(nu > 0.0) {
        return Err(RomError::InvalidInput(format!("viscosity must be positive, got {nu}")));
    }
    let phi = basis.extended();
    let chi = &basis.pressure.modes;
    let n = phi.len();
    let n_p = chi.len();
    for f in &phi {
        if f.mesh_id() != mesh.id() || f.arity() != Arity::Vector || f.flux().is_none() {
            return Err(RomError::InvalidInput("velocity modes must be vector fields with fluxes on this mesh".into()));
        }
    }
    for f in chi {
        if f.mesh_id() != mesh.id() || f.arity() != Arity::Scalar {
            return Err(RomError::InvalidInput("pressure modes must be scalar fields on this mesh".into()));
        }
    }
    let weighted = |i: usize, values: &[f64]| -> f64 {
        let m = &phi[i];
        mesh.cells()
            .iter()
            .enumerate()
            .map(|(k, c)| c.volume * (m.value(k, 0) * values[2 * k] + m.value(k, 1) * values[2 * k + 1]))
            .sum()
    };
    let laps: Vec<Vec<f64>> = phi.iter().map(|f| operators::laplacian(mesh, f)).collect();
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = weighted(i, &laps[j]);
        }
    }
    let c_slabs: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let flux = phi[j].flux().unwrap();
            let mut slab = vec![0.0; n * n];
            for k in 0..n {
                let conv = operators::convection(mesh, flux, &phi[k], Upwind::Reference(reference_flux));
                for i in 0..n {
                    slab[i * n + k] = weighted(i, &conv);
                }
            }
            slab
        })
        .collect();
    let mut c = vec![0.0; n * n * n];
    for (j, slab) in c_slabs.iter().enumerate() {
        for i in 0..n {
            for k in 0..n {
                c[(i * n + j) * n + k] = slab[i * n + k];
            }
        }
    }
    let mut h = vec![0.0; n * n_p];
    for (l, x) in chi.iter().enumerate() {
        let g = operators::gradient(mesh, x);
        for i in 0..n {
            h[i * n_p + l] = weighted(i, &g);
        }
    }
    let mut p = vec![0.0; n_p * n];
    for (j, f) in phi.iter().enumerate() {
        let div = operators::divergence(mesh, f.flux().unwrap());
        for (l, x) in chi.iter().enumerate() {
            p[l * n + j] = mesh.cells().iter().enumerate().map(|(k, c)| c.volume * x.value(k, 0) * div[k]).sum();
        }
    }
    Ok(ReducedOperators {
        n_u: basis.n_u(),
        n_sup: basis.n_sup(),
        n_p,
        nu,
        b: DenseMatrix::new(n, n, b)?,
        c,
        h: DenseMatrix::new(n, n_p, h)?,
        p: DenseMatrix::new(n_p, n, p)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Newton solve of the reduced system with `a[0], a[1]` pinned to the
/// inflow components. `init` supplies starting coefficients; its pinned
/// entries are overwritten.
pub fn solve_reduced(ops: &ReducedOperators, mu: &ParameterPoint, init: Option<(&[f64], &[f64])>) -> Result<ReducedState> {
    let n = ops.n();
    if ops.n_p > ops.n_sup {
        return Err(RomError::InvalidInput(format!(
            "{} pressure modes need at least as many supremizers, got {}",
            ops.n_p, ops.n_sup
        )));
    }
    let (mut a, mut b) = match init {
        Some((a, b)) => {
            if a.len() != n || b.len() != ops.n_p {
                return Err(RomError::InvalidInput("initial state has the wrong dimensions".into()));
            }
            (a.to_vec(), b.to_vec())
        }
        None => (vec![0.0; n], vec![0.0; ops.n_p]),
    };
    let [mx, my] = mu.mu();
    a[0] = mx;
    a[1] = my;
    let mut r = ops.residual(&a, &b);
    let mut rn = norm2(&r);
    let mut history = vec![rn];
    let nf = n - 2;
    let sigma = ops.saddle_scale();
    for iteration in 1..=NEWTON_MAX_ITER {
        if rn <= ops.tolerance(&a) {
            return Ok(ReducedState { a, b, iterations: iteration - 1, residual: rn, converged: true, history });
        }
        let jac = ops.jacobian(&a, sigma);
        let lu = LuFactorization::new(&jac).map_err(|source| RomError::SingularJacobian { iteration, source })?;
        let rhs: Vec<f64> = r.iter().enumerate().map(|(k, v)| if k < nf { -v } else { -sigma * v }).collect();
        let mut dx = lu.solve(&rhs).map_err(|source| RomError::SingularJacobian { iteration, source })?;
        for v in &mut dx[nf..] {
            *v *= sigma;
        }
        let mut step = 1.0;
        loop {
            let mut at = a.clone();
            let mut bt = b.clone();
            for k in 0..nf {
                at[k + 2] += step * dx[k];
            }
            for l in 0..ops.n_p {
                bt[l] += step * dx[nf + l];
            }
            let rt = ops.residual(&at, &bt);
            let rtn = norm2(&rt);
            if rtn < rn || step < 1.0 / 1024.0 {
                a = at;
                b = bt;
                r = rt;
                rn = rtn;
                break;
            }
            step *= 0.5;
        }
        history.push(rn);
        debug!("reduced Newton it {iteration}: |R| = {rn:.3e} (step {step})");
        if !rn.is_finite() {
            break;
        }
    }
    let converged = rn <= ops.tolerance(&a);
    let iterations = history.len() - 1;
    Ok(ReducedState { a, b, iterations, residual: rn, converged, history })
}

/// Velocity `sum_i a_i phi_i` (lifting included) and pressure
/// `sum_l b_l chi_l`.
pub fn reconstruct(basis: &ReducedBasis, state: &ReducedState) -> Result<(CellField, CellField)> {
    let phi = basis.extended();
    if state.a.len() != phi.len() || state.b.len() != basis.n_p() || basis.n_p() == 0 {
        return Err(RomError::InvalidInput(format!(
            "state has {} velocity and {} pressure coefficients, basis has {} and {}",
            state.a.len(),
            state.b.len(),
            phi.len(),
            basis.n_p()
        )));
    }
    let u = combination(&phi, &state.a)?;
    let p = combination(&basis.pressure.modes, &state.b)?;
    Ok((u, p))
}

pub fn rom_lift(
    mesh: &StructuredMesh,
    velocity: &CellField,
    pressure: &CellField,
    mu: &ParameterPoint,
    nu: f64,
    chord: f64,
) -> Result<f64> {
    Ok(compute_lift(mesh, velocity, pressure, mu, nu, chord)?)
}

/// Relative reduced momentum residual of given coefficients,
/// `|R_momentum| / max(|nu B a|, |a C a|, |H b|)`.
pub fn relative_momentum_residual(ops: &ReducedOperators, a: &[f64], b: &[f64]) -> f64 {
    let n = ops.n();
    let r = ops.residual(a, b);
    let ba: Vec<f64> = ops.b.matvec(a)[2..].iter().map(|v| ops.nu * v).collect();
    let conv = ops.convective(a)[2..].to_vec();
    let hb = ops.h.matvec(b)[2..].to_vec();
    let scale = norm2(&ba).max(norm2(&conv)).max(norm2(&hb)).max(f64::MIN_POSITIVE);
    norm2(&r[..n - 2]) / scale
}

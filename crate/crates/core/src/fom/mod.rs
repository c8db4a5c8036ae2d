//! Full-order model: steady incompressible Navier-Stokes on the channel
//! mesh (SIMPLE, colocated with Rhie-Chow face fluxes), potential-flow
//! lifting functions and lift-coefficient extraction.
//!
//! Pressure is kinematic (divided by density) throughout.

pub mod banded;
pub mod operators;
mod simple;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{Bc, CellField, MeshError, StructuredMesh, Arity, INLET, OBSTACLE, OUTLET, WALLS};

pub use simple::solve_steady_ns;

#[derive(Debug, Error)]
pub enum FomError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("SIMPLE diverged at iteration {iteration} (last residuals {last:?})")]
    Diverged {
        iteration: usize,
        last: Residuals,
        trace: Vec<Residuals>,
    },
    #[error("{system} system broke down at row {row} (pivot {pivot:e})")]
    LinearSolve {
        system: &'static str,
        row: usize,
        pivot: f64,
    },
    #[error("mesh has no obstacle faces to integrate forces over")]
    EmptyObstacle,
}

pub type Result<T> = std::result::Result<T, FomError>;

/// Inflow parameters: angle of attack in degrees and speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub alpha_deg: f64,
    pub speed: f64,
}

impl ParameterPoint {
    pub fn new(alpha_deg: f64, speed: f64) -> Result<Self> {
        if !(speed > 0.0) || !speed.is_finite() || !alpha_deg.is_finite() {
            return Err(FomError::InvalidInput(format!(
                "inflow speed must be positive and finite, got U={speed}, alpha={alpha_deg}"
            )));
        }
        Ok(Self { alpha_deg, speed })
    }

    pub fn mu_x(&self) -> f64 {
        self.speed * self.alpha_deg.to_radians().cos()
    }

    pub fn mu_y(&self) -> f64 {
        self.speed * self.alpha_deg.to_radians().sin()
    }

    pub fn mu(&self) -> [f64; 2] {
        [self.mu_x(), self.mu_y()]
    }

    pub fn mirrored(&self) -> Self {
        Self { alpha_deg: -self.alpha_deg, speed: self.speed }
    }
}

/// Normalized momentum and continuity residuals of one SIMPLE iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub momentum: f64,
    pub continuity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.momentum.max(self.continuity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub relax_velocity: f64,
    pub relax_pressure: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub divergence_limit: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            relax_velocity: 0.7,
            relax_pressure: 0.3,
            tolerance: 1e-6,
            max_iterations: 5000,
            divergence_limit: 1e6,
        }
    }
}

/// Converged (or flagged non-converged) steady solution. The velocity field
/// carries the conservative face fluxes produced by the last pressure
/// correction.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub velocity: CellField,
    pub pressure: CellField,
    pub nu: f64,
    pub mu: ParameterPoint,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<Residuals>,
}

impl FlowState {
    pub fn final_residuals(&self) -> Residuals {
        self.history.last().copied().unwrap_or(Residuals { momentum: f64::NAN, continuity: f64::NAN })
    }

    pub fn flux(&self) -> &[f64] {
        self.velocity.flux().expect("flow state velocity carries fluxes")
    }
}

/// Velocity boundary table: inlet value, zero-gradient outlet, no-slip
/// walls and obstacle.
pub fn velocity_bcs(inlet: [f64; 2]) -> Vec<Bc> {
    let mut bcs = vec![Bc::FixedValue([0.0; 2]); 4];
    bcs[INLET] = Bc::FixedValue(inlet);
    bcs[OUTLET] = Bc::ZeroGradient;
    bcs
}

/// Pressure boundary table: zero at the outlet, zero normal gradient
/// elsewhere.
pub fn pressure_bcs() -> Vec<Bc> {
    let mut bcs = vec![Bc::ZeroGradient; 4];
    bcs[OUTLET] = Bc::FixedValue([0.0; 2]);
    bcs
}

pub(crate) fn check_patches(mesh: &StructuredMesh) {
    debug_assert_eq!(mesh.patches().len(), 4);
    debug_assert_eq!(mesh.patch(WALLS).name, "walls");
}

/// Assembles the SPD matrix `sum_f c_f (x_P - x_N)` with
/// `c_f = A_f w_f / delta_f` on interior faces and a Dirichlet (zero)
/// condition on outlet faces. `weight` gives a per-cell factor averaged onto
/// faces (1 for a plain Laplacian).
pub(crate) fn outlet_dirichlet_laplacian(
    mesh: &StructuredMesh,
    weight: &dyn Fn(usize) -> f64,
) -> (banded::BandedMatrix, Vec<f64>) {
    let n = mesh.n_cells();
    let mut m = banded::BandedMatrix::new(n, mesh.bandwidth());
    let mut coef = vec![0.0; mesh.faces().len()];
    for (fid, face) in mesh.faces().iter().enumerate() {
        let o = face.owner;
        match face.neighbour {
            Some(nb) => {
                let c = face.area * 0.5 * (weight(o) + weight(nb)) / face.distance;
                m.add(o, o, c);
                m.add(nb, nb, c);
                m.add(o, nb, -c);
                m.add(nb, o, -c);
                coef[fid] = c;
            }
            None if face.patch == Some(OUTLET) => {
                let c = face.area * weight(o) / face.distance;
                m.add(o, o, c);
                coef[fid] = c;
            }
            None => {}
        }
    }
    (m, coef)
}

/// Potential-flow lifting function with unit inlet value `direction`.
///
/// Solves a Laplace problem for a potential with the prescribed inlet
/// influx, no flux through walls and obstacle and zero potential at the
/// outlet; face fluxes are the discrete potential gradient (hence exactly
/// conservative) and cell velocities are reconstructed from them.
pub fn solve_potential_lifting(mesh: &StructuredMesh, direction: [f64; 2]) -> Result<CellField> {
    if direction != [1.0, 0.0] && direction != [0.0, 1.0] {
        return Err(FomError::InvalidInput(format!(
            "lifting direction must be (1,0) or (0,1), got {direction:?}"
        )));
    }
    check_patches(mesh);
    let n = mesh.n_cells();
    let mut fixed = vec![0.0; mesh.faces().len()];
    let mut rhs = vec![0.0; n];
    for &fid in &mesh.patch(INLET).faces {
        let face = &mesh.faces()[fid];
        let f = face.area * (direction[0] * face.normal[0] + direction[1] * face.normal[1]);
        fixed[fid] = f;
        rhs[face.owner] -= f;
    }
    let (m, coef) = outlet_dirichlet_laplacian(mesh, &|_| 1.0);
    let lu = m.factor().map_err(|b| FomError::LinearSolve { system: "potential", row: b.row, pivot: b.pivot })?;
    let mut phi = rhs;
    lu.solve(&mut phi);

    let flux: Vec<f64> = mesh
        .faces()
        .iter()
        .enumerate()
        .map(|(fid, face)| match face.neighbour {
            Some(nb) => coef[fid] * (phi[face.owner] - phi[nb]),
            None if face.patch == Some(OUTLET) => coef[fid] * phi[face.owner],
            None => fixed[fid],
        })
        .collect();
    let values = operators::velocity_from_flux(mesh, &flux);
    let field = CellField::new(mesh, Arity::Vector, values, velocity_bcs(direction))?;
    Ok(field.with_flux(mesh, flux)?)
}

/// Force per unit depth exerted by the fluid on the obstacle: pressure plus
/// wall shear, density-normalized.
pub fn obstacle_force(mesh: &StructuredMesh, velocity: &CellField, pressure: &CellField, nu: f64) -> Result<[f64; 2]> {
    let faces = &mesh.patch(OBSTACLE).faces;
    if faces.is_empty() {
        return Err(FomError::EmptyObstacle);
    }
    if velocity.arity() != Arity::Vector || pressure.arity() != Arity::Scalar {
        return Err(FomError::InvalidInput("expected vector velocity and scalar pressure".into()));
    }
    let mut force = [0.0; 2];
    for &fid in faces {
        let face = &mesh.faces()[fid];
        let n = face.normal;
        let p = pressure.boundary_value(mesh, fid, 0);
        let u = velocity.vector(face.owner);
        let uw = [velocity.boundary_value(mesh, fid, 0), velocity.boundary_value(mesh, fid, 1)];
        let rel = [u[0] - uw[0], u[1] - uw[1]];
        let un = rel[0] * n[0] + rel[1] * n[1];
        let tangential = [rel[0] - un * n[0], rel[1] - un * n[1]];
        for d in 0..2 {
            force[d] += p * n[d] * face.area + nu * face.area * tangential[d] / face.distance;
        }
    }
    Ok(force)
}

/// Lift coefficient `2 F_perp / (U^2 chord)`, with `F_perp` the force
/// component normal to the inflow direction.
pub fn compute_lift(
    mesh: &StructuredMesh,
    velocity: &CellField,
    pressure: &CellField,
    mu: &ParameterPoint,
    nu: f64,
    chord: f64,
) -> Result<f64> {
    if !(chord > 0.0) {
        return Err(FomError::InvalidInput(format!("chord must be positive, got {chord}")));
    }
    let force = obstacle_force(mesh, velocity, pressure, nu)?;
    let a = mu.alpha_deg.to_radians();
    let perp = -a.sin() * force[0] + a.cos() * force[1];
    Ok(2.0 * perp / (mu.speed * mu.speed * chord))
}

impl FlowState {
    pub fn lift(&self, mesh: &StructuredMesh, chord: f64) -> Result<f64> {
        compute_lift(mesh, &self.velocity, &self.pressure, &self.mu, self.nu, chord)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{MeshSpec, Rect};

    fn channel(obstacle: bool) -> StructuredMesh {
        StructuredMesh::build(&MeshSpec {
            length: 3.0,
            height: 1.0,
            nx: 30,
            ny: 10,
            obstacle: obstacle.then_some(Rect { x_min: 0.9, x_max: 1.1, y_min: 0.4, y_max: 0.6 }),
        })
        .unwrap()
    }

    #[test]
    fn parameter_point_components() {
        let p = ParameterPoint::new(30.0, 2.0).unwrap();
        assert!((p.mu_x() - 3f64.sqrt()).abs() < 1e-14);
        assert!((p.mu_y() - 1.0).abs() < 1e-14);
        assert!(ParameterPoint::new(0.0, 0.0).is_err());
    }

    #[test]
    fn empty_channel_lifting_is_uniform() {
        let m = channel(false);
        let phi = solve_potential_lifting(&m, [1.0, 0.0]).unwrap();
        for k in 0..m.n_cells() {
            let u = phi.vector(k);
            assert!((u[0] - 1.0).abs() < 1e-10 && u[1].abs() < 1e-10, "cell {k}: {u:?}");
        }
    }

    #[test]
    fn lifting_is_divergence_free_and_balances_mass() {
        let m = channel(true);
        for dir in [[1.0, 0.0], [0.0, 1.0]] {
            let phi = solve_potential_lifting(&m, dir).unwrap();
            let net = operators::net_flux(&m, phi.flux().unwrap());
            assert!(net.iter().all(|v| v.abs() <= 1e-8));
            assert_eq!(phi.bcs()[INLET], Bc::FixedValue(dir));
        }
        let phi = solve_potential_lifting(&m, [1.0, 0.0]).unwrap();
        let flux = phi.flux().unwrap();
        let inflow: f64 = m.patch(INLET).faces.iter().map(|&f| flux[f]).sum();
        let outflow: f64 = m.patch(OUTLET).faces.iter().map(|&f| flux[f]).sum();
        assert!((inflow + outflow).abs() < 1e-10, "{inflow} vs {outflow}");
    }

    #[test]
    fn lifting_rejects_other_directions() {
        assert!(solve_potential_lifting(&channel(false), [1.0, 1.0]).is_err());
    }

    #[test]
    fn lift_of_uniform_pressure_and_rest_is_zero() {
        let m = channel(true);
        let u = CellField::zeros(&m, Arity::Vector, velocity_bcs([0.0, 0.0])).unwrap();
        let p = CellField::uniform(&m, &[5.0], pressure_bcs()).unwrap();
        let cl = compute_lift(&m, &u, &p, &ParameterPoint::new(7.0, 1.0).unwrap(), 0.01, 0.2).unwrap();
        assert!(cl.abs() < 1e-12);
    }

    #[test]
    fn lift_scales_with_inverse_speed_squared() {
        let m = channel(true);
        let values: Vec<f64> = m.cells().iter().map(|c| c.center[1] * 3.0 + c.center[0]).collect();
        let p = CellField::new(&m, Arity::Scalar, values, pressure_bcs()).unwrap();
        let uv: Vec<f64> = m.cells().iter().flat_map(|c| [c.center[1], 0.1 * c.center[0]]).collect();
        let u = CellField::new(&m, Arity::Vector, uv, velocity_bcs([1.0, 0.0])).unwrap();
        let c1 = compute_lift(&m, &u, &p, &ParameterPoint::new(3.0, 1.0).unwrap(), 0.01, 0.2).unwrap();
        let c2 = compute_lift(&m, &u, &p, &ParameterPoint::new(3.0, 2.0).unwrap(), 0.01, 0.2).unwrap();
        assert!(c1.abs() > 1e-6);
        assert!((c2 - c1 / 4.0).abs() < 1e-14);
    }

    #[test]
    fn lift_requires_obstacle() {
        let m = channel(false);
        let u = CellField::zeros(&m, Arity::Vector, velocity_bcs([1.0, 0.0])).unwrap();
        let p = CellField::zeros(&m, Arity::Scalar, pressure_bcs()).unwrap();
        let mu = ParameterPoint::new(0.0, 1.0).unwrap();
        assert!(matches!(compute_lift(&m, &u, &p, &mu, 0.01, 1.0), Err(FomError::EmptyObstacle)));
    }
}

//! SIMPLE pressure-velocity coupling on the colocated grid.

use log::debug;

use super::banded::BandedMatrix;
use super::operators::{self, Upwind};
use super::{
    outlet_dirichlet_laplacian, pressure_bcs, solve_potential_lifting, velocity_bcs, FlowState, FomError,
    ParameterPoint, Residuals, Result, SolverSettings,
};
use crate::linalg::norm2;
use crate::mesh::{Arity, CellField, StructuredMesh, INLET, OUTLET};

fn validate(nu: f64, settings: &SolverSettings) -> Result<()> {
    let bad = |what: &str, v: f64| Err(FomError::InvalidInput(format!("{what} out of range: {v}")));
    if !(nu > 0.0) || !nu.is_finite() {
        return bad("viscosity", nu);
    }
    if !(settings.relax_velocity > 0.0 && settings.relax_velocity <= 1.0) {
        return bad("velocity relaxation", settings.relax_velocity);
    }
    if !(settings.relax_pressure > 0.0 && settings.relax_pressure <= 1.0) {
        return bad("pressure relaxation", settings.relax_pressure);
    }
    if !(settings.tolerance > 0.0) {
        return bad("tolerance", settings.tolerance);
    }
    if settings.max_iterations == 0 {
        return Err(FomError::InvalidInput("max_iterations must be at least 1".into()));
    }
    Ok(())
}

/// Normalized residual of the discrete steady momentum equation
/// `conv(F, u) - nu lap(u) + grad(p) = 0`.
pub(crate) fn momentum_residual(mesh: &StructuredMesh, u: &CellField, p: &CellField, flux: &[f64], nu: f64) -> f64 {
    let conv = operators::convection(mesh, flux, u, Upwind::Own);
    let lap = operators::laplacian(mesh, u);
    let grad = operators::gradient(mesh, p);
    let r: Vec<f64> = (0..conv.len()).map(|k| conv[k] - nu * lap[k] + grad[k]).collect();
    let scale = norm2(&conv) + nu * norm2(&lap) + norm2(&grad);
    if scale > 0.0 {
        norm2(&r) / scale
    } else {
        norm2(&r)
    }
}

/// Solves the steady incompressible Navier-Stokes equations for inflow `mu`
/// and kinematic viscosity `nu`.
///
/// Starts from the scaled potential-flow field. Returns a flow state with
/// `converged == false` when the iteration cap is reached and
/// [`FomError::Diverged`] when residuals blow up.
pub fn solve_steady_ns(
    mesh: &StructuredMesh,
    mu: &ParameterPoint,
    nu: f64,
    settings: &SolverSettings,
) -> Result<FlowState> {
    validate(nu, settings)?;
    let n = mesh.n_cells();
    let faces = mesh.faces();
    let inlet = mu.mu();

    let phi = solve_potential_lifting(mesh, [1.0, 0.0])?;
    let mut flux: Vec<f64> = phi.flux().unwrap().iter().map(|f| f * inlet[0]).collect();
    for &fid in &mesh.patch(INLET).faces {
        let face = &faces[fid];
        flux[fid] = face.area * (inlet[0] * face.normal[0] + inlet[1] * face.normal[1]);
    }
    let mut u = CellField::new(mesh, Arity::Vector, phi.values().iter().map(|v| v * inlet[0]).collect(), velocity_bcs(inlet))?;
    let mut p = CellField::zeros(mesh, Arity::Scalar, pressure_bcs())?;
    let q_in: f64 = mesh.patch(INLET).faces.iter().map(|&f| -flux[f]).sum::<f64>().abs().max(f64::MIN_POSITIVE);

    let (au, ap) = (settings.relax_velocity, settings.relax_pressure);
    let mut history: Vec<Residuals> = Vec::new();
    let mut d = vec![0.0; n];

    for iteration in 1..=settings.max_iterations {
        // Momentum predictor; both components share the matrix.
        let mut m = BandedMatrix::new(n, mesh.bandwidth());
        let mut rhs = vec![0.0; 2 * n];
        let grad_p = operators::gradient(mesh, &p);
        let mut diag = vec![0.0; n];
        for (fid, face) in faces.iter().enumerate() {
            let f = flux[fid];
            let o = face.owner;
            match face.neighbour {
                Some(nb) => {
                    let dc = nu * face.area / face.distance;
                    diag[o] += dc + f.max(0.0);
                    diag[nb] += dc + (-f).max(0.0);
                    m.add(o, nb, -dc + f.min(0.0));
                    m.add(nb, o, -dc - f.max(0.0));
                }
                None => {
                    let dc = nu * face.area / face.distance;
                    let bc = u.bcs()[face.patch.expect("boundary face has a patch")];
                    let (slope, _) = bc.face_coefficients(0, face.distance);
                    diag[o] += dc * (1.0 - slope) + f.max(0.0) * slope;
                    for c in 0..2 {
                        let (_, offset) = bc.face_coefficients(c, face.distance);
                        // outlet backflow is treated explicitly
                        rhs[2 * o + c] += dc * offset - f * offset - f.min(0.0) * slope * u.value(o, c);
                    }
                }
            }
        }
        for k in 0..n {
            let a = diag[k] / au;
            m.add(k, k, a);
            d[k] = mesh.cells()[k].volume / a;
            for c in 0..2 {
                rhs[2 * k + c] += (1.0 - au) * a * u.value(k, c) - mesh.cells()[k].volume * grad_p[2 * k + c];
            }
        }
        let lu = m
            .factor()
            .map_err(|b| FomError::LinearSolve { system: "momentum", row: b.row, pivot: b.pivot })?;
        let mut ustar = vec![0.0; 2 * n];
        for c in 0..2 {
            let mut b: Vec<f64> = (0..n).map(|k| rhs[2 * k + c]).collect();
            lu.solve(&mut b);
            for k in 0..n {
                ustar[2 * k + c] = b[k];
            }
        }

        // Rhie-Chow face fluxes of the predicted velocity.
        let mut fstar = vec![0.0; faces.len()];
        for (fid, face) in faces.iter().enumerate() {
            let o = face.owner;
            let nrm = face.normal;
            fstar[fid] = match face.neighbour {
                Some(nb) => {
                    let un = 0.5 * ((ustar[2 * o] + ustar[2 * nb]) * nrm[0] + (ustar[2 * o + 1] + ustar[2 * nb + 1]) * nrm[1]);
                    let gn = 0.5 * ((grad_p[2 * o] + grad_p[2 * nb]) * nrm[0] + (grad_p[2 * o + 1] + grad_p[2 * nb + 1]) * nrm[1]);
                    let dbar = 0.5 * (d[o] + d[nb]);
                    face.area * (un - dbar * ((p.value(nb, 0) - p.value(o, 0)) / face.distance - gn))
                }
                None if face.patch == Some(OUTLET) => {
                    let un = ustar[2 * o] * nrm[0] + ustar[2 * o + 1] * nrm[1];
                    let gn = grad_p[2 * o] * nrm[0] + grad_p[2 * o + 1] * nrm[1];
                    face.area * (un - d[o] * ((0.0 - p.value(o, 0)) / face.distance - gn))
                }
                None => flux[fid],
            };
        }
        let imbalance = operators::net_flux(mesh, &fstar);
        let continuity = norm2(&imbalance) / q_in;

        // Pressure correction.
        let (pm, coef) = outlet_dirichlet_laplacian(mesh, &|k| d[k]);
        let plu = pm
            .factor()
            .map_err(|b| FomError::LinearSolve { system: "pressure correction", row: b.row, pivot: b.pivot })?;
        let mut pc: Vec<f64> = imbalance.iter().map(|v| -v).collect();
        plu.solve(&mut pc);
        for (fid, face) in faces.iter().enumerate() {
            flux[fid] = fstar[fid]
                + match face.neighbour {
                    Some(nb) => coef[fid] * (pc[face.owner] - pc[nb]),
                    None if face.patch == Some(OUTLET) => coef[fid] * pc[face.owner],
                    None => 0.0,
                };
        }
        let pc_field = CellField::new(mesh, Arity::Scalar, pc, pressure_bcs())?;
        let grad_pc = operators::gradient(mesh, &pc_field);
        {
            let uv = u.values_mut();
            for k in 0..n {
                for c in 0..2 {
                    uv[2 * k + c] = ustar[2 * k + c] - d[k] * grad_pc[2 * k + c];
                }
            }
        }
        p.axpy(ap, &pc_field)?;

        let momentum = momentum_residual(mesh, &u, &p, &flux, nu);
        let res = Residuals { momentum, continuity };
        history.push(res);
        if !res.max().is_finite() || res.max() > settings.divergence_limit {
            return Err(FomError::Diverged { iteration, last: res, trace: history });
        }
        if iteration % 200 == 0 {
            debug!("SIMPLE it {iteration}: momentum {momentum:.3e} continuity {continuity:.3e}");
        }
        if momentum <= settings.tolerance && continuity <= settings.tolerance {
            let velocity = u.with_flux(mesh, flux)?;
            return Ok(FlowState { velocity, pressure: p, nu, mu: *mu, converged: true, iterations: iteration, history });
        }
    }
    let velocity = u.with_flux(mesh, flux)?;
    Ok(FlowState {
        velocity,
        pressure: p,
        nu,
        mu: *mu,
        converged: false,
        iterations: settings.max_iterations,
        history,
    })
}

//! Discrete finite-volume operators on cell fields.
//!
//! All operators return per-volume cell values (integrated quantity divided
//! by the cell volume), so the mesh inner product of an operator output with
//! a test field is the usual volume-weighted L2 pairing. The full-order
//! solver and the reduced operators use these same discretizations.

use crate::mesh::{Arity, CellField, StructuredMesh};

/// Which face flux decides the upwind side of a face.
#[derive(Debug, Clone, Copy)]
pub enum Upwind<'a> {
    /// The convecting flux itself (plain first-order upwind).
    Own,
    /// A fixed reference flux per face; keeps the operator linear in the
    /// convecting flux.
    Reference(&'a [f64]),
}

/// Central second-order Laplacian of every component.
pub fn laplacian(mesh: &StructuredMesh, field: &CellField) -> Vec<f64> {
    let nc = field.components();
    let mut out = vec![0.0; mesh.n_cells() * nc];
    for (fid, face) in mesh.faces().iter().enumerate() {
        let coef = face.area / face.distance;
        let o = face.owner;
        match face.neighbour {
            Some(nb) => {
                for d in 0..nc {
                    let g = coef * (field.value(nb, d) - field.value(o, d));
                    out[o * nc + d] += g;
                    out[nb * nc + d] -= g;
                }
            }
            None => {
                for d in 0..nc {
                    let ub = field.boundary_value(mesh, fid, d);
                    out[o * nc + d] += coef * (ub - field.value(o, d));
                }
            }
        }
    }
    divide_by_volume(mesh, nc, &mut out);
    out
}

/// Conservative convection `sum_f F_f u_f / V` of `field` by face fluxes
/// `flux` (outward from each owner). Interior face values are upwinded;
/// boundary face values come from the boundary conditions.
pub fn convection(mesh: &StructuredMesh, flux: &[f64], field: &CellField, upwind: Upwind) -> Vec<f64> {
    let nc = field.components();
    let mut out = vec![0.0; mesh.n_cells() * nc];
    for (fid, face) in mesh.faces().iter().enumerate() {
        let f = flux[fid];
        let o = face.owner;
        match face.neighbour {
            Some(nb) => {
                let dir = match upwind {
                    Upwind::Own => f,
                    Upwind::Reference(r) => r[fid],
                };
                let src = if dir >= 0.0 { o } else { nb };
                for d in 0..nc {
                    let t = f * field.value(src, d);
                    out[o * nc + d] += t;
                    out[nb * nc + d] -= t;
                }
            }
            None => {
                if f == 0.0 {
                    continue;
                }
                for d in 0..nc {
                    out[o * nc + d] += f * field.boundary_value(mesh, fid, d);
                }
            }
        }
    }
    divide_by_volume(mesh, nc, &mut out);
    out
}

/// Gauss-linear gradient of a scalar field, two components per cell.
pub fn gradient(mesh: &StructuredMesh, field: &CellField) -> Vec<f64> {
    assert_eq!(field.arity(), Arity::Scalar, "gradient of a vector field");
    let mut out = vec![0.0; mesh.n_cells() * 2];
    for (fid, face) in mesh.faces().iter().enumerate() {
        let o = face.owner;
        let pf = match face.neighbour {
            Some(nb) => 0.5 * (field.value(o, 0) + field.value(nb, 0)),
            None => field.boundary_value(mesh, fid, 0),
        };
        for d in 0..2 {
            let t = pf * face.normal[d] * face.area;
            out[o * 2 + d] += t;
            if let Some(nb) = face.neighbour {
                out[nb * 2 + d] -= t;
            }
        }
    }
    divide_by_volume(mesh, 2, &mut out);
    out
}

/// Net outward flux per unit volume.
pub fn divergence(mesh: &StructuredMesh, flux: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_cells()];
    for (fid, face) in mesh.faces().iter().enumerate() {
        out[face.owner] += flux[fid];
        if let Some(nb) = face.neighbour {
            out[nb] -= flux[fid];
        }
    }
    divide_by_volume(mesh, 1, &mut out);
    out
}

/// Net outward flux per cell, not divided by volume.
pub fn net_flux(mesh: &StructuredMesh, flux: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_cells()];
    for (fid, face) in mesh.faces().iter().enumerate() {
        out[face.owner] += flux[fid];
        if let Some(nb) = face.neighbour {
            out[nb] -= flux[fid];
        }
    }
    out
}

/// Face fluxes from linear interpolation of a vector field, using boundary
/// values on boundary faces.
pub fn interpolated_flux(mesh: &StructuredMesh, field: &CellField) -> Vec<f64> {
    assert_eq!(field.arity(), Arity::Vector, "flux of a scalar field");
    mesh.faces()
        .iter()
        .enumerate()
        .map(|(fid, face)| {
            let uf: [f64; 2] = match face.neighbour {
                Some(nb) => {
                    let (a, b) = (field.vector(face.owner), field.vector(nb));
                    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
                }
                None => [field.boundary_value(mesh, fid, 0), field.boundary_value(mesh, fid, 1)],
            };
            face.area * (uf[0] * face.normal[0] + uf[1] * face.normal[1])
        })
        .collect()
}

/// Cell velocities reconstructed from face fluxes,
/// `u_P = sum_f F_f (x_f - x_P) / V_P`.
pub fn velocity_from_flux(mesh: &StructuredMesh, flux: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_cells() * 2];
    let cells = mesh.cells();
    for (fid, face) in mesh.faces().iter().enumerate() {
        let mut add = |cell: usize, f: f64| {
            let c = cells[cell].center;
            out[cell * 2] += f * (face.center[0] - c[0]);
            out[cell * 2 + 1] += f * (face.center[1] - c[1]);
        };
        add(face.owner, flux[fid]);
        if let Some(nb) = face.neighbour {
            add(nb, -flux[fid]);
        }
    }
    divide_by_volume(mesh, 2, &mut out);
    out
}

fn divide_by_volume(mesh: &StructuredMesh, nc: usize, out: &mut [f64]) {
    for (k, c) in mesh.cells().iter().enumerate() {
        for d in 0..nc {
            out[k * nc + d] /= c.volume;
        }
    }
}

//! Uniform Cartesian finite-volume mesh of a channel with an optional
//! rectangular blocked-cell obstacle, plus cell-centred fields.
//!
//! Fluid cells are numbered column by column (`i` outer, `j` inner) so that
//! every 5-point stencil couples unknowns at most `ny` indices apart.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh specification: {0}")]
    Validation(String),
    #[error("invalid obstacle geometry: {0}")]
    Geometry(String),
    #[error("fields live on different meshes or have different arity")]
    Mismatch,
    #[error("field has {found} values, expected {expected}")]
    ValueCount { expected: usize, found: usize },
    #[error("boundary table has {found} entries for {expected} patches")]
    BoundaryTable { expected: usize, found: usize },
    #[error("incompatible boundary conditions on patch {0}")]
    IncompatibleBoundary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MeshError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    fn contains_strictly(&self, x: f64, y: f64) -> bool {
        x > self.x_min && x < self.x_max && y > self.y_min && y < self.y_max
    }
}

/// Channel `[0, length] x [0, height]`: inlet on the left, outlet on the
/// right, no-slip walls top and bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub length: f64,
    pub height: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<Rect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchRole {
    Inlet,
    Outlet,
    Wall,
    Obstacle,
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub name: &'static str,
    pub role: PatchRole,
    pub faces: Vec<usize>,
}

pub const INLET: usize = 0;
pub const OUTLET: usize = 1;
pub const WALLS: usize = 2;
pub const OBSTACLE: usize = 3;

#[derive(Debug, Clone)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub center: [f64; 2],
    pub volume: f64,
}

/// A face with its unit normal pointing out of `owner`. Interior faces have a
/// `neighbour`; boundary faces carry the patch index instead.
#[derive(Debug, Clone)]
pub struct Face {
    pub owner: usize,
    pub neighbour: Option<usize>,
    pub patch: Option<usize>,
    pub area: f64,
    pub normal: [f64; 2],
    pub center: [f64; 2],
    /// owner-to-neighbour centre distance, or owner-centre-to-face distance on
    /// boundary faces
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct StructuredMesh {
    spec: MeshSpec,
    dx: f64,
    dy: f64,
    cells: Vec<Cell>,
    cell_lookup: Vec<Option<usize>>,
    faces: Vec<Face>,
    cell_faces: Vec<Vec<usize>>,
    patches: Vec<Patch>,
    bandwidth: usize,
    id: u64,
}

static NEXT_MESH_ID: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

impl StructuredMesh {
    pub fn build(spec: &MeshSpec) -> Result<Self> {
        if !(spec.length > 0.0 && spec.height > 0.0)
            || !spec.length.is_finite()
            || !spec.height.is_finite()
        {
            return Err(MeshError::Validation(format!(
                "extents must be positive, got {} x {}",
                spec.length, spec.height
            )));
        }
        if spec.nx < 2 || spec.ny < 2 {
            return Err(MeshError::Validation(format!(
                "need at least 2 cells per axis, got {} x {}",
                spec.nx, spec.ny
            )));
        }
        let (nx, ny) = (spec.nx, spec.ny);
        let dx = spec.length / nx as f64;
        let dy = spec.height / ny as f64;
        let center = |i: usize, j: usize| [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy];

        let mut blocked = vec![false; nx * ny];
        if let Some(r) = &spec.obstacle {
            if !(r.x_min < r.x_max && r.y_min < r.y_max) {
                return Err(MeshError::Geometry(format!("degenerate rectangle {r:?}")));
            }
            if r.x_min <= 0.0 || r.y_min <= 0.0 || r.x_max >= spec.length || r.y_max >= spec.height
            {
                return Err(MeshError::Geometry(format!(
                    "obstacle {r:?} touches or crosses the domain boundary"
                )));
            }
            for i in 0..nx {
                for j in 0..ny {
                    let c = center(i, j);
                    if r.contains_strictly(c[0], c[1]) {
                        if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                            return Err(MeshError::Geometry(
                                "obstacle covers a boundary cell".into(),
                            ));
                        }
                        blocked[i + j * nx] = true;
                    }
                }
            }
            if !blocked.iter().any(|&b| b) {
                return Err(MeshError::Geometry(
                    "obstacle does not cover any cell centre at this resolution".into(),
                ));
            }
        }

        let mut cells = Vec::new();
        let mut cell_lookup = vec![None; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                if !blocked[i + j * nx] {
                    cell_lookup[i + j * nx] = Some(cells.len());
                    cells.push(Cell {
                        i,
                        j,
                        center: center(i, j),
                        volume: dx * dy,
                    });
                }
            }
        }

        let mut faces = Vec::new();
        let mut patches = vec![
            Patch { name: "inlet", role: PatchRole::Inlet, faces: vec![] },
            Patch { name: "outlet", role: PatchRole::Outlet, faces: vec![] },
            Patch { name: "walls", role: PatchRole::Wall, faces: vec![] },
            Patch { name: "obstacle", role: PatchRole::Obstacle, faces: vec![] },
        ];
        let mut cell_faces = vec![Vec::with_capacity(4); cells.len()];

        let mut push_boundary = |faces: &mut Vec<Face>,
                                 cell_faces: &mut Vec<Vec<usize>>,
                                 owner: usize,
                                 patch: usize,
                                 normal: [f64; 2]| {
            let c = cells[owner].center;
            let (area, dist) = if normal[0] != 0.0 { (dy, 0.5 * dx) } else { (dx, 0.5 * dy) };
            let fc = [c[0] + normal[0] * dist, c[1] + normal[1] * dist];
            let id = faces.len();
            faces.push(Face {
                owner,
                neighbour: None,
                patch: Some(patch),
                area,
                normal,
                center: fc,
                distance: dist,
            });
            cell_faces[owner].push(id);
            patches[patch].faces.push(id);
        };

        let mut bandwidth = 0usize;
        for (k, cell) in cells.iter().enumerate() {
            let (i, j) = (cell.i, cell.j);
            // west
            if i == 0 {
                push_boundary(&mut faces, &mut cell_faces, k, INLET, [-1.0, 0.0]);
            } else if cell_lookup[(i - 1) + j * nx].is_none() {
                push_boundary(&mut faces, &mut cell_faces, k, OBSTACLE, [-1.0, 0.0]);
            }
            // east
            if i == nx - 1 {
                push_boundary(&mut faces, &mut cell_faces, k, OUTLET, [1.0, 0.0]);
            } else if let Some(n) = cell_lookup[(i + 1) + j * nx] {
                let id = faces.len();
                faces.push(Face {
                    owner: k,
                    neighbour: Some(n),
                    patch: None,
                    area: dy,
                    normal: [1.0, 0.0],
                    center: [cell.center[0] + 0.5 * dx, cell.center[1]],
                    distance: dx,
                });
                cell_faces[k].push(id);
                cell_faces[n].push(id);
                bandwidth = bandwidth.max(n - k);
            } else {
                push_boundary(&mut faces, &mut cell_faces, k, OBSTACLE, [1.0, 0.0]);
            }
            // south
            if j == 0 {
                push_boundary(&mut faces, &mut cell_faces, k, WALLS, [0.0, -1.0]);
            } else if cell_lookup[i + (j - 1) * nx].is_none() {
                push_boundary(&mut faces, &mut cell_faces, k, OBSTACLE, [0.0, -1.0]);
            }
            // north
            if j == ny - 1 {
                push_boundary(&mut faces, &mut cell_faces, k, WALLS, [0.0, 1.0]);
            } else if let Some(n) = cell_lookup[i + (j + 1) * nx] {
                let id = faces.len();
                faces.push(Face {
                    owner: k,
                    neighbour: Some(n),
                    patch: None,
                    area: dx,
                    normal: [0.0, 1.0],
                    center: [cell.center[0], cell.center[1] + 0.5 * dy],
                    distance: dy,
                });
                cell_faces[k].push(id);
                cell_faces[n].push(id);
                bandwidth = bandwidth.max(n - k);
            } else {
                push_boundary(&mut faces, &mut cell_faces, k, OBSTACLE, [0.0, 1.0]);
            }
        }

        Ok(Self {
            spec: spec.clone(),
            dx,
            dy,
            cells,
            cell_lookup,
            faces,
            cell_faces,
            patches,
            bandwidth: bandwidth.max(1),
            id: NEXT_MESH_ID.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
        })
    }

    pub fn spec(&self) -> &MeshSpec {
        &self.spec
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.dx, self.dy)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn cell_faces(&self, cell: usize) -> &[usize] {
        &self.cell_faces[cell]
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn patch(&self, index: usize) -> &Patch {
        &self.patches[index]
    }

    /// Largest index distance between coupled cells.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Compact fluid-cell index of grid position `(i, j)`, `None` if blocked.
    pub fn cell_at(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.spec.nx || j >= self.spec.ny {
            return None;
        }
        self.cell_lookup[i + j * self.spec.nx]
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// Structural identity: fields are only combinable on the very same
    /// mesh object (or a clone of it).
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Sign of a face normal relative to `cell`: `+1` if the cell owns the
    /// face, `-1` if it is the neighbour.
    pub fn orientation(&self, face: usize, cell: usize) -> f64 {
        if self.faces[face].owner == cell {
            1.0
        } else {
            -1.0
        }
    }

    /// Volume-weighted L2 inner product `sum_cells V (f . g)`.
    pub fn inner_product(&self, f: &CellField, g: &CellField) -> Result<f64> {
        if f.mesh_id != self.id || g.mesh_id != self.id || f.arity != g.arity {
            return Err(MeshError::Mismatch);
        }
        Ok(self.weighted_dot(f.arity.components(), &f.values, &g.values))
    }

    pub(crate) fn weighted_dot(&self, components: usize, f: &[f64], g: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, c) in self.cells.iter().enumerate() {
            let mut local = 0.0;
            for d in 0..components {
                local += f[k * components + d] * g[k * components + d];
            }
            s += c.volume * local;
        }
        s
    }

    pub fn norm(&self, f: &CellField) -> Result<f64> {
        Ok(self.inner_product(f, f)?.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arity {
    Scalar,
    Vector,
}

impl Arity {
    pub fn components(self) -> usize {
        match self {
            Arity::Scalar => 1,
            Arity::Vector => 2,
        }
    }
}

/// Boundary condition on one patch. Scalar fields use component 0 only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bc {
    FixedValue([f64; 2]),
    ZeroGradient,
    FixedGradient([f64; 2]),
}

impl Bc {
    /// Boundary face value as `slope * cell + offset` for component `d` at
    /// distance `dist` from the owner centre.
    pub fn face_coefficients(&self, d: usize, dist: f64) -> (f64, f64) {
        match self {
            Bc::FixedValue(v) => (0.0, v[d]),
            Bc::ZeroGradient => (1.0, 0.0),
            Bc::FixedGradient(g) => (1.0, g[d] * dist),
        }
    }

    fn combine(&self, other: &Bc, a: f64, b: f64) -> Option<Bc> {
        let lin = |x: &[f64; 2], y: &[f64; 2]| [a * x[0] + b * y[0], a * x[1] + b * y[1]];
        match (self, other) {
            (Bc::FixedValue(x), Bc::FixedValue(y)) => Some(Bc::FixedValue(lin(x, y))),
            (Bc::ZeroGradient, Bc::ZeroGradient) => Some(Bc::ZeroGradient),
            (Bc::FixedGradient(x), Bc::FixedGradient(y)) => Some(Bc::FixedGradient(lin(x, y))),
            (Bc::ZeroGradient, Bc::FixedGradient(y)) => Some(Bc::FixedGradient(lin(&[0.0; 2], y))),
            (Bc::FixedGradient(x), Bc::ZeroGradient) => Some(Bc::FixedGradient(lin(x, &[0.0; 2]))),
            _ => None,
        }
    }

    fn scaled(&self, a: f64) -> Bc {
        match self {
            Bc::FixedValue(v) => Bc::FixedValue([a * v[0], a * v[1]]),
            Bc::ZeroGradient => Bc::ZeroGradient,
            Bc::FixedGradient(g) => Bc::FixedGradient([a * g[0], a * g[1]]),
        }
    }
}

/// Cell-centred scalar or 2-vector field with one boundary condition per
/// patch. Velocity-like fields may also carry conservative face fluxes
/// (outward from each face owner), which follow the field through linear
/// combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    mesh_id: u64,
    arity: Arity,
    values: Vec<f64>,
    bcs: Vec<Bc>,
    flux: Option<Vec<f64>>,
}

impl CellField {
    pub fn new(mesh: &StructuredMesh, arity: Arity, values: Vec<f64>, bcs: Vec<Bc>) -> Result<Self> {
        let expected = mesh.n_cells() * arity.components();
        if values.len() != expected {
            return Err(MeshError::ValueCount { expected, found: values.len() });
        }
        if bcs.len() != mesh.patches().len() {
            return Err(MeshError::BoundaryTable {
                expected: mesh.patches().len(),
                found: bcs.len(),
            });
        }
        Ok(Self { mesh_id: mesh.id(), arity, values, bcs, flux: None })
    }

    pub fn zeros(mesh: &StructuredMesh, arity: Arity, bcs: Vec<Bc>) -> Result<Self> {
        Self::new(mesh, arity, vec![0.0; mesh.n_cells() * arity.components()], bcs)
    }

    pub fn uniform(mesh: &StructuredMesh, value: &[f64], bcs: Vec<Bc>) -> Result<Self> {
        let arity = match value.len() {
            1 => Arity::Scalar,
            2 => Arity::Vector,
            n => return Err(MeshError::Validation(format!("unsupported arity {n}"))),
        };
        let values = (0..mesh.n_cells()).flat_map(|_| value.iter().copied()).collect();
        Self::new(mesh, arity, values, bcs)
    }

    pub fn with_flux(mut self, mesh: &StructuredMesh, flux: Vec<f64>) -> Result<Self> {
        if flux.len() != mesh.faces().len() {
            return Err(MeshError::ValueCount { expected: mesh.faces().len(), found: flux.len() });
        }
        self.flux = Some(flux);
        Ok(self)
    }

    pub fn without_flux(mut self) -> Self {
        self.flux = None;
        self
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn arity(&self) -> Arity {
        self.arity
    }

    pub fn components(&self) -> usize {
        self.arity.components()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn bcs(&self) -> &[Bc] {
        &self.bcs
    }

    pub fn set_bc(&mut self, patch: usize, bc: Bc) {
        self.bcs[patch] = bc;
    }

    pub fn flux(&self) -> Option<&[f64]> {
        self.flux.as_deref()
    }

    pub fn value(&self, cell: usize, component: usize) -> f64 {
        self.values[cell * self.components() + component]
    }

    pub fn vector(&self, cell: usize) -> [f64; 2] {
        debug_assert_eq!(self.arity, Arity::Vector);
        [self.values[2 * cell], self.values[2 * cell + 1]]
    }

    /// Value of component `d` on boundary face `face` according to the
    /// patch condition.
    pub fn boundary_value(&self, mesh: &StructuredMesh, face: usize, d: usize) -> f64 {
        let f = &mesh.faces()[face];
        let patch = f.patch.expect("boundary face");
        let (slope, offset) = self.bcs[patch].face_coefficients(d, f.distance);
        slope * self.value(f.owner, d) + offset
    }

    fn check_compatible(&self, other: &CellField) -> Result<()> {
        if self.mesh_id != other.mesh_id || self.arity != other.arity {
            return Err(MeshError::Mismatch);
        }
        Ok(())
    }

    /// `a * self + b * other`, including boundary data and fluxes (fluxes are
    /// kept only when both operands carry them).
    pub fn lin_comb(&self, a: f64, other: &CellField, b: f64) -> Result<CellField> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let bcs = self
            .bcs
            .iter()
            .zip(&other.bcs)
            .enumerate()
            .map(|(p, (x, y))| x.combine(y, a, b).ok_or_else(|| MeshError::IncompatibleBoundary(p.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let flux = match (&self.flux, &other.flux) {
            (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()),
            _ => None,
        };
        Ok(CellField { mesh_id: self.mesh_id, arity: self.arity, values, bcs, flux })
    }

    /// In-place `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &CellField) -> Result<()> {
        *self = self.lin_comb(1.0, other, a)?;
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> CellField {
        CellField {
            mesh_id: self.mesh_id,
            arity: self.arity,
            values: self.values.iter().map(|v| a * v).collect(),
            bcs: self.bcs.iter().map(|b| b.scaled(a)).collect(),
            flux: self.flux.as_ref().map(|f| f.iter().map(|v| a * v).collect()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Writes `cell, x, y, <values...>` rows for plotting.
pub fn write_fields_csv(
    path: &Path,
    mesh: &StructuredMesh,
    columns: &[(&str, &CellField)],
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "cell,x,y")?;
    for (name, field) in columns {
        if field.mesh_id != mesh.id() {
            return Err(MeshError::Mismatch);
        }
        match field.arity {
            Arity::Scalar => write!(out, ",{name}")?,
            Arity::Vector => write!(out, ",{name}_x,{name}_y")?,
        }
    }
    writeln!(out)?;
    for (k, c) in mesh.cells().iter().enumerate() {
        write!(out, "{k},{:.17e},{:.17e}", c.center[0], c.center[1])?;
        for (_, field) in columns {
            for d in 0..field.components() {
                write!(out, ",{:.17e}", field.value(k, d))?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

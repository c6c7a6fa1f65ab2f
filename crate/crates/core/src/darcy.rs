//! Nitsche CutFEM for the scalar Darcy pressure model, reused for the
//! harmonic extension and the supremizer problems.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{classify_with, ActiveMesh, CellKind, InterfaceKind, LevelSetDomain};
use crate::linalg::{sparse_solve, SparseMatrix, SparseSystem};
use crate::mesh::{barycentric, p1_gradients, BackgroundMesh, Point, SideSet};
use crate::quadrature::{face_rule, QuadratureRule};

pub(crate) const QUAD_ORDER: usize = 2;

pub type ScalarFn = Arc<dyn Fn(Point, &[f64]) -> f64 + Send + Sync>;

/// Scalar data evaluated at quadrature points.
#[derive(Clone, Default)]
pub enum ScalarData {
    #[default]
    Zero,
    Constant(f64),
    Function(ScalarFn),
    /// P1 field on the background vertices.
    Nodal(Arc<Vec<f64>>),
    /// One value per background cell.
    PerCell(Arc<Vec<f64>>),
}

impl fmt::Debug for ScalarData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarData::Zero => write!(f, "Zero"),
            ScalarData::Constant(c) => write!(f, "Constant({c})"),
            ScalarData::Function(_) => write!(f, "Function"),
            ScalarData::Nodal(v) => write!(f, "Nodal(len {})", v.len()),
            ScalarData::PerCell(v) => write!(f, "PerCell(len {})", v.len()),
        }
    }
}

impl ScalarData {
    pub fn function(f: impl Fn(Point, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarData::Function(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarData::Zero) || matches!(self, ScalarData::Constant(c) if *c == 0.0)
    }

    pub fn eval(&self, mesh: &BackgroundMesh, cell: usize, p: Point, mu: &[f64]) -> f64 {
        match self {
            ScalarData::Zero => 0.0,
            ScalarData::Constant(c) => *c,
            ScalarData::Function(f) => f(p, mu),
            ScalarData::Nodal(v) => {
                let lam = barycentric(&mesh.triangle(cell), p);
                mesh.cells()[cell].iter().zip(lam).map(|(&k, l)| v[k] * l).sum()
            }
            ScalarData::PerCell(v) => v[cell],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalties {
    pub gamma_d: f64,
    pub gamma_n: f64,
    pub gamma_1: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            gamma_d: 10.0,
            gamma_n: 0.0,
            gamma_1: 0.1,
        }
    }
}

impl Penalties {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d > 0.0) || !(self.gamma_n >= 0.0) || !(self.gamma_1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalties need gamma_d > 0, gamma_n >= 0, gamma_1 >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Strong Dirichlet values on selected sides of the background box.
#[derive(Clone, Debug, Default)]
pub struct StrongBoundary {
    pub sides: SideSet,
    pub value: ScalarData,
}

#[derive(Clone, Debug)]
pub struct DarcyProblem {
    pub domain: LevelSetDomain,
    pub source: ScalarData,
    pub dirichlet: ScalarData,
    pub neumann: ScalarData,
    pub penalties: Penalties,
    pub strong_outer: Option<StrongBoundary>,
}

impl DarcyProblem {
    pub fn new(domain: LevelSetDomain) -> Self {
        Self {
            domain,
            source: ScalarData::Zero,
            dirichlet: ScalarData::Zero,
            neumann: ScalarData::Zero,
            penalties: Penalties::default(),
            strong_outer: None,
        }
    }

    /// Ellipse case: `g = 20`, `g_D = 0.5 + xy` on the whole interface.
    pub fn ellipse(radius: f64, penalties: Penalties) -> Self {
        Self {
            source: ScalarData::Constant(20.0),
            dirichlet: ScalarData::function(|p, _| 0.5 + p[0] * p[1]),
            penalties,
            ..Self::new(crate::geometry::ellipse_levelset(radius))
        }
    }
}

/// Solution values on the active DOFs of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVector {
    pub values: Vec<f64>,
    pub parameter: Vec<f64>,
}

type Triplets = Vec<(usize, usize, f64)>;

/// Matrix triplets of the bulk, Nitsche and Neumann terms of one cell.
fn cell_matrix(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh, cell: usize) -> Result<Triplets> {
    let mu = active.parameter();
    let t = mesh.triangle(cell);
    let g = p1_gradients(&t);
    let dofs = active.cell_dofs(mesh, cell);
    let hk = mesh.cell_h(cell);
    let pen = problem.penalties;
    let mut out = Vec::with_capacity(9);
    let mut local = [[0.0; 3]; 3];

    let bulk_area = match active.kind(cell) {
        CellKind::Inside => mesh.cell_area(cell),
        CellKind::Outside => 0.0,
        CellKind::Cut => {
            let (bulk, iface) = active.cut_rules(mesh, cell, QUAD_ORDER)?;
            for k in 0..iface.len() {
                let p = iface.points[k];
                let w = iface.weights[k];
                let n = iface.normal(k);
                let phi = barycentric(&t, p);
                let dn = [0, 1, 2].map(|i| n[0] * g[i][0] + n[1] * g[i][1]);
                match problem.domain.interface_kind(p, mu) {
                    InterfaceKind::Dirichlet => {
                        for i in 0..3 {
                            for j in 0..3 {
                                local[i][j] += w
                                    * (-dn[j] * phi[i] - phi[j] * dn[i] + pen.gamma_d / hk * phi[i] * phi[j]);
                            }
                        }
                    }
                    InterfaceKind::Neumann => {
                        if pen.gamma_n != 0.0 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    local[i][j] += w * pen.gamma_n * hk * dn[i] * dn[j];
                                }
                            }
                        }
                    }
                }
            }
            bulk.total_weight()
        }
    };
    for i in 0..3 {
        for j in 0..3 {
            let v = local[i][j] + bulk_area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            out.push((dofs[i], dofs[j], v));
        }
    }
    Ok(out)
}

fn cell_load(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh, cell: usize) -> Result<[f64; 3]> {
    let mu = active.parameter();
    let t = mesh.triangle(cell);
    let g = p1_gradients(&t);
    let hk = mesh.cell_h(cell);
    let pen = problem.penalties;
    let mut out = [0.0; 3];
    let (bulk, iface) = match active.kind(cell) {
        CellKind::Inside => (active.bulk_rule(mesh, cell, QUAD_ORDER)?, QuadratureRule::default()),
        CellKind::Outside => return Ok(out),
        CellKind::Cut => active.cut_rules(mesh, cell, QUAD_ORDER)?,
    };
    if !problem.source.is_zero() {
        for k in 0..bulk.len() {
            let p = bulk.points[k];
            let f = bulk.weights[k] * problem.source.eval(mesh, cell, p, mu);
            let phi = barycentric(&t, p);
            for i in 0..3 {
                out[i] += f * phi[i];
            }
        }
    }
    for k in 0..iface.len() {
        let p = iface.points[k];
        let w = iface.weights[k];
        let n = iface.normal(k);
        let phi = barycentric(&t, p);
        let dn = [0, 1, 2].map(|i| n[0] * g[i][0] + n[1] * g[i][1]);
        match problem.domain.interface_kind(p, mu) {
            InterfaceKind::Dirichlet => {
                let gd = problem.dirichlet.eval(mesh, cell, p, mu);
                for i in 0..3 {
                    out[i] += w * gd * (pen.gamma_d / hk * phi[i] - dn[i]);
                }
            }
            InterfaceKind::Neumann => {
                let gn = problem.neumann.eval(mesh, cell, p, mu);
                for i in 0..3 {
                    out[i] += w * gn * (phi[i] + pen.gamma_n * hk * dn[i]);
                }
            }
        }
    }
    Ok(out)
}

/// Face-jump penalty `gamma h ∫_F [n·∇u][n·∇v]` for one interior face,
/// scaled by `h^power` with `h` the larger neighbouring cell diameter.
pub(crate) fn face_jump(mesh: &BackgroundMesh, face: usize, gamma: f64, power: i32) -> Result<Triplets> {
    let f = mesh.faces()[face];
    let (a, b) = (f.cells.0, f.cells.1.expect("interior face"));
    let rule = face_rule(mesh, face, 1)?;
    let n = rule.normal(0);
    let len = rule.total_weight();
    let h = mesh.cell_h(a).max(mesh.cell_h(b));
    let scale = gamma * h.powi(power) * len;

    // Jump coefficients of the union of vertices of both cells.
    let mut verts: Vec<usize> = Vec::with_capacity(4);
    let mut jump: Vec<f64> = Vec::with_capacity(4);
    for (cell, sign) in [(a, 1.0), (b, -1.0)] {
        let g = p1_gradients(&mesh.triangle(cell));
        for (k, &v) in mesh.cells()[cell].iter().enumerate() {
            let d = sign * (n[0] * g[k][0] + n[1] * g[k][1]);
            match verts.iter().position(|&u| u == v) {
                Some(pos) => jump[pos] += d,
                None => {
                    verts.push(v);
                    jump.push(d);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(16);
    for (i, &vi) in verts.iter().enumerate() {
        for (j, &vj) in verts.iter().enumerate() {
            out.push((vi, vj, scale * jump[i] * jump[j]));
        }
    }
    Ok(out)
}

/// Vertex-indexed face-jump triplets mapped to active DOFs.
pub(crate) fn faces_to_dofs(
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    faces: &[usize],
    gamma: f64,
    power: i32,
) -> Result<Triplets> {
    if gamma == 0.0 {
        return Ok(Vec::new());
    }
    let parts: Vec<Result<Triplets>> = faces.par_iter().map(|&f| face_jump(mesh, f, gamma, power)).collect();
    let mut out = Vec::new();
    for part in parts {
        for (r, c, v) in part? {
            out.push((
                active.dof(r).expect("face vertex is active"),
                active.dof(c).expect("face vertex is active"),
                v,
            ));
        }
    }
    Ok(out)
}

/// Matrix of the Darcy form, before strong boundary conditions.
pub fn assemble_matrix(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<SparseMatrix> {
    problem.penalties.validate()?;
    let parts: Vec<Result<Triplets>> = active
        .active_cells()
        .par_iter()
        .map(|&c| cell_matrix(problem, mesh, active, c))
        .collect();
    let mut triplets = Vec::new();
    for p in parts {
        triplets.extend(p?);
    }
    triplets.extend(faces_to_dofs(mesh, active, active.ghost_faces(), problem.penalties.gamma_1, 1)?);
    let n = active.num_dofs();
    Ok(SparseMatrix::from_triplets(n, n, &triplets))
}

/// Right-hand side of the Darcy form, before strong boundary conditions.
pub fn assemble_rhs(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<Vec<f64>> {
    let parts: Vec<Result<[f64; 3]>> = active
        .active_cells()
        .par_iter()
        .map(|&c| cell_load(problem, mesh, active, c))
        .collect();
    let mut rhs = vec![0.0; active.num_dofs()];
    for (&c, p) in active.active_cells().iter().zip(parts) {
        let local = p?;
        for (d, v) in active.cell_dofs(mesh, c).into_iter().zip(local) {
            rhs[d] += v;
        }
    }
    Ok(rhs)
}

/// Active DOFs pinned by a strong boundary, with their values.
pub(crate) fn strong_dofs(
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    strong: &StrongBoundary,
) -> Vec<(usize, f64)> {
    let mu = active.parameter();
    active
        .dof_vertices()
        .iter()
        .enumerate()
        .filter(|&(_, &v)| mesh.boundary_sides(v).intersects(strong.sides))
        .map(|(d, &v)| {
            let p = mesh.vertices()[v];
            let value = match &strong.value {
                ScalarData::Nodal(f) => f[v],
                ScalarData::PerCell(_) => panic!("per-cell data cannot pin nodes"),
                other => other.eval(mesh, 0, p, mu),
            };
            (d, value)
        })
        .collect()
}

/// Symmetric elimination of pinned DOFs: their rows and columns become
/// identity and the known values move to the right-hand side.
pub(crate) fn eliminate(matrix: &SparseMatrix, rhs: &mut [f64], pins: &[(usize, f64)]) -> SparseMatrix {
    let n = matrix.nrows();
    let mut pinned: Vec<Option<f64>> = vec![None; n];
    for &(d, v) in pins {
        pinned[d] = Some(v);
    }
    let mut triplets = Vec::with_capacity(matrix.nnz());
    for r in 0..n {
        if let Some(v) = pinned[r] {
            triplets.push((r, r, 1.0));
            rhs[r] = v;
            continue;
        }
        for (c, a) in matrix.row(r) {
            match pinned[c] {
                Some(v) => rhs[r] -= a * v,
                None => triplets.push((r, c, a)),
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Assembled system with strong outer conditions applied.
pub fn assemble(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<SparseSystem> {
    if active.active_cells().is_empty() {
        return Err(Error::EmptyDomain(active.parameter().to_vec()));
    }
    let matrix = assemble_matrix(problem, mesh, active)?;
    let mut rhs = assemble_rhs(problem, mesh, active)?;
    let matrix = match &problem.strong_outer {
        Some(strong) => eliminate(&matrix, &mut rhs, &strong_dofs(mesh, active, strong)),
        None => matrix,
    };
    Ok(SparseSystem::new(matrix, rhs))
}

pub fn solve(problem: &DarcyProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<FieldVector> {
    let system = assemble(problem, mesh, active)?;
    let values = sparse_solve(&system)?;
    Ok(FieldVector {
        values,
        parameter: active.parameter().to_vec(),
    })
}

/// Harmonic extension of a background P1 field into `B \ D(mu)`: Laplace
/// problem on the complement with Nitsche datum `trace` on the interface
/// and zero on the box. Returns complement DOF values and the complement
/// active mesh.
pub fn solve_harmonic_extension(
    trace: &[f64],
    mesh: &BackgroundMesh,
    domain: &LevelSetDomain,
    mu: &[f64],
    subdivision: usize,
    penalties: Penalties,
) -> Result<(FieldVector, ActiveMesh)> {
    let complement = domain.complement().with_split(|_, _| InterfaceKind::Dirichlet);
    let active = classify_with(mesh, &complement, mu, subdivision)?;
    let problem = DarcyProblem {
        dirichlet: ScalarData::Nodal(Arc::new(trace.to_vec())),
        penalties,
        strong_outer: Some(StrongBoundary {
            sides: SideSet::all(),
            value: ScalarData::Zero,
        }),
        ..DarcyProblem::new(complement)
    };
    let field = solve(&problem, mesh, &active)?;
    Ok((field, active))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify, ellipse_levelset};
    use crate::linalg::dot;
    use crate::mesh::Rect;

    fn darcy_mesh() -> BackgroundMesh {
        BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.05).unwrap()
    }

    fn small_mesh() -> BackgroundMesh {
        BackgroundMesh::structured(Rect::new([-0.2, -0.2], [0.2, 0.2]), 0.02).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let mesh = small_mesh();
        let problem = DarcyProblem::new(ellipse_levelset(0.05));
        let active = classify(&mesh, &problem.domain, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let u = solve(&problem, &mesh, &active).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_patch_on_disk() {
        let mesh = small_mesh();
        let problem = DarcyProblem {
            dirichlet: ScalarData::function(|p, _| 1.0 + 2.0 * p[0] + 3.0 * p[1]),
            ..DarcyProblem::new(ellipse_levelset(0.05))
        };
        for mu in [[1.0, 1.0, 0.0, 0.0], [1.7, 0.6, 0.03, -0.04]] {
            let active = classify(&mesh, &problem.domain, &mu).unwrap();
            let u = solve(&problem, &mesh, &active).unwrap();
            for (d, &v) in active.dof_vertices().iter().enumerate() {
                let p = mesh.vertices()[v];
                assert!((u.values[d] - (1.0 + 2.0 * p[0] + 3.0 * p[1])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn matrix_symmetric_and_positive() {
        let mesh = darcy_mesh();
        let problem = DarcyProblem::ellipse(0.05, Penalties::default());
        let active = classify(&mesh, &problem.domain, &[1.2, 0.8, 0.3, -0.2]).unwrap();
        let sys = assemble(&problem, &mesh, &active).unwrap();
        assert!(sys.matrix.asymmetry() < 1e-12);
        let n = sys.dim();
        for s in 0..5 {
            let v: Vec<f64> = (0..n).map(|i| ((i * 7 + s * 13) as f64).sin()).collect();
            assert!(dot(&v, &sys.matrix.mul_vec(&v)) > 0.0);
        }
    }

    #[test]
    fn galerkin_residual() {
        let mesh = darcy_mesh();
        let problem = DarcyProblem::ellipse(0.05, Penalties::default());
        let active = classify(&mesh, &problem.domain, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let sys = assemble(&problem, &mesh, &active).unwrap();
        let u = sparse_solve(&sys).unwrap();
        let au = sys.matrix.mul_vec(&u);
        let n = sys.dim();
        for s in 0..10 {
            let v: Vec<f64> = (0..n).map(|i| ((i * 3 + s * 17) as f64).cos()).collect();
            assert!((dot(&v, &au) - dot(&v, &sys.rhs)).abs() < 1e-9);
        }
    }

    #[test]
    fn ghost_free_patch_unchanged() {
        let mesh = small_mesh();
        let problem = DarcyProblem {
            dirichlet: ScalarData::function(|p, _| 1.0 + 2.0 * p[0] + 3.0 * p[1]),
            penalties: Penalties {
                gamma_1: 0.0,
                ..Penalties::default()
            },
            ..DarcyProblem::new(ellipse_levelset(0.05))
        };
        let active = classify(&mesh, &problem.domain, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let u = solve(&problem, &mesh, &active).unwrap();
        for (d, &v) in active.dof_vertices().iter().enumerate() {
            let p = mesh.vertices()[v];
            assert!((u.values[d] - (1.0 + 2.0 * p[0] + 3.0 * p[1])).abs() < 1e-8);
        }
    }

    #[test]
    fn face_jump_scaling() {
        let coarse = BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), 0.5).unwrap();
        let f = coarse.faces().iter().position(|f| f.is_interior()).unwrap();
        let a = face_jump(&coarse, f, 1.0, 3).unwrap();
        let b = face_jump(&coarse, f, 8.0, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((8.0 * x.2 - y.2).abs() < 1e-12 * y.2.abs().max(1.0));
        }
        // An affine field has no gradient jump.
        let u: Vec<f64> = coarse.vertices().iter().map(|p| 2.0 * p[0] - p[1]).collect();
        let mut ju = 0.0;
        for &(r, c, v) in &a {
            ju += u[r] * v * u[c];
        }
        assert!(ju.abs() < 1e-12);
    }

    #[test]
    fn harmonic_extension_bounds() {
        let mesh = small_mesh();
        let domain = ellipse_levelset(0.05);
        let mu = [1.0, 1.0, 0.0, 0.0];
        let zero = vec![0.0; mesh.num_vertices()];
        let (u, _) = solve_harmonic_extension(&zero, &mesh, &domain, &mu, 8, Penalties::default()).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
        let c = 2.5;
        let ones = vec![c; mesh.num_vertices()];
        let (u, active) = solve_harmonic_extension(&ones, &mesh, &domain, &mu, 8, Penalties::default()).unwrap();
        for (d, &v) in active.dof_vertices().iter().enumerate() {
            if domain.phi(mesh.vertices()[v], &mu) > 0.0 {
                assert!(u.values[d] >= -1e-6 * c && u.values[d] <= c * (1.0 + 1e-6), "{}", u.values[d]);
            }
        }
    }
}

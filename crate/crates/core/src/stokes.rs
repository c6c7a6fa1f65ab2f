//! Equal-order P1/P1 Stokes with Nitsche conditions on the embedded
//! boundary, strong conditions on the box and face-jump stabilization.

use std::sync::Arc;

use rayon::prelude::*;

use crate::darcy::{self, faces_to_dofs, DarcyProblem, Penalties, ScalarData, StrongBoundary, QUAD_ORDER};
use crate::error::{Error, Result};
use crate::geometry::{cylinder_levelset, ActiveMesh, CellKind, InterfaceKind, LevelSetDomain};
use crate::linalg::{SparseLu, SparseMatrix, SparseSystem};
use crate::mesh::{barycentric, p1_gradients, BackgroundMesh, Side, SideSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StokesPenalties {
    pub gamma_d: f64,
    pub gamma_1u: f64,
    pub gamma_1p: f64,
}

impl Default for StokesPenalties {
    fn default() -> Self {
        Self {
            gamma_d: 10.0,
            gamma_1u: 0.1,
            gamma_1p: 0.1,
        }
    }
}

/// Faces carrying the pressure jump penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PressureFaces {
    /// Every interior face of the active mesh.
    #[default]
    AllInterior,
    /// Only the ghost faces next to cut cells.
    Ghost,
}

/// Sign with which the pressure jump penalty enters the form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PressureSign {
    /// `a + b + j_u - j_p`, as the form is usually written.
    Minus,
    /// `a + b + j_u + j_p`, which keeps the pressure Schur complement
    /// definite when the continuity row reads `+(div u, xi)`.
    #[default]
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeCondition {
    Dirichlet([f64; 2]),
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxConditions {
    pub left: EdgeCondition,
    pub right: EdgeCondition,
    pub bottom: EdgeCondition,
    pub top: EdgeCondition,
}

impl BoxConditions {
    pub fn get(&self, side: Side) -> EdgeCondition {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    pub fn dirichlet_sides(&self) -> SideSet {
        Side::ALL
            .into_iter()
            .filter(|&s| matches!(self.get(s), EdgeCondition::Dirichlet(_)))
            .collect()
    }

    /// Prescribed velocity of a boundary vertex. Bottom and top edges take
    /// precedence at corners.
    pub fn value(&self, sides: SideSet) -> Option<[f64; 2]> {
        [Side::Bottom, Side::Top, Side::Left, Side::Right]
            .into_iter()
            .filter(|&s| sides.contains(s))
            .find_map(|s| match self.get(s) {
                EdgeCondition::Dirichlet(v) => Some(v),
                EdgeCondition::Neumann => None,
            })
    }
}

#[derive(Clone, Debug)]
pub struct StokesProblem {
    pub domain: LevelSetDomain,
    pub nu: f64,
    pub body_force: [ScalarData; 2],
    pub interface_velocity: [ScalarData; 2],
    pub box_conditions: BoxConditions,
    pub penalties: StokesPenalties,
    pub pressure_faces: PressureFaces,
    pub pressure_sign: PressureSign,
}

impl StokesProblem {
    /// Channel `[-2, 2] x [-1, 1]` with a cylinder of radius 0.2 at
    /// `(1.5, mu)`: unit inflow on the left, no slip on the walls and the
    /// cylinder, natural outflow on the right, `nu = 1`.
    pub fn cylinder(penalties: StokesPenalties) -> Self {
        Self {
            domain: cylinder_levelset(),
            nu: 1.0,
            body_force: [ScalarData::Zero, ScalarData::Zero],
            interface_velocity: [ScalarData::Zero, ScalarData::Zero],
            box_conditions: BoxConditions {
                left: EdgeCondition::Dirichlet([1.0, 0.0]),
                right: EdgeCondition::Neumann,
                bottom: EdgeCondition::Dirichlet([0.0, 0.0]),
                top: EdgeCondition::Dirichlet([0.0, 0.0]),
            },
            penalties,
            pressure_faces: PressureFaces::default(),
            pressure_sign: PressureSign::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.penalties;
        if !(self.nu > 0.0) || !(p.gamma_d > 0.0) || !(p.gamma_1u >= 0.0) || !(p.gamma_1p >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need nu > 0 and positive penalties, got nu = {} and {p:?}",
                self.nu
            )));
        }
        Ok(())
    }
}

/// Velocity (two component blocks) and pressure on the active DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesField {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub parameter: Vec<f64>,
}

type Triplets = Vec<(usize, usize, f64)>;

fn cell_contribution(
    problem: &StokesProblem,
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    cell: usize,
) -> Result<(Triplets, Vec<(usize, f64)>)> {
    let n = active.num_dofs();
    let mu = active.parameter();
    let nu = problem.nu;
    let t = mesh.triangle(cell);
    let g = p1_gradients(&t);
    let dofs = active.cell_dofs(mesh, cell);
    let hk = mesh.cell_h(cell);
    let gd = problem.penalties.gamma_d;
    let u = |c: usize, i: usize| c * n + dofs[i];
    let p = |i: usize| 2 * n + dofs[i];

    let (bulk, iface) = match active.kind(cell) {
        CellKind::Inside => (active.bulk_rule(mesh, cell, QUAD_ORDER)?, Default::default()),
        CellKind::Outside => return Ok((Vec::new(), Vec::new())),
        CellKind::Cut => active.cut_rules(mesh, cell, QUAD_ORDER)?,
    };
    let area = bulk.total_weight();
    let mut mass = [0.0; 3];
    let mut load = [[0.0; 3]; 2];
    for k in 0..bulk.len() {
        let phi = barycentric(&t, bulk.points[k]);
        let w = bulk.weights[k];
        for i in 0..3 {
            mass[i] += w * phi[i];
        }
        for c in 0..2 {
            if !problem.body_force[c].is_zero() {
                let f = problem.body_force[c].eval(mesh, cell, bulk.points[k], mu);
                for i in 0..3 {
                    load[c][i] += w * f * phi[i];
                }
            }
        }
    }

    let mut trip = Vec::with_capacity(72);
    let mut rhs = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            let stiff = nu * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            for c in 0..2 {
                trip.push((u(c, i), u(c, j), stiff));
                trip.push((u(c, i), p(j), -g[i][c] * mass[j]));
                trip.push((p(j), u(c, i), g[i][c] * mass[j]));
            }
        }
        for c in 0..2 {
            if load[c][i] != 0.0 {
                rhs.push((u(c, i), load[c][i]));
            }
        }
    }

    for k in 0..iface.len() {
        let x = iface.points[k];
        if problem.domain.interface_kind(x, mu) != InterfaceKind::Dirichlet {
            continue;
        }
        let w = iface.weights[k];
        let nv = iface.normal(k);
        let phi = barycentric(&t, x);
        let dn = [0, 1, 2].map(|i| nv[0] * g[i][0] + nv[1] * g[i][1]);
        let gv = [0, 1].map(|c| problem.interface_velocity[c].eval(mesh, cell, x, mu));
        for i in 0..3 {
            for j in 0..3 {
                let vv = w * nu * (-dn[j] * phi[i] - phi[j] * dn[i] + gd / hk * phi[i] * phi[j]);
                for c in 0..2 {
                    trip.push((u(c, i), u(c, j), vv));
                    trip.push((u(c, i), p(j), w * phi[j] * nv[c] * phi[i]));
                    trip.push((p(i), u(c, j), -w * phi[j] * nv[c] * phi[i]));
                }
            }
            if gv != [0.0, 0.0] {
                for c in 0..2 {
                    rhs.push((u(c, i), w * nu * gv[c] * (gd / hk * phi[i] - dn[i])));
                }
                rhs.push((p(i), -w * (gv[0] * nv[0] + gv[1] * nv[1]) * phi[i]));
            }
        }
    }
    Ok((trip, rhs))
}

/// Saddle-point system before strong box conditions.
pub fn assemble_stokes_raw(problem: &StokesProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<SparseSystem> {
    problem.validate()?;
    if active.active_cells().is_empty() {
        return Err(Error::EmptyDomain(active.parameter().to_vec()));
    }
    let n = active.num_dofs();
    let parts: Vec<_> = active
        .active_cells()
        .par_iter()
        .map(|&c| cell_contribution(problem, mesh, active, c))
        .collect();
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; 3 * n];
    for part in parts {
        let (t, r) = part?;
        triplets.extend(t);
        for (i, v) in r {
            rhs[i] += v;
        }
    }
    let pen = problem.penalties;
    let ju = faces_to_dofs(mesh, active, active.ghost_faces(), pen.gamma_1u, 1)?;
    for c in 0..2 {
        triplets.extend(ju.iter().map(|&(r, col, v)| (c * n + r, c * n + col, v)));
    }
    let faces = match problem.pressure_faces {
        PressureFaces::AllInterior => active.interior_faces(),
        PressureFaces::Ghost => active.ghost_faces(),
    };
    let sign = match problem.pressure_sign {
        PressureSign::Minus => -1.0,
        PressureSign::Plus => 1.0,
    };
    let jp = faces_to_dofs(mesh, active, faces, pen.gamma_1p, 3)?;
    triplets.extend(jp.into_iter().map(|(r, col, v)| (2 * n + r, 2 * n + col, sign * v)));
    Ok(SparseSystem::new(SparseMatrix::from_triplets(3 * n, 3 * n, &triplets), rhs))
}

/// Velocity rows pinned by the box conditions, as `(row, value)`.
pub fn strong_rows(problem: &StokesProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Vec<(usize, f64)> {
    let n = active.num_dofs();
    let mut out = Vec::new();
    for (d, &v) in active.dof_vertices().iter().enumerate() {
        let sides = mesh.boundary_sides(v);
        if sides.is_empty() {
            continue;
        }
        if let Some(val) = problem.box_conditions.value(sides) {
            out.push((d, val[0]));
            out.push((n + d, val[1]));
        }
    }
    out
}

/// Replace pinned rows by identity rows with the prescribed value.
pub(crate) fn replace_rows(system: &SparseSystem, pins: &[(usize, f64)]) -> SparseSystem {
    let n = system.dim();
    let mut pinned = vec![None; n];
    for &(r, v) in pins {
        pinned[r] = Some(v);
    }
    let mut triplets = Vec::with_capacity(system.matrix.nnz());
    let mut rhs = system.rhs.clone();
    for (r, pin) in pinned.iter().enumerate() {
        match pin {
            Some(v) => {
                triplets.push((r, r, 1.0));
                rhs[r] = *v;
            }
            None => triplets.extend(system.matrix.row(r).map(|(c, a)| (r, c, a))),
        }
    }
    SparseSystem::new(SparseMatrix::from_triplets(n, n, &triplets), rhs)
}

pub fn assemble_stokes(problem: &StokesProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<SparseSystem> {
    let raw = assemble_stokes_raw(problem, mesh, active)?;
    Ok(replace_rows(&raw, &strong_rows(problem, mesh, active)))
}

pub fn solve_stokes(problem: &StokesProblem, mesh: &BackgroundMesh, active: &ActiveMesh) -> Result<StokesField> {
    let raw = assemble_stokes_raw(problem, mesh, active)?;
    let pins = strong_rows(problem, mesh, active);
    let mut x = crate::linalg::sparse_solve(&replace_rows(&raw, &pins))?;
    // Identity rows are solved exactly; remove round-off from the LU.
    for (r, v) in pins {
        x[r] = v;
    }
    let n = active.num_dofs();
    Ok(StokesField {
        velocity: x[..2 * n].to_vec(),
        pressure: x[2 * n..].to_vec(),
        parameter: active.parameter().to_vec(),
    })
}

/// Gradient of a P1 field on each active cell; zero on inactive cells.
pub fn cell_gradients(mesh: &BackgroundMesh, active: &ActiveMesh, values: &[f64]) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; mesh.num_cells()];
    for &c in active.active_cells() {
        let g = p1_gradients(&mesh.triangle(c));
        let d = active.cell_dofs(mesh, c);
        for k in 0..3 {
            for a in 0..2 {
                out[c][a] += values[d[k]] * g[k][a];
            }
        }
    }
    out
}

/// Supremizer `-Δ s = ∇p` solved componentwise with homogeneous Nitsche
/// conditions on the embedded boundary, zero on the Dirichlet box edges
/// and natural conditions on the Neumann edges. Returns both components
/// stacked on the active DOFs.
pub fn solve_supremizer(
    problem: &StokesProblem,
    pressure: &[f64],
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
) -> Result<Vec<f64>> {
    let n = active.num_dofs();
    if pressure.len() != n {
        return Err(Error::InvalidArgument(format!(
            "pressure has {} values for {n} active DOFs",
            pressure.len()
        )));
    }
    let grads = cell_gradients(mesh, active, pressure);
    let make = |c: usize| DarcyProblem {
        source: ScalarData::PerCell(Arc::new(grads.iter().map(|g| g[c]).collect())),
        penalties: Penalties {
            gamma_d: problem.penalties.gamma_d,
            gamma_n: 0.0,
            gamma_1: problem.penalties.gamma_1u,
        },
        strong_outer: Some(StrongBoundary {
            sides: problem.box_conditions.dirichlet_sides(),
            value: ScalarData::Zero,
        }),
        ..DarcyProblem::new(problem.domain.clone().with_split(|_, _| InterfaceKind::Dirichlet))
    };
    let first = make(0);
    let matrix = darcy::assemble_matrix(&first, mesh, active)?;
    let pins = darcy::strong_dofs(mesh, active, first.strong_outer.as_ref().expect("set above"));
    let mut out = Vec::with_capacity(2 * n);
    let mut factor: Option<SparseLu> = None;
    for c in 0..2 {
        let p = if c == 0 { first.clone() } else { make(1) };
        let mut rhs = darcy::assemble_rhs(&p, mesh, active)?;
        let reduced = darcy::eliminate(&matrix, &mut rhs, &pins);
        if factor.is_none() {
            factor = Some(SparseLu::new(&reduced)?);
        }
        out.extend(factor.as_ref().expect("factored").solve(&rhs)?);
    }
    Ok(out)
}

/// Flux `∫ u·n` of the velocity through one side of the box, integrated
/// exactly for the P1 field along boundary faces.
pub fn edge_flux(mesh: &BackgroundMesh, active: &ActiveMesh, velocity: &[f64], side: Side) -> f64 {
    let n = active.num_dofs();
    let normal = match side {
        Side::Left => [-1.0, 0.0],
        Side::Right => [1.0, 0.0],
        Side::Bottom => [0.0, -1.0],
        Side::Top => [0.0, 1.0],
    };
    let mut flux = 0.0;
    for face in mesh.faces() {
        if face.is_interior() {
            continue;
        }
        let [a, b] = face.vertices;
        if !(mesh.boundary_sides(a).contains(side) && mesh.boundary_sides(b).contains(side)) {
            continue;
        }
        let (Some(da), Some(db)) = (active.dof(a), active.dof(b)) else { continue };
        let len = crate::mesh::dist(mesh.vertices()[a], mesh.vertices()[b]);
        let un = |d: usize| velocity[d] * normal[0] + velocity[n + d] * normal[1];
        flux += 0.5 * len * (un(da) + un(db));
    }
    flux
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::classify;
    use crate::mesh::{DiagonalPattern, Rect};

    fn channel(h: f64) -> BackgroundMesh {
        BackgroundMesh::structured_with(Rect::new([-2.0, -1.0], [2.0, 1.0]), h, DiagonalPattern::MirrorY).unwrap()
    }

    #[test]
    fn homogeneous_data_gives_zero() {
        let mesh = channel(0.2);
        let mut problem = StokesProblem::cylinder(StokesPenalties::default());
        problem.box_conditions.left = EdgeCondition::Dirichlet([0.0, 0.0]);
        let active = classify(&mesh, &problem.domain, &[0.1]).unwrap();
        let s = solve_stokes(&problem, &mesh, &active).unwrap();
        assert!(s.velocity.iter().chain(&s.pressure).all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn saddle_structure() {
        let mesh = channel(0.2);
        let problem = StokesProblem::cylinder(StokesPenalties::default());
        let active = classify(&mesh, &problem.domain, &[0.2]).unwrap();
        let sys = assemble_stokes_raw(&problem, &mesh, &active).unwrap();
        let n = active.num_dofs();
        let scale = (0..3 * n)
            .flat_map(|r| sys.matrix.row(r).map(|(_, v)| v.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        for r in 0..2 * n {
            for (c, v) in sys.matrix.row(r) {
                let t = sys.matrix.get(c, r);
                if c < 2 * n {
                    assert!((v - t).abs() <= 1e-12 * scale);
                } else {
                    assert!((v + t).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn pinned_rows_hold_values() {
        let mesh = channel(0.2);
        let problem = StokesProblem::cylinder(StokesPenalties::default());
        let active = classify(&mesh, &problem.domain, &[0.0]).unwrap();
        let s = solve_stokes(&problem, &mesh, &active).unwrap();
        let n = active.num_dofs();
        for (r, v) in strong_rows(&problem, &mesh, &active) {
            assert_eq!(s.velocity[r], v);
        }
        // Corner vertices belong to the walls.
        let corner = mesh.vertices().iter().position(|p| p[0] == -2.0 && p[1] == -1.0).unwrap();
        let d = active.dof(corner).unwrap();
        assert_eq!(s.velocity[d], 0.0);
        assert_eq!(s.velocity[n + d], 0.0);
    }

    #[test]
    fn supremizer_of_constant_pressure_vanishes() {
        let mesh = channel(0.2);
        let problem = StokesProblem::cylinder(StokesPenalties::default());
        let active = classify(&mesh, &problem.domain, &[0.0]).unwrap();
        let s = solve_supremizer(&problem, &vec![3.0; active.num_dofs()], &mesh, &active).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_pressure_gradient_load() {
        let mesh = channel(0.2);
        let problem = StokesProblem::cylinder(StokesPenalties::default());
        let active = classify(&mesh, &problem.domain, &[0.0]).unwrap();
        let p: Vec<f64> = active.dof_vertices().iter().map(|&v| mesh.vertices()[v][0]).collect();
        let grads = cell_gradients(&mesh, &active, &p);
        for &c in active.active_cells() {
            assert!((grads[c][0] - 1.0).abs() < 1e-12 && grads[c][1].abs() < 1e-12);
        }
    }
}

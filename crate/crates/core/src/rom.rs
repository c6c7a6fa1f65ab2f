//! Online stage: project the parameter-dependent high-fidelity forms onto
//! (inverse-transported) POD modes and reconstruct the reduced solution.

use crate::darcy::{self, DarcyProblem};
use crate::error::{Error, Result};
use crate::geometry::{classify_with, ActiveMesh, TransportMap, DEFAULT_SUBDIVISION};
use crate::linalg::{lu_solve, sym_eig_tridiagonal, DenseMatrix, SparseSystem};
use crate::mesh::{barycentric, BackgroundMesh};
use crate::pod::ReducedBasis;
use crate::snapshot::{Direction, TransportStencil};
use crate::stokes::{assemble_stokes, StokesProblem};

/// Columns whose restricted Euclidean norm falls below this are dropped.
pub const COLUMN_TOL: f64 = 1e-12;
/// Smallest accepted ratio of LU pivot magnitudes before falling back to
/// the Gram-truncated solve.
pub const PIVOT_RATIO_TOL: f64 = 1e-12;
/// Relative eigenvalue cutoff of the Gram matrix in the fallback solve.
pub const GRAM_TOL: f64 = 1e-12;

/// Solve the Galerkin system `K alpha = f` of the columns `Z` with Gram
/// matrix `G = Z^T Z`. Near-zero columns are skipped; if LU is unreliable
/// the solve is repeated in an orthonormal basis of the numerically
/// independent part of `span Z`.
pub fn solve_reduced(k: &DenseMatrix, f: &[f64], gram: &DenseMatrix) -> Result<Vec<f64>> {
    let n = k.nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| gram[(i, i)].max(0.0).sqrt() >= COLUMN_TOL).collect();
    let mut alpha = vec![0.0; n];
    if keep.is_empty() {
        return Ok(alpha);
    }
    let m = keep.len();
    let ks = DenseMatrix::from_fn(m, m, |i, j| k[(keep[i], keep[j])]);
    let fs: Vec<f64> = keep.iter().map(|&i| f[i]).collect();
    if let Ok((x, ratio)) = lu_solve(&ks, &fs) {
        if ratio > PIVOT_RATIO_TOL {
            for (&i, v) in keep.iter().zip(x) {
                alpha[i] = v;
            }
            return Ok(alpha);
        }
    }

    let gs = DenseMatrix::from_fn(m, m, |i, j| gram[(keep[i], keep[j])]);
    let (lambda, v) = sym_eig_tridiagonal(&gs)?;
    let lmax = lambda[0];
    let r = lambda.iter().take_while(|&&l| l > GRAM_TOL * lmax).count();
    if r == 0 {
        return Err(Error::SingularReduced { size: n });
    }
    // W = V_r Lambda_r^{-1/2} maps orthonormal coordinates to coefficients.
    let w = DenseMatrix::from_fn(m, r, |i, j| v[(i, j)] / lambda[j].sqrt());
    let kw = w.transpose_mul(&ks.mul(&w));
    let fw = w.tr_mul_vec(&fs);
    let (beta, _) = lu_solve(&kw, &fw).map_err(|_| Error::SingularReduced { size: n })?;
    for (&i, v) in keep.iter().zip(w.mul_vec(&beta)) {
        alpha[i] = v;
    }
    Ok(alpha)
}

/// Reduced solution of one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RomSolution {
    pub parameter: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Background fields; one entry for Darcy, velocity and pressure for
    /// Stokes.
    pub fields: Vec<Vec<f64>>,
}

/// Modes as seen at `mu`: composed with `tau^-1(mu)` when the basis is
/// transported.
pub fn modes_at(
    mesh: &BackgroundMesh,
    modes: &[Vec<f64>],
    components: usize,
    transport: Option<(&TransportMap, &[f64])>,
) -> Vec<Vec<f64>> {
    match transport {
        None => modes.to_vec(),
        Some((map, mu)) => {
            let stencil = TransportStencil::new(mesh, map, mu, Direction::Inverse);
            modes.iter().map(|m| stencil.apply(m, components)).collect()
        }
    }
}

/// Full projected system of one parameter, reusable for every leading
/// subset of the columns.
#[derive(Clone, Debug)]
struct Projection {
    k: DenseMatrix,
    f: Vec<f64>,
    gram: DenseMatrix,
}

impl Projection {
    fn new(system: &SparseSystem, z: &DenseMatrix) -> Self {
        Self {
            k: system.matrix.project(z),
            f: z.tr_mul_vec(&system.rhs),
            gram: z.transpose_mul(z),
        }
    }

    fn solve(&self, columns: &[usize]) -> Result<Vec<f64>> {
        let m = columns.len();
        let k = DenseMatrix::from_fn(m, m, |i, j| self.k[(columns[i], columns[j])]);
        let g = DenseMatrix::from_fn(m, m, |i, j| self.gram[(columns[i], columns[j])]);
        let f: Vec<f64> = columns.iter().map(|&i| self.f[i]).collect();
        solve_reduced(&k, &f, &g)
    }
}

fn combine(modes: &[Vec<f64>], alpha: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (m, &a) in modes.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(m) {
            *o += a * v;
        }
    }
    out
}

/// Darcy query prepared for every basis size up to the basis length.
#[derive(Clone, Debug)]
pub struct DarcyQuery {
    pub active: ActiveMesh,
    modes: Vec<Vec<f64>>,
    projection: Projection,
}

impl DarcyQuery {
    pub fn new(
        mesh: &BackgroundMesh,
        problem: &DarcyProblem,
        basis: &ReducedBasis,
        transport: Option<&TransportMap>,
        mu: &[f64],
    ) -> Result<Self> {
        Self::with_subdivision(mesh, problem, basis, transport, mu, DEFAULT_SUBDIVISION)
    }

    pub fn with_subdivision(
        mesh: &BackgroundMesh,
        problem: &DarcyProblem,
        basis: &ReducedBasis,
        transport: Option<&TransportMap>,
        mu: &[f64],
        subdivision: usize,
    ) -> Result<Self> {
        problem.domain.parameter_space().check(mu)?;
        let active = classify_with(mesh, &problem.domain, mu, subdivision)?;
        let system = darcy::assemble(problem, mesh, &active)?;
        let transport = if basis.transported { transport.map(|t| (t, mu)) } else { None };
        if basis.transported && transport.is_none() {
            return Err(Error::InvalidArgument("transported basis needs a transport map".into()));
        }
        let modes = modes_at(mesh, &basis.modes, 1, transport);
        let restricted: Vec<Vec<f64>> = modes.iter().map(|m| active.restrict(m, 1)).collect();
        let z = DenseMatrix::from_columns(&restricted);
        let projection = if modes.is_empty() {
            Projection {
                k: DenseMatrix::zeros(0, 0),
                f: Vec::new(),
                gram: DenseMatrix::zeros(0, 0),
            }
        } else {
            Projection::new(&system, &z)
        };
        Ok(Self {
            active,
            modes,
            projection,
        })
    }

    pub fn max_size(&self) -> usize {
        self.modes.len()
    }

    /// Reduced matrix `Z^T A Z` of all prepared columns.
    pub fn reduced_matrix(&self) -> &DenseMatrix {
        &self.projection.k
    }

    pub fn solve(&self, n: usize) -> Result<RomSolution> {
        let n = n.min(self.max_size());
        let columns: Vec<usize> = (0..n).collect();
        let alpha = self.projection.solve(&columns)?;
        let len = self.modes.first().map_or(0, Vec::len);
        Ok(RomSolution {
            parameter: self.active.parameter().to_vec(),
            fields: vec![combine(&self.modes[..n], &alpha, len)],
            coefficients: alpha,
        })
    }
}

pub fn online_solve_darcy(
    mesh: &BackgroundMesh,
    problem: &DarcyProblem,
    basis: &ReducedBasis,
    transport: Option<&TransportMap>,
    mu: &[f64],
) -> Result<RomSolution> {
    DarcyQuery::new(mesh, problem, basis, transport, mu)?.solve(basis.len())
}

/// Reduced Stokes spaces of up to `n_max` modes per field.
#[derive(Clone, Debug)]
pub struct StokesBases<'a> {
    pub velocity: &'a ReducedBasis,
    pub supremizer: &'a ReducedBasis,
    pub pressure: &'a ReducedBasis,
}

impl StokesBases<'_> {
    pub fn max_size(&self) -> usize {
        self.velocity.len().min(self.supremizer.len()).min(self.pressure.len())
    }

    fn transported(&self) -> bool {
        self.velocity.transported
    }
}

/// Background velocity and pressure subtracted before projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Lifting {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StokesQuery {
    pub active: ActiveMesh,
    n_max: usize,
    velocity_modes: Vec<Vec<f64>>,
    pressure_modes: Vec<Vec<f64>>,
    lifting: Option<Lifting>,
    projection: Projection,
}

impl StokesQuery {
    /// Prepare the projected system with columns ordered as velocity
    /// modes, supremizer modes, pressure modes, `n_max` of each.
    pub fn new(
        mesh: &BackgroundMesh,
        problem: &StokesProblem,
        bases: &StokesBases<'_>,
        transport: Option<&TransportMap>,
        lifting: Option<&Lifting>,
        mu: &[f64],
    ) -> Result<Self> {
        problem.domain.parameter_space().check(mu)?;
        let n_max = bases.max_size();
        let active = classify_with(mesh, &problem.domain, mu, DEFAULT_SUBDIVISION)?;
        let system = assemble_stokes(problem, mesh, &active)?;
        let transport = if bases.transported() { transport.map(|t| (t, mu)) } else { None };
        if bases.transported() && transport.is_none() {
            return Err(Error::InvalidArgument("transported basis needs a transport map".into()));
        }
        let nv = mesh.num_vertices();
        let stencil = transport.map(|(map, mu)| TransportStencil::new(mesh, map, mu, Direction::Inverse));
        let at = |m: &Vec<f64>, comps: usize| match &stencil {
            Some(s) => s.apply(m, comps),
            None => m.clone(),
        };
        let mut velocity_modes: Vec<Vec<f64>> = bases.velocity.modes[..n_max].iter().map(|m| at(m, 2)).collect();
        velocity_modes.extend(bases.supremizer.modes[..n_max].iter().map(|m| at(m, 2)));
        let pressure_modes: Vec<Vec<f64>> = bases.pressure.modes[..n_max].iter().map(|m| at(m, 1)).collect();
        let lifting = lifting.map(|l| Lifting {
            velocity: at(&l.velocity, 2),
            pressure: at(&l.pressure, 1),
        });

        let n = active.num_dofs();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(3 * n_max);
        for m in &velocity_modes {
            let mut c = active.restrict(m, 2);
            c.resize(3 * n, 0.0);
            columns.push(c);
        }
        for m in &pressure_modes {
            let mut c = vec![0.0; 2 * n];
            c.extend(active.restrict(m, 1));
            columns.push(c);
        }
        let mut system = system;
        if let Some(l) = &lifting {
            let mut lift = active.restrict(&l.velocity, 2);
            lift.extend(active.restrict(&l.pressure, 1));
            let al = system.matrix.mul_vec(&lift);
            for (b, a) in system.rhs.iter_mut().zip(al) {
                *b -= a;
            }
        }
        debug_assert_eq!(nv * 2, velocity_modes.first().map_or(2 * nv, Vec::len));
        let projection = Projection::new(&system, &DenseMatrix::from_columns(&columns));
        Ok(Self {
            active,
            n_max,
            velocity_modes,
            pressure_modes,
            lifting,
            projection,
        })
    }

    pub fn max_size(&self) -> usize {
        self.n_max
    }

    /// Solve with the first `n` modes of each field (`3n` unknowns).
    pub fn solve(&self, n: usize) -> Result<RomSolution> {
        let n = n.min(self.n_max);
        let nm = self.n_max;
        let columns: Vec<usize> = (0..n).chain(nm..nm + n).chain(2 * nm..2 * nm + n).collect();
        let alpha = self.projection.solve(&columns)?;
        let vel_modes: Vec<&Vec<f64>> = self.velocity_modes[..n]
            .iter()
            .chain(&self.velocity_modes[nm..nm + n])
            .collect();
        let vlen = self.velocity_modes.first().map_or(0, Vec::len);
        let plen = self.pressure_modes.first().map_or(0, Vec::len);
        let mut velocity = vec![0.0; vlen];
        for (m, &a) in vel_modes.iter().zip(&alpha[..2 * n]) {
            for (o, v) in velocity.iter_mut().zip(m.iter()) {
                *o += a * v;
            }
        }
        let mut pressure = combine(&self.pressure_modes[..n], &alpha[2 * n..], plen);
        if let Some(l) = &self.lifting {
            for (o, v) in velocity.iter_mut().zip(&l.velocity) {
                *o += v;
            }
            for (o, v) in pressure.iter_mut().zip(&l.pressure) {
                *o += v;
            }
        }
        Ok(RomSolution {
            parameter: self.active.parameter().to_vec(),
            coefficients: alpha,
            fields: vec![velocity, pressure],
        })
    }
}

pub fn online_solve_stokes(
    mesh: &BackgroundMesh,
    problem: &StokesProblem,
    bases: &StokesBases<'_>,
    transport: Option<&TransportMap>,
    lifting: Option<&Lifting>,
    mu: &[f64],
) -> Result<RomSolution> {
    let q = StokesQuery::new(mesh, problem, bases, transport, lifting, mu)?;
    q.solve(q.max_size())
}

/// `||hf - rom|| / ||hf||` in L2 over the physical domain, for background
/// fields with `components` blocks.
pub fn relative_error(
    mesh: &BackgroundMesh,
    active: &ActiveMesh,
    hf: &[f64],
    rom: &[f64],
    components: usize,
) -> Result<f64> {
    let nv = mesh.num_vertices();
    assert_eq!(hf.len(), nv * components);
    assert_eq!(rom.len(), nv * components);
    let (mut num, mut den) = (0.0, 0.0);
    for &c in active.active_cells() {
        let rule = active.bulk_rule(mesh, c, darcy::QUAD_ORDER)?;
        let t = mesh.triangle(c);
        let verts = mesh.cells()[c];
        for q in 0..rule.len() {
            let lam = barycentric(&t, rule.points[q]);
            for comp in 0..components {
                let at = |f: &[f64]| -> f64 { verts.iter().zip(lam).map(|(&v, l)| f[comp * nv + v] * l).sum() };
                let (a, b) = (at(hf), at(rom));
                num += rule.weights[q] * (a - b) * (a - b);
                den += rule.weights[q] * a * a;
            }
        }
    }
    if !(den > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok((num / den).sqrt())
}

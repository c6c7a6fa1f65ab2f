//! Level-set domains, active meshes and transport maps.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BackgroundMesh, Point};
use crate::quadrature::{self, QuadratureRule, Subdivision, SNAPPED_VALUE};

/// Default number of level-set sub-samples per cell edge.
pub const DEFAULT_SUBDIVISION: usize = 8;

pub type LevelSetFn = Arc<dyn Fn(Point, &[f64]) -> f64 + Send + Sync>;
pub type PointMap = Arc<dyn Fn(Point, &[f64]) -> Point + Send + Sync>;
pub type SplitFn = Arc<dyn Fn(Point, &[f64]) -> InterfaceKind + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&m, (&lo, &hi))| m >= lo && m <= hi)
    }

    /// Affine image of a point of the unit cube.
    pub fn scale(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&u, (&lo, &hi))| lo + u * (hi - lo))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.scale(&vec![0.5; self.dim()])
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if self.contains(mu) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                parameter: mu.to_vec(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterfaceKind {
    Dirichlet,
    Neumann,
}

/// Parametrized domain `{ phi(x; mu) < 0 }`.
#[derive(Clone)]
pub struct LevelSetDomain {
    phi: LevelSetFn,
    parameter_space: ParameterBox,
    split: SplitFn,
}

impl fmt::Debug for LevelSetDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSetDomain")
            .field("parameter_space", &self.parameter_space)
            .finish_non_exhaustive()
    }
}

impl LevelSetDomain {
    /// Domain whose whole interface carries Dirichlet conditions.
    pub fn new(phi: impl Fn(Point, &[f64]) -> f64 + Send + Sync + 'static, parameter_space: ParameterBox) -> Self {
        Self {
            phi: Arc::new(phi),
            parameter_space,
            split: Arc::new(|_, _| InterfaceKind::Dirichlet),
        }
    }

    pub fn with_split(mut self, split: impl Fn(Point, &[f64]) -> InterfaceKind + Send + Sync + 'static) -> Self {
        self.split = Arc::new(split);
        self
    }

    pub fn phi(&self, p: Point, mu: &[f64]) -> f64 {
        (self.phi)(p, mu)
    }

    pub fn parameter_space(&self) -> &ParameterBox {
        &self.parameter_space
    }

    pub fn interface_kind(&self, p: Point, mu: &[f64]) -> InterfaceKind {
        (self.split)(p, mu)
    }

    /// The exterior `{ phi > 0 }` with the same interface.
    pub fn complement(&self) -> Self {
        let phi = Arc::clone(&self.phi);
        Self {
            phi: Arc::new(move |p, mu| -phi(p, mu)),
            parameter_space: self.parameter_space.clone(),
            split: Arc::clone(&self.split),
        }
    }
}

/// Ellipse `mu2^2 (x-mu3)^2 + mu1^2 (y-mu4)^2 - mu1^2 mu2^2 R^2` over
/// `[0.3, 1.8]^2 x [-0.85, 0.85]^2`.
pub fn ellipse_levelset(radius: f64) -> LevelSetDomain {
    LevelSetDomain::new(
        move |p, mu| {
            let (a, b) = (mu[0] * mu[0], mu[1] * mu[1]);
            b * (p[0] - mu[2]).powi(2) + a * (p[1] - mu[3]).powi(2) - a * b * radius * radius
        },
        ParameterBox::new(vec![0.3, 0.3, -0.85, -0.85], vec![1.8, 1.8, 0.85, 0.85]),
    )
}

pub const CYLINDER_RADIUS: f64 = 0.2;
pub const CYLINDER_X: f64 = 1.5;

/// Fluid region outside a cylinder of radius 0.2 centered at `(1.5, mu)`,
/// `mu` in `[-0.5, 0.5]`.
pub fn cylinder_levelset() -> LevelSetDomain {
    LevelSetDomain::new(
        |p, mu| CYLINDER_RADIUS * CYLINDER_RADIUS - (p[0] - CYLINDER_X).powi(2) - (p[1] - mu[0]).powi(2),
        ParameterBox::new(vec![-0.5], vec![0.5]),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Inside,
    Cut,
    Outside,
}

/// Parameter-dependent view of the background mesh.
#[derive(Clone, Debug)]
pub struct ActiveMesh {
    parameter: Vec<f64>,
    classification: Vec<CellKind>,
    active_cells: Vec<usize>,
    cut_cells: Vec<usize>,
    ghost_faces: Vec<usize>,
    interior_faces: Vec<usize>,
    dof_of_vertex: Vec<Option<usize>>,
    dofs: Vec<usize>,
    subdivision: Subdivision,
    /// Snapped level-set samples on the refinement of each cut cell.
    cut_samples: HashMap<usize, Vec<f64>>,
}

/// Classify cells with the default level-set refinement.
pub fn classify(mesh: &BackgroundMesh, domain: &LevelSetDomain, mu: &[f64]) -> Result<ActiveMesh> {
    classify_with(mesh, domain, mu, DEFAULT_SUBDIVISION)
}

/// Classify cells from the signs of the level set sampled on a regular
/// refinement with `subdivision` intervals per edge (1 = vertices only).
/// Samples within `1e-12 h` of zero count as on the interface.
pub fn classify_with(mesh: &BackgroundMesh, domain: &LevelSetDomain, mu: &[f64], subdivision: usize) -> Result<ActiveMesh> {
    let sub = Subdivision::new(subdivision);
    let tol = 1e-12 * mesh.h();
    let nv = mesh.num_vertices();
    let vertex_phi: Vec<f64> = mesh.vertices().iter().map(|&p| domain.phi(p, mu)).collect();

    let mut classification = Vec::with_capacity(mesh.num_cells());
    let mut cut_samples = HashMap::new();
    for c in 0..mesh.num_cells() {
        let samples: Vec<f64> = if sub.level() == 1 {
            mesh.cells()[c].iter().map(|&v| vertex_phi[v]).collect()
        } else {
            sub.points(&mesh.triangle(c)).into_iter().map(|p| domain.phi(p, mu)).collect()
        };
        let kind = if samples.iter().all(|&v| v < -tol) {
            CellKind::Inside
        } else if samples.iter().all(|&v| v > tol) {
            CellKind::Outside
        } else {
            CellKind::Cut
        };
        if kind == CellKind::Cut {
            let snapped = samples
                .into_iter()
                .map(|v| if v.abs() <= tol { SNAPPED_VALUE } else { v })
                .collect();
            cut_samples.insert(c, snapped);
        }
        classification.push(kind);
    }

    let active_cells: Vec<usize> = (0..mesh.num_cells())
        .filter(|&c| classification[c] != CellKind::Outside)
        .collect();
    if active_cells.is_empty() {
        return Err(Error::EmptyDomain(mu.to_vec()));
    }
    let cut_cells: Vec<usize> = (0..mesh.num_cells())
        .filter(|&c| classification[c] == CellKind::Cut)
        .collect();

    let mut ghost_faces = Vec::new();
    let mut interior_faces = Vec::new();
    for (f, face) in mesh.faces().iter().enumerate() {
        let Some(other) = face.cells.1 else { continue };
        let (ka, kb) = (classification[face.cells.0], classification[other]);
        if ka == CellKind::Outside || kb == CellKind::Outside {
            continue;
        }
        interior_faces.push(f);
        if ka == CellKind::Cut || kb == CellKind::Cut {
            ghost_faces.push(f);
        }
    }

    let mut dof_of_vertex = vec![None; nv];
    let mut dofs = Vec::new();
    let mut used = vec![false; nv];
    for &c in &active_cells {
        for &v in &mesh.cells()[c] {
            used[v] = true;
        }
    }
    for v in 0..nv {
        if used[v] {
            dof_of_vertex[v] = Some(dofs.len());
            dofs.push(v);
        }
    }

    Ok(ActiveMesh {
        parameter: mu.to_vec(),
        classification,
        active_cells,
        cut_cells,
        ghost_faces,
        interior_faces,
        dof_of_vertex,
        dofs,
        subdivision: sub,
        cut_samples,
    })
}

impl ActiveMesh {
    pub fn parameter(&self) -> &[f64] {
        &self.parameter
    }

    pub fn kind(&self, cell: usize) -> CellKind {
        self.classification[cell]
    }

    pub fn classification(&self) -> &[CellKind] {
        &self.classification
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn cut_cells(&self) -> &[usize] {
        &self.cut_cells
    }

    /// Interior faces of the active mesh with at least one cut neighbour.
    pub fn ghost_faces(&self) -> &[usize] {
        &self.ghost_faces
    }

    /// All faces shared by two active cells.
    pub fn interior_faces(&self) -> &[usize] {
        &self.interior_faces
    }

    pub fn num_dofs(&self) -> usize {
        self.dofs.len()
    }

    /// Active DOF index of a background vertex.
    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of_vertex[vertex]
    }

    /// Background vertex of each active DOF, ascending.
    pub fn dof_vertices(&self) -> &[usize] {
        &self.dofs
    }

    pub fn cell_dofs(&self, mesh: &BackgroundMesh, cell: usize) -> [usize; 3] {
        mesh.cells()[cell].map(|v| self.dof_of_vertex[v].expect("cell is active"))
    }

    pub fn subdivision(&self) -> usize {
        self.subdivision.level()
    }

    /// Rule on `cell ∩ D`; empty for outside cells.
    pub fn bulk_rule(&self, mesh: &BackgroundMesh, cell: usize, order: usize) -> Result<QuadratureRule> {
        match self.classification[cell] {
            CellKind::Inside => quadrature::triangle_rule(&mesh.triangle(cell), order),
            CellKind::Outside => Ok(QuadratureRule::default()),
            CellKind::Cut => Ok(self.cut_rules(mesh, cell, order)?.0),
        }
    }

    /// Bulk and interface rules of a cut cell.
    pub fn cut_rules(&self, mesh: &BackgroundMesh, cell: usize, order: usize) -> Result<(QuadratureRule, QuadratureRule)> {
        let samples = self.cut_samples.get(&cell).ok_or(Error::NoInterface)?;
        let t = mesh.triangle(cell);
        if self.subdivision.level() == 1 {
            let phi = [samples[0], samples[1], samples[2]];
            let bulk = quadrature::cut_bulk_rule(&t, phi, order)?;
            let iface = match quadrature::interface_rule(&t, phi, order) {
                Ok(r) => r,
                Err(Error::NoInterface) => QuadratureRule {
                    normals: Some(Vec::new()),
                    ..Default::default()
                },
                Err(e) => return Err(e),
            };
            Ok((bulk, iface))
        } else {
            quadrature::subdivided_rules(&t, samples, &self.subdivision, order)
        }
    }

    /// Scatter active-DOF values (component blocks) to the background mesh,
    /// zero elsewhere.
    pub fn to_background(&self, values: &[f64], components: usize, num_vertices: usize) -> Vec<f64> {
        let n = self.num_dofs();
        assert_eq!(values.len(), n * components);
        let mut out = vec![0.0; num_vertices * components];
        for c in 0..components {
            for (d, &v) in self.dofs.iter().enumerate() {
                out[c * num_vertices + v] = values[c * n + d];
            }
        }
        out
    }

    /// Gather background values (component blocks) at the active DOFs.
    pub fn restrict(&self, background: &[f64], components: usize) -> Vec<f64> {
        let nv = background.len() / components;
        let mut out = Vec::with_capacity(self.num_dofs() * components);
        for c in 0..components {
            out.extend(self.dofs.iter().map(|&v| background[c * nv + v]));
        }
        out
    }
}

/// Parametrized bijection of the background box with analytic inverse.
#[derive(Clone)]
pub struct TransportMap {
    forward: PointMap,
    inverse: PointMap,
    reference: Vec<f64>,
}

impl fmt::Debug for TransportMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportMap")
            .field("reference", &self.reference)
            .finish_non_exhaustive()
    }
}

impl TransportMap {
    pub fn new(
        forward: impl Fn(Point, &[f64]) -> Point + Send + Sync + 'static,
        inverse: impl Fn(Point, &[f64]) -> Point + Send + Sync + 'static,
        reference: Vec<f64>,
    ) -> Self {
        Self {
            forward: Arc::new(forward),
            inverse: Arc::new(inverse),
            reference,
        }
    }

    pub fn forward(&self, p: Point, mu: &[f64]) -> Point {
        (self.forward)(p, mu)
    }

    pub fn inverse(&self, p: Point, mu: &[f64]) -> Point {
        (self.inverse)(p, mu)
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }
}

/// `(x, y) -> (mu1 x + mu3, mu2 y + mu4)`, identity at `(1, 1, 0, 0)`.
pub fn ellipse_transport() -> TransportMap {
    TransportMap::new(
        |p, mu| [mu[0] * p[0] + mu[2], mu[1] * p[1] + mu[3]],
        |p, mu| [(p[0] - mu[2]) / mu[0], (p[1] - mu[3]) / mu[1]],
        vec![1.0, 1.0, 0.0, 0.0],
    )
}

/// `y -> y + mu (1 - y^2)`, `x` fixed; identity at `mu = 0`.
pub fn cylinder_transport() -> TransportMap {
    TransportMap::new(
        |p, mu| [p[0], p[1] + mu[0] * (1.0 - p[1] * p[1])],
        |p, mu| [p[0], cylinder_inverse_y(p[1], mu[0])],
        vec![0.0],
    )
}

fn cylinder_inverse_y(y: f64, mu: f64) -> f64 {
    if mu.abs() < 1e-8 {
        return y;
    }
    // Rationalized form of (1 - sqrt(4 mu^2 - 4 mu y + 1)) / (2 mu); avoids
    // cancellation for small mu.
    let disc = (4.0 * mu * mu - 4.0 * mu * y + 1.0).sqrt();
    2.0 * (y - mu) / (1.0 + disc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    const R: f64 = 0.05;

    #[test]
    fn ellipse_values() {
        let d = ellipse_levelset(R);
        let mu = [1.0, 1.0, 0.0, 0.0];
        assert!((d.phi([0.0, 0.0], &mu) + R * R).abs() < 1e-18);
        assert_eq!(d.phi([R, 0.0], &mu), 0.0);
        let mu = [1.5, 0.5, 0.2, -0.3];
        for t in [0.0, std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_2] {
            let p = [mu[2] + mu[0] * R * t.cos(), mu[3] + mu[1] * R * t.sin()];
            assert!(d.phi(p, &mu).abs() < 1e-14);
        }
    }

    #[test]
    fn cylinder_values() {
        let d = cylinder_levelset();
        for mu in [-0.5, 0.0, 0.3] {
            assert!((d.phi([1.5, mu], &[mu]) - 0.04).abs() < 1e-15);
            assert!(d.phi([1.5 + 0.2, mu], &[mu]).abs() < 1e-15);
        }
        // Top of the cylinder at the extreme parameter stays inside the box.
        let top = 0.5 + CYLINDER_RADIUS;
        assert!((1.0 - top - 0.3).abs() < 1e-15);
        assert!(top < 1.0);
    }

    #[test]
    fn transports() {
        let e = ellipse_transport();
        let mu_ref = e.reference().to_vec();
        for p in [[0.3, -0.7], [1.1, 0.2]] {
            assert_eq!(e.forward(p, &mu_ref), p);
        }
        let mu = [1.5, 0.5, 0.2, -0.3];
        let q = e.forward([R, 0.0], &mu);
        assert!(ellipse_levelset(R).phi(q, &mu).abs() < 1e-15);

        let c = cylinder_transport();
        for mu in [-0.5, -0.1, 0.3] {
            for y in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                let back = c.inverse(c.forward([0.7, y], &[mu]), &[mu]);
                assert!((back[1] - y).abs() < 1e-10);
                assert_eq!(back[0], 0.7);
            }
        }
        assert_eq!(c.inverse([0.0, 0.4], &[0.0]), [0.0, 0.4]);
        assert_eq!(c.forward([0.0, 0.4], &[0.0]), [0.0, 0.4]);
    }

    #[test]
    fn classify_empty_domain() {
        let mesh = BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), 0.25).unwrap();
        let d = LevelSetDomain::new(|_, _| 1.0, ParameterBox::new(vec![], vec![]));
        assert!(matches!(classify(&mesh, &d, &[]), Err(Error::EmptyDomain(_))));
    }

    #[test]
    fn classify_vertical_line() {
        let mesh = BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), 0.3).unwrap();
        let d = LevelSetDomain::new(|p, _| p[0] - 0.5, ParameterBox::new(vec![], vec![]));
        let a = classify_with(&mesh, &d, &[], 1).unwrap();
        for c in 0..mesh.num_cells() {
            let xs = mesh.triangle(c).map(|p| p[0]);
            let crosses = xs.iter().any(|&x| x < 0.5) && xs.iter().any(|&x| x > 0.5);
            if crosses {
                assert_eq!(a.kind(c), CellKind::Cut);
            }
        }
    }

    #[test]
    fn ellipse_case_partition() {
        let mesh = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.05).unwrap();
        let a = classify(&mesh, &ellipse_levelset(R), &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(!a.cut_cells().is_empty());
        let count = |k| a.classification().iter().filter(|&&x| x == k).count();
        assert_eq!(
            count(CellKind::Inside) + count(CellKind::Cut) + count(CellKind::Outside),
            mesh.num_cells()
        );
        for &f in a.ghost_faces() {
            let face = mesh.faces()[f];
            let other = face.cells.1.expect("ghost faces are interior");
            assert!(a.kind(face.cells.0) == CellKind::Cut || a.kind(other) == CellKind::Cut);
            assert_ne!(a.kind(face.cells.0), CellKind::Outside);
            assert_ne!(a.kind(other), CellKind::Outside);
        }
    }
}

//! Correlation-matrix POD with L2 normalized modes.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eig, DenseMatrix, SparseMatrix};
use crate::mesh::BackgroundMesh;
use crate::snapshot::{read_fields, write_fields, ExtensionMode, FieldKind, Manifest, Role, SnapshotSet};

/// Relative eigenvalue below which modes are discarded.
pub const RANK_CUTOFF: f64 = 1e-14;

/// P1 mass matrix on the whole background mesh.
pub fn mass_matrix(mesh: &BackgroundMesh) -> SparseMatrix {
    let mut triplets = Vec::with_capacity(9 * mesh.num_cells());
    for (c, cell) in mesh.cells().iter().enumerate() {
        let a = mesh.cell_area(c) / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((cell[i], cell[j], if i == j { 2.0 * a } else { a }));
            }
        }
    }
    let n = mesh.num_vertices();
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// L2 inner product of nodal fields with `components` blocks.
#[derive(Clone, Debug)]
pub struct L2Product {
    mass: SparseMatrix,
}

impl L2Product {
    pub fn new(mesh: &BackgroundMesh) -> Self {
        Self {
            mass: mass_matrix(mesh),
        }
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    /// `M f` applied blockwise.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.mass.nrows();
        assert_eq!(f.len() % nv, 0, "field length is not a multiple of the vertex count");
        f.chunks(nv).flat_map(|block| self.mass.mul_vec(block)).collect()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        dot(&self.apply(a), b)
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

/// `C_ij = <s_i, s_j>_{L2}`.
pub fn correlation(fields: &[Vec<f64>], l2: &L2Product) -> Result<DenseMatrix> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("correlation of an empty set".into()));
    }
    let weighted: Vec<Vec<f64>> = fields.par_iter().map(|f| l2.apply(f)).collect();
    let m = fields.len();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| if j < i { 0.0 } else { dot(&weighted[i], &fields[j]) }).collect())
        .collect();
    let mut c = DenseMatrix::from_rows(&rows);
    for i in 0..m {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    Ok(c)
}

/// Orthonormal POD modes on the background mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    pub kind: FieldKind,
    pub modes: Vec<Vec<f64>>,
    /// All correlation eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub extension: ExtensionMode,
    pub transported: bool,
    pub reference: Option<Vec<f64>>,
}

impl ReducedBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Eigenvalues divided by the largest one.
    pub fn normalized_eigenvalues(&self) -> Vec<f64> {
        let first = self.eigenvalues.first().copied().unwrap_or(0.0);
        self.eigenvalues
            .iter()
            .map(|&l| if first > 0.0 { l / first } else { 0.0 })
            .collect()
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self {
            modes: self.modes[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = Manifest {
            format: crate::snapshot::FORMAT_NAME.into(),
            version: crate::snapshot::FORMAT_VERSION,
            role: Role::Basis,
            kind: self.kind,
            count: self.len(),
            dofs: self.modes.first().map_or(0, Vec::len),
            components: self.kind.components(),
            extension_mode: self.extension,
            transported: self.transported,
            reference_parameter: self.reference.clone(),
            parameters: Vec::new(),
            eigenvalues: Some(self.eigenvalues.clone()),
            files: Vec::new(),
        };
        write_fields(dir, manifest, &self.modes)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, modes) = read_fields(dir, Role::Basis)?;
        Ok(Self {
            kind: manifest.kind,
            modes,
            eigenvalues: manifest.eigenvalues.unwrap_or_default(),
            extension: manifest.extension_mode,
            transported: manifest.transported,
            reference: manifest.reference_parameter,
        })
    }
}

/// POD of a snapshot set keeping at most `n` modes. Modes are
/// `S Q_i` for the leading eigenvectors `Q_i` of the correlation matrix,
/// re-orthonormalized in L2; modes with `lambda_i / lambda_1 < 1e-14`, or
/// that vanish under re-orthogonalization, are dropped.
pub fn compress(set: &SnapshotSet, n: usize, l2: &L2Product) -> Result<ReducedBasis> {
    let m = set.len();
    if m == 0 {
        return Err(Error::InvalidArgument("cannot compress an empty snapshot set".into()));
    }
    if n == 0 || n > m {
        return Err(Error::InvalidArgument(format!("basis size {n} outside 1..={m}")));
    }
    let c = correlation(&set.fields, l2)?;
    let (eigenvalues, q) = sym_eig(&c)?;
    let lambda1 = eigenvalues[0];
    let keep = if lambda1 > 0.0 {
        eigenvalues[..n].iter().take_while(|&&l| l / lambda1 >= RANK_CUTOFF).count()
    } else {
        0
    };
    let dofs = set.fields[0].len();
    let raw: Vec<Vec<f64>> = (0..keep)
        .into_par_iter()
        .map(|i| {
            let mut phi = vec![0.0; dofs];
            for (k, s) in set.fields.iter().enumerate() {
                let w = q[(k, i)];
                for (p, v) in phi.iter_mut().zip(s) {
                    *p += w * v;
                }
            }
            phi
        })
        .collect();
    let modes = orthonormalize(raw, l2);
    Ok(ReducedBasis {
        kind: set.kind,
        modes,
        eigenvalues,
        extension: set.extension,
        transported: set.transported,
        reference: set.reference.clone(),
    })
}

/// Gram-Schmidt in L2, each vector projected twice against the accepted
/// ones. Vectors that lose more than `1 - 1e-6` of their norm are
/// discarded.
pub fn orthonormalize(vectors: Vec<Vec<f64>>, l2: &L2Product) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    let mut weighted: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        let original = l2.norm(&v);
        if !(original > 0.0) {
            continue;
        }
        for _pass in 0..2 {
            let coeffs: Vec<f64> = weighted.par_iter().map(|mb| dot(mb, &v)).collect();
            for (b, c) in basis.iter().zip(coeffs) {
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= c * y;
                }
            }
        }
        let norm = l2.norm(&v);
        if !(norm > 1e-6 * original) {
            continue;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
        weighted.push(l2.apply(&v));
        basis.push(v);
    }
    basis
}

/// Velocity space (velocity modes then supremizer modes) and pressure
/// space of the reduced Stokes problem.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesSpaces {
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    pub transported: bool,
    pub reference: Option<Vec<f64>>,
}

impl StokesSpaces {
    pub fn dim(&self) -> usize {
        self.velocity.len() + self.pressure.len()
    }
}

pub fn build_stokes_spaces(
    velocity: &ReducedBasis,
    supremizer: &ReducedBasis,
    pressure: &ReducedBasis,
    n: usize,
    l2: &L2Product,
) -> Result<StokesSpaces> {
    for (name, b) in [("velocity", velocity), ("supremizer", supremizer), ("pressure", pressure)] {
        if b.len() < n {
            return Err(Error::InvalidArgument(format!("{name} basis has {} < {n} modes", b.len())));
        }
        if b.modes[..n].iter().any(|m| !(l2.norm(m) > 1e-12)) {
            return Err(Error::InvalidArgument(format!("{name} basis contains a zero mode")));
        }
    }
    let mut v = velocity.modes[..n].to_vec();
    v.extend_from_slice(&supremizer.modes[..n]);
    Ok(StokesSpaces {
        velocity: v,
        pressure: pressure.modes[..n].to_vec(),
        transported: velocity.transported,
        reference: velocity.reference.clone(),
    })
}

//! Sparse assembly and direct solves, dense eigen and LU routines.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Compress `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (start, end) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(start..end);
            // Stable sort keeps the summation order of duplicates fixed.
            order.sort_by_key(|&k| cols[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(cols[k]) {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = Some(cols[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// Transpose product `A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }

    /// `Z^T A Z` for a dense column block `Z` (row-major, `ncols x k`).
    pub fn project(&self, z: &DenseMatrix) -> DenseMatrix {
        assert_eq!(z.nrows(), self.ncols);
        let k = z.ncols();
        let mut az = DenseMatrix::zeros(self.nrows, k);
        for r in 0..self.nrows {
            let out = az.row_mut(r);
            for (c, v) in self.row(r) {
                for (o, &zz) in out.iter_mut().zip(z.row(c)) {
                    *o += v * zz;
                }
            }
        }
        z.transpose_mul(&az)
    }
}

/// Square sparse system with one right-hand side.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols());
        assert_eq!(matrix.nrows(), rhs.len());
        Self { matrix, rhs }
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn residual(&self, x: &[f64]) -> f64 {
        relative_residual(&self.matrix, x, &self.rhs)
    }
}

fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r = norm(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>());
    let nb = norm(b);
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const SPARSE_RESIDUAL_TOL: f64 = 1e-10;

/// Sparse LU factorization reusable for several right-hand sides.
pub struct SparseLu {
    matrix: SparseMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("dim", &self.matrix.nrows()).finish()
    }
}

impl SparseLu {
    pub fn new(matrix: &SparseMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        // Sequential factorization keeps results independent of the thread count.
        faer::set_global_parallelism(faer::Par::Seq);
        let n = matrix.nrows();
        let triplets: Vec<Triplet<usize, usize, f64>> = matrix
            .triplets()
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::InvalidArgument(format!("sparse matrix construction failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::SingularMatrix { row: index },
            _ => Error::SingularMatrix { row: 0 },
        })?;
        Ok(Self {
            matrix: matrix.clone(),
            lu,
        })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = faer::col::Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[i]).collect()
    }

    /// Solve with one step of iterative refinement; fails if the relative
    /// residual stays above `1e-10`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.matrix.nrows());
        let mut x = self.raw_solve(b);
        let bad_row = |x: &[f64]| x.iter().position(|v| !v.is_finite());
        if let Some(row) = bad_row(&x) {
            return Err(Error::SingularMatrix { row });
        }
        if relative_residual(&self.matrix, &x, b) > SPARSE_RESIDUAL_TOL {
            let ax = self.matrix.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            if let Some(row) = bad_row(&x) {
                return Err(Error::SingularMatrix { row });
            }
            if relative_residual(&self.matrix, &x, b) > SPARSE_RESIDUAL_TOL {
                return Err(Error::SingularMatrix { row: worst_row(&self.matrix, &x, b) });
            }
        }
        Ok(x)
    }
}

fn worst_row(a: &SparseMatrix, x: &[f64], b: &[f64]) -> usize {
    let ax = a.mul_vec(x);
    ax.iter()
        .zip(b)
        .map(|(p, q)| (p - q).abs())
        .enumerate()
        .fold((0, -1.0), |best, (i, r)| if r > best.1 { (i, r) } else { best })
        .0
}

/// Direct sparse LU solve.
pub fn sparse_solve(system: &SparseSystem) -> Result<Vec<f64>> {
    SparseLu::new(&system.matrix)?.solve(&system.rhs)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        Self {
            nrows,
            ncols,
            data: rows.concat(),
        }
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, Vec::len);
        Self::from_fn(nrows, ncols, |i, j| cols[j][i])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.ncols, self.nrows, |i, j| self[(j, i)])
    }

    pub fn mul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut out = Self::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T other`.
    pub fn transpose_mul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.nrows, other.nrows);
        let mut out = Self::zeros(self.ncols, other.ncols);
        for k in 0..self.nrows {
            let (a, b) = (self.row(k), other.row(k));
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (o, &bj) in out.row_mut(i).iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in y.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        y
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted descending; eigenvectors are the columns of the
/// returned matrix.
pub fn sym_eig(matrix: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let scale = matrix.max_abs();
    for i in 0..n {
        for j in 0..i {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::InvalidArgument(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = matrix.clone();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DenseMatrix::identity(n);
    let total = a.frobenius();
    if total == 0.0 {
        return Ok((vec![0.0; n], v));
    }

    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-18 * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

/// Eigenpairs of a symmetric matrix by a tridiagonal reduction (faer).
/// Faster than [`sym_eig`] for large matrices; same output convention.
pub fn sym_eig_tridiagonal(matrix: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (matrix[(i, j)] + matrix[(j, i)]));
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::SingularMatrix { row: 0 })?;
    let (s, u) = (evd.S().column_vector(), evd.U());
    let values = (0..n).map(|j| s[n - 1 - j]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| u[(i, n - 1 - j)]);
    Ok((values, vectors))
}

/// LU with partial pivoting. Pivots below `1e-14` of the largest entry
/// count as singular.
pub fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (x, ratio) = lu_solve(a, b)?;
    if ratio <= 1e-14 {
        return Err(Error::SingularMatrix { row: a.nrows().saturating_sub(1) });
    }
    Ok(x)
}

/// LU with partial pivoting, returning the solution and the ratio of the
/// smallest to the largest pivot magnitude. Errors only on exactly zero
/// pivots or non-finite results.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    assert_eq!(b.len(), n);
    let scale = a.max_abs();
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()).then(j.cmp(&i)))
            .unwrap();
        if lu[(p, k)] == 0.0 || scale == 0.0 || lu[(p, k)].abs() <= 1e-14 * scale {
            return Err(Error::SingularMatrix { row: k });
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        let pivot = lu[(k, k)];
        pmin = pmin.min(pivot.abs());
        pmax = pmax.max(pivot.abs());
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            lu[(i, k)] = 0.0;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| lu[(k, j)] * x[j]).sum();
        x[k] = (x[k] - s) / lu[(k, k)];
    }
    if let Some(row) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix { row });
    }
    Ok((x, if n == 0 { 1.0 } else { pmin / pmax }))
}

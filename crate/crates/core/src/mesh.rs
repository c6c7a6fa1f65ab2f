//! Fixed background triangulation of an axis-aligned box.
//!
//! The mesh is structured: the box is split into `nx × ny` rectangles and each
//! rectangle into two counterclockwise triangles. Faces carry their adjacent
//! cells, boundary vertices carry the box sides they lie on, and a bucket grid
//! over cell bounding boxes answers point-location queries.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Tolerance used by point location, both for the box test and barycentrics.
pub const LOCATE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.min[0] - tol
            && p[0] <= self.max[0] + tol
            && p[1] >= self.min[1] - tol
            && p[1] <= self.max[1] + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    fn bit(self) -> u8 {
        match self {
            Side::Left => 1,
            Side::Right => 2,
            Side::Bottom => 4,
            Side::Top => 8,
        }
    }
}

/// Set of box sides a vertex lies on. Corners carry two sides.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SideSet(u8);

impl SideSet {
    pub const EMPTY: SideSet = SideSet(0);

    pub fn all() -> Self {
        Side::ALL.into_iter().collect()
    }

    pub fn contains(self, side: Side) -> bool {
        self.0 & side.bit() != 0
    }

    pub fn insert(&mut self, side: Side) {
        self.0 |= side.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn intersects(self, other: SideSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Side> {
        Side::ALL.into_iter().filter(move |s| self.contains(*s))
    }
}

impl FromIterator<Side> for SideSet {
    fn from_iter<T: IntoIterator<Item = Side>>(iter: T) -> Self {
        let mut set = SideSet::EMPTY;
        for s in iter {
            set.insert(s);
        }
        set
    }
}

/// How each rectangle of the structured grid is split in two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiagonalPattern {
    /// Every rectangle is split by its bottom-left to top-right diagonal.
    #[default]
    Uniform,
    /// Rows above the horizontal center line use the bottom-left to top-right
    /// diagonal, rows below use the mirrored one, so the mesh is symmetric
    /// under `y -> -y` about the box center. Requires an even row count,
    /// which the builder enforces.
    MirrorY,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    /// Endpoints, smaller index first.
    pub vertices: [usize; 2],
    /// Adjacent cells, lower index first. `None` for boundary faces.
    pub cells: (usize, Option<usize>),
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.cells.1.is_some()
    }
}

/// Uniform bucket grid over cell bounding boxes.
#[derive(Clone, Debug)]
struct CellGrid {
    origin: Point,
    cell_size: [f64; 2],
    dims: [usize; 2],
    /// Bucket contents, each sorted by ascending cell index.
    buckets: Vec<Vec<usize>>,
}

impl CellGrid {
    fn build(bbox: Rect, vertices: &[Point], cells: &[[usize; 3]]) -> Self {
        let n = (cells.len() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [n, n];
        let cell_size = [
            (bbox.width() / n as f64).max(f64::MIN_POSITIVE),
            (bbox.height() / n as f64).max(f64::MIN_POSITIVE),
        ];
        let mut grid = Self {
            origin: bbox.min,
            cell_size,
            dims,
            buckets: vec![Vec::new(); n * n],
        };
        for (c, tri) in cells.iter().enumerate() {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for &v in tri {
                for d in 0..2 {
                    lo[d] = lo[d].min(vertices[v][d]);
                    hi[d] = hi[d].max(vertices[v][d]);
                }
            }
            let (i0, j0) = grid.bucket_of([lo[0] - LOCATE_TOL, lo[1] - LOCATE_TOL]);
            let (i1, j1) = grid.bucket_of([hi[0] + LOCATE_TOL, hi[1] + LOCATE_TOL]);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    grid.buckets[j * dims[0] + i].push(c);
                }
            }
        }
        grid
    }

    fn bucket_of(&self, p: Point) -> (usize, usize) {
        let clamp = |x: f64, n: usize| -> usize {
            if x <= 0.0 {
                0
            } else {
                (x as usize).min(n - 1)
            }
        };
        (
            clamp((p[0] - self.origin[0]) / self.cell_size[0], self.dims[0]),
            clamp((p[1] - self.origin[1]) / self.cell_size[1], self.dims[1]),
        )
    }

    fn candidates(&self, p: Point) -> &[usize] {
        let (i, j) = self.bucket_of(p);
        &self.buckets[j * self.dims[0] + i]
    }
}

#[derive(Clone, Debug)]
pub struct BackgroundMesh {
    bbox: Rect,
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    faces: Vec<Face>,
    cell_faces: Vec<[usize; 3]>,
    boundary: Vec<SideSet>,
    cell_h: Vec<f64>,
    h: f64,
    grid: CellGrid,
}

impl BackgroundMesh {
    /// Structured mesh with every rectangle cut by its bottom-left to
    /// top-right diagonal.
    pub fn structured(bbox: Rect, target_h: f64) -> Result<Self> {
        Self::structured_with(bbox, target_h, DiagonalPattern::Uniform)
    }

    pub fn structured_with(bbox: Rect, target_h: f64, pattern: DiagonalPattern) -> Result<Self> {
        if !(target_h > 0.0) || !target_h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target mesh size must be positive, got {target_h}"
            )));
        }
        if !(bbox.width() > 0.0 && bbox.height() > 0.0) {
            return Err(Error::InvalidArgument(format!("degenerate box {bbox:?}")));
        }
        let count = |len: f64| ((len / target_h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let nx = count(bbox.width());
        let mut ny = count(bbox.height());
        if pattern == DiagonalPattern::MirrorY && ny % 2 == 1 {
            ny += 1;
        }
        let dx = bbox.width() / nx as f64;
        let dy = bbox.height() / ny as f64;

        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // Snap the last row/column onto the box exactly.
                let x = if i == nx { bbox.max[0] } else { bbox.min[0] + i as f64 * dx };
                let y = if j == ny { bbox.max[1] } else { bbox.min[1] + j as f64 * dy };
                vertices.push([x, y]);
                let mut sides = SideSet::EMPTY;
                if i == 0 {
                    sides.insert(Side::Left);
                }
                if i == nx {
                    sides.insert(Side::Right);
                }
                if j == 0 {
                    sides.insert(Side::Bottom);
                }
                if j == ny {
                    sides.insert(Side::Top);
                }
                boundary.push(sides);
            }
        }

        let mut cells = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            let mirrored = pattern == DiagonalPattern::MirrorY && j < ny / 2;
            for i in 0..nx {
                let (v00, v10, v01, v11) = (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                if mirrored {
                    cells.push([v00, v10, v01]);
                    cells.push([v10, v11, v01]);
                } else {
                    cells.push([v00, v10, v11]);
                    cells.push([v00, v11, v01]);
                }
            }
        }
        Ok(Self::from_parts(bbox, vertices, cells, boundary))
    }

    fn from_parts(bbox: Rect, vertices: Vec<Point>, cells: Vec<[usize; 3]>, boundary: Vec<SideSet>) -> Self {
        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 2);
        let mut faces: Vec<Face> = Vec::with_capacity(cells.len() * 3 / 2 + 1);
        let mut cell_faces = Vec::with_capacity(cells.len());
        for (c, tri) in cells.iter().enumerate() {
            let mut local = [0usize; 3];
            for k in 0..3 {
                // Local face k is opposite local vertex k.
                let a = tri[(k + 1) % 3];
                let b = tri[(k + 2) % 3];
                let key = (a.min(b), a.max(b));
                let f = *edge_map.entry(key).or_insert_with(|| {
                    faces.push(Face {
                        vertices: [key.0, key.1],
                        cells: (c, None),
                    });
                    faces.len() - 1
                });
                if faces[f].cells.0 != c {
                    faces[f].cells.1 = Some(c);
                }
                local[k] = f;
            }
            cell_faces.push(local);
        }

        let cell_h: Vec<f64> = cells
            .iter()
            .map(|t| {
                let p = t.map(|v| vertices[v]);
                (0..3)
                    .map(|k| dist(p[k], p[(k + 1) % 3]))
                    .fold(0.0, f64::max)
            })
            .collect();
        let h = cell_h.iter().copied().fold(0.0, f64::max);
        let grid = CellGrid::build(bbox, &vertices, &cells);
        Self {
            bbox,
            vertices,
            cells,
            faces,
            cell_faces,
            boundary,
            cell_h,
            h,
            grid,
        }
    }

    pub fn bbox(&self) -> Rect {
        self.bbox
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Face indices of a cell; local face `k` is opposite local vertex `k`.
    pub fn cell_faces(&self, cell: usize) -> [usize; 3] {
        self.cell_faces[cell]
    }

    pub fn boundary_sides(&self, vertex: usize) -> SideSet {
        self.boundary[vertex]
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_h(&self, cell: usize) -> f64 {
        self.cell_h[cell]
    }

    pub fn triangle(&self, cell: usize) -> [Point; 3] {
        self.cells[cell].map(|v| self.vertices[v])
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        signed_area(&self.triangle(cell))
    }

    /// Containing cell and barycentric coordinates of `p`, or `None` when `p`
    /// lies outside the box. Points on shared edges resolve to the lowest
    /// cell index.
    pub fn locate_point(&self, p: Point) -> Option<(usize, [f64; 3])> {
        if !self.bbox.contains(p, LOCATE_TOL) {
            return None;
        }
        self.grid.candidates(p).iter().find_map(|&c| {
            let bary = barycentric(&self.triangle(c), p);
            bary.iter()
                .all(|&b| (-LOCATE_TOL..=1.0 + LOCATE_TOL).contains(&b))
                .then_some((c, bary))
        })
    }

    /// Value of a P1 field (one value per vertex) at `p`.
    pub fn interpolate(&self, field: &[f64], p: Point) -> Option<f64> {
        self.locate_point(p).map(|(c, b)| {
            let t = self.cells[c];
            b[0] * field[t[0]] + b[1] * field[t[1]] + b[2] * field[t[2]]
        })
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn signed_area(t: &[Point; 3]) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]))
}

pub fn barycentric(t: &[Point; 3], p: Point) -> [f64; 3] {
    let det = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
    let l1 = ((p[0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (p[1] - t[0][1])) / det;
    let l2 = ((t[1][0] - t[0][0]) * (p[1] - t[0][1]) - (p[0] - t[0][0]) * (t[1][1] - t[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Constant gradients of the three P1 hat functions of a triangle.
pub fn p1_gradients(t: &[Point; 3]) -> [[f64; 2]; 3] {
    let det = 2.0 * signed_area(t);
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let a = t[(k + 1) % 3];
        let b = t[(k + 2) % 3];
        g[k] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(h: f64) -> BackgroundMesh {
        BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), h).unwrap()
    }

    fn check_invariants(m: &BackgroundMesh) {
        for c in 0..m.num_cells() {
            assert!(m.cell_area(c) > 0.0, "cell {c} not counterclockwise");
        }
        let interior = m.faces().iter().filter(|f| f.is_interior()).count();
        let boundary = m.faces().len() - interior;
        assert_eq!(2 * interior + boundary, 3 * m.num_cells());
        let v = m.num_vertices() as i64;
        let e = m.faces().len() as i64;
        let c = m.num_cells() as i64;
        assert_eq!(v - e + (c + 1), 2);
        let hmax = (0..m.num_cells()).map(|c| m.cell_h(c)).fold(0.0, f64::max);
        assert_eq!(hmax, m.h());
    }

    #[test]
    fn two_by_two_counts() {
        let m = unit(0.5);
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.faces().len(), 16);
        assert_eq!(m.faces().iter().filter(|f| f.is_interior()).count(), 8);
        check_invariants(&m);
    }

    #[test]
    fn minimal_split() {
        let m = unit(1.0);
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_cells(), 2);
        check_invariants(&m);
    }

    #[test]
    fn darcy_background_counts() {
        let m = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.05).unwrap();
        assert_eq!(m.num_vertices(), 2401);
        assert_eq!(m.num_cells(), 4608);
        assert!(m.h() <= 2f64.sqrt() * 0.05 * (1.0 + 1e-12));
        check_invariants(&m);
    }

    #[test]
    fn mirrored_pattern_is_symmetric() {
        let m = BackgroundMesh::structured_with(Rect::new([-2.0, -1.0], [2.0, 1.0]), 0.3, DiagonalPattern::MirrorY)
            .unwrap();
        check_invariants(&m);
        let key = |p: Point| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let mut edges = std::collections::HashSet::new();
        for f in m.faces() {
            let a = key(m.vertices()[f.vertices[0]]);
            let b = key(m.vertices()[f.vertices[1]]);
            edges.insert((a.min(b), a.max(b)));
        }
        for &(a, b) in &edges {
            let ma = (a.0, -a.1);
            let mb = (b.0, -b.1);
            assert!(edges.contains(&(ma.min(mb), ma.max(mb))));
        }
    }

    #[test]
    fn rejects_bad_size() {
        assert!(matches!(
            BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(BackgroundMesh::structured(Rect::new([0.0, 0.0], [1.0, 1.0]), -1.0).is_err());
        assert!(BackgroundMesh::structured(Rect::new([0.0, 0.0], [0.0, 1.0]), 0.1).is_err());
    }

    #[test]
    fn areas_sum_to_box() {
        let m = BackgroundMesh::structured(Rect::new([-1.2, -1.2], [1.2, 1.2]), 0.07).unwrap();
        let total: f64 = (0..m.num_cells()).map(|c| m.cell_area(c)).sum();
        assert!((total - 5.76).abs() <= 1e-12 * 5.76);
    }

    #[test]
    fn locate_centroid_vertex_and_outside() {
        let m = unit(0.25);
        let t = m.triangle(0);
        let c = [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
        let (cell, b) = m.locate_point(c).unwrap();
        assert_eq!(cell, 0);
        for x in b {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        // Interior vertex shared by six cells.
        let v = [0.5, 0.5];
        let lowest = (0..m.num_cells())
            .find(|&c| m.cells()[c].iter().any(|&k| m.vertices()[k] == v))
            .unwrap();
        assert_eq!(m.locate_point(v).unwrap().0, lowest);
        assert!(m.locate_point([1.5, 0.5]).is_none());
        assert!(m.locate_point([-1e-9, 0.5]).is_none());
    }

    #[test]
    fn face_list_has_unique_pairs() {
        let m = unit(0.1);
        let mut seen = std::collections::HashSet::new();
        for f in m.faces() {
            assert!(seen.insert(f.vertices));
        }
    }

    #[test]
    fn boundary_labels() {
        let m = unit(0.5);
        let corner = m.boundary_sides(0);
        assert!(corner.contains(Side::Left) && corner.contains(Side::Bottom));
        assert!(m.boundary_sides(4).is_empty());
        assert!(m.boundary_sides(8).contains(Side::Top));
    }
}

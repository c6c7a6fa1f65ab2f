//! Quadrature on cut geometry.
//!
//! The interface inside a triangle is the zero line of the linear interpolant
//! of the level set values at its vertices. Bulk rules cover the part where
//! the interpolant is non-positive, interface rules the zero segment, and face
//! rules whole mesh edges.

use crate::error::{Error, Result};
use crate::mesh::{dist, signed_area, Point};

/// Replacement value for level set samples that sit on the interface.
pub const SNAPPED_VALUE: f64 = -1e-14;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Option<Vec<[f64; 2]>>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }

    pub fn append(&mut self, other: QuadratureRule) {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
        match (&mut self.normals, other.normals) {
            (Some(a), Some(b)) => a.extend(b),
            (None, Some(b)) if self.weights.len() == b.len() => self.normals = Some(b),
            _ => {}
        }
    }

    pub fn normal(&self, k: usize) -> [f64; 2] {
        self.normals.as_ref().map_or([0.0, 0.0], |n| n[k])
    }
}

fn check_order(order: usize) -> Result<()> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "quadrature order {order} not supported (expected 1, 2 or 3)"
        )))
    }
}

/// Symmetric rules on the reference triangle: barycentric points and weights
/// summing to one. Order 3 uses the six-point degree-4 rule, which keeps all
/// weights positive.
fn reference_triangle(order: usize) -> &'static [([f64; 3], f64)] {
    const O1: [([f64; 3], f64); 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];
    const O2: [([f64; 3], f64); 3] = [
        ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
    ];
    const A: f64 = 0.445948490915965;
    const B: f64 = 0.091576213509771;
    const WA: f64 = 0.223381589678011;
    const WB: f64 = 0.109951743655322;
    const O3: [([f64; 3], f64); 6] = [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
    ];
    match order {
        1 => &O1,
        2 => &O2,
        _ => &O3,
    }
}

/// Gauss–Legendre nodes on [0, 1] with weights summing to one; `n` points.
fn reference_segment(n: usize) -> &'static [(f64, f64)] {
    const G1: [(f64, f64); 1] = [(0.5, 1.0)];
    const S: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)
    const G2: [(f64, f64); 2] = [(0.5 - S, 0.5), (0.5 + S, 0.5)];
    const T: f64 = 0.387_298_334_620_741_7; // sqrt(3/5) / 2
    const G3: [(f64, f64); 3] = [(0.5 - T, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + T, 5.0 / 18.0)];
    match n {
        1 => &G1,
        2 => &G2,
        _ => &G3,
    }
}

fn push_triangle(rule: &mut QuadratureRule, t: &[Point; 3], order: usize) {
    let area = signed_area(t).abs();
    if area == 0.0 {
        return;
    }
    for &(b, w) in reference_triangle(order) {
        rule.points.push([
            b[0] * t[0][0] + b[1] * t[1][0] + b[2] * t[2][0],
            b[0] * t[0][1] + b[1] * t[1][1] + b[2] * t[2][1],
        ]);
        rule.weights.push(w * area);
    }
}

fn push_segment(rule: &mut QuadratureRule, a: Point, b: Point, order: usize, normal: Option<[f64; 2]>) {
    let len = dist(a, b);
    for &(s, w) in reference_segment(order) {
        rule.points.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        rule.weights.push(w * len);
        if let (Some(n), Some(normals)) = (normal, rule.normals.as_mut()) {
            normals.push(n);
        }
    }
}

/// Full-triangle rule.
pub fn triangle_rule(t: &[Point; 3], order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    let mut rule = QuadratureRule::default();
    push_triangle(&mut rule, t, order);
    Ok(rule)
}

fn unsnap(phi: [f64; 3]) -> [f64; 3] {
    phi.map(|v| if v == 0.0 { SNAPPED_VALUE } else { v })
}

fn crossing(a: Point, b: Point, fa: f64, fb: f64) -> Point {
    let s = fa / (fa - fb);
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Polygon of `t` where the linear interpolant of `phi` is non-positive,
/// vertices in counterclockwise order.
fn negative_polygon(t: &[Point; 3], phi: [f64; 3]) -> Vec<Point> {
    let mut poly = Vec::with_capacity(4);
    for k in 0..3 {
        let (a, b) = (t[k], t[(k + 1) % 3]);
        let (fa, fb) = (phi[k], phi[(k + 1) % 3]);
        if fa <= 0.0 {
            poly.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            poly.push(crossing(a, b, fa, fb));
        }
    }
    poly
}

/// Rule on the part of `t` where the linear interpolant of `phi` is
/// non-positive. Weights sum to that sub-polygon's area.
pub fn cut_bulk_rule(t: &[Point; 3], phi: [f64; 3], order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    let phi = unsnap(phi);
    let mut rule = QuadratureRule::default();
    let poly = negative_polygon(t, phi);
    for k in 1..poly.len().saturating_sub(1) {
        push_triangle(&mut rule, &[poly[0], poly[k], poly[k + 1]], order);
    }
    Ok(rule)
}

/// Rule on the zero segment of the linear interpolant of `phi` in `t`, with
/// the unit normal pointing towards increasing `phi`.
pub fn interface_rule(t: &[Point; 3], phi: [f64; 3], order: usize) -> Result<QuadratureRule> {
    check_order(order)?;
    let phi = unsnap(phi);
    let mut ends = Vec::with_capacity(2);
    for k in 0..3 {
        let (fa, fb) = (phi[k], phi[(k + 1) % 3]);
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            ends.push(crossing(t[k], t[(k + 1) % 3], fa, fb));
        }
    }
    if ends.len() != 2 {
        return Err(Error::NoInterface);
    }
    let normal = level_set_normal(t, phi);
    let mut rule = QuadratureRule {
        normals: Some(Vec::new()),
        ..Default::default()
    };
    push_segment(&mut rule, ends[0], ends[1], order, Some(normal));
    Ok(rule)
}

/// Unit gradient of the linear interpolant of `phi` on `t`.
pub fn level_set_normal(t: &[Point; 3], phi: [f64; 3]) -> [f64; 2] {
    let g = crate::mesh::p1_gradients(t);
    let gx = phi[0] * g[0][0] + phi[1] * g[1][0] + phi[2] * g[2][0];
    let gy = phi[0] * g[0][1] + phi[1] * g[1][1] + phi[2] * g[2][1];
    let n = gx.hypot(gy);
    [gx / n, gy / n]
}

/// Gauss–Legendre rule with `order` points on the segment `a`–`b`.
pub fn segment_rule(a: Point, b: Point, order: usize, normal: Option<[f64; 2]>) -> Result<QuadratureRule> {
    check_order(order)?;
    if !(dist(a, b) > 0.0) {
        return Err(Error::InvalidArgument("degenerate face".into()));
    }
    let mut rule = QuadratureRule {
        normals: normal.map(|_| Vec::new()),
        ..Default::default()
    };
    push_segment(&mut rule, a, b, order, normal);
    Ok(rule)
}

/// Rule on a mesh face. The normal points from the lower-indexed adjacent
/// cell into the higher-indexed one (outward from the only cell on the
/// boundary).
pub fn face_rule(mesh: &crate::mesh::BackgroundMesh, face: usize, order: usize) -> Result<QuadratureRule> {
    let f = mesh.faces()[face];
    let a = mesh.vertices()[f.vertices[0]];
    let b = mesh.vertices()[f.vertices[1]];
    let len = dist(a, b);
    if !(len > 0.0) {
        return Err(Error::InvalidArgument("degenerate face".into()));
    }
    let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    // Orient away from the first cell's opposite vertex.
    let cell = mesh.cells()[f.cells.0];
    let opposite = cell.iter().copied().find(|v| !f.vertices.contains(v)).expect("triangle");
    let o = mesh.vertices()[opposite];
    if (o[0] - a[0]) * n[0] + (o[1] - a[1]) * n[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    segment_rule(a, b, order, Some(n))
}

/// Regular refinement of a triangle into `level²` sub-triangles.
///
/// Sub-vertex `(i, j)` with `i + j <= level` sits at
/// `p0 + i/level (p1 - p0) + j/level (p2 - p0)`.
#[derive(Clone, Debug)]
pub struct Subdivision {
    level: usize,
}

impl Subdivision {
    pub fn new(level: usize) -> Self {
        Self { level: level.max(1) }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_points(&self) -> usize {
        (self.level + 1) * (self.level + 2) / 2
    }

    fn index(&self, i: usize, j: usize) -> usize {
        // Row j holds level + 1 - j points.
        j * (self.level + 1) - j * (j.saturating_sub(1)) / 2 + i
    }

    pub fn points(&self, t: &[Point; 3]) -> Vec<Point> {
        let s = self.level as f64;
        let mut pts = vec![[0.0; 2]; self.num_points()];
        for j in 0..=self.level {
            for i in 0..=self.level - j {
                let (a, b) = (i as f64 / s, j as f64 / s);
                pts[self.index(i, j)] = [
                    t[0][0] + a * (t[1][0] - t[0][0]) + b * (t[2][0] - t[0][0]),
                    t[0][1] + a * (t[1][1] - t[0][1]) + b * (t[2][1] - t[0][1]),
                ];
            }
        }
        pts
    }

    /// Sub-triangles as index triples into [`Subdivision::points`], all with
    /// the parent's orientation.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let s = self.level;
        let mut tris = Vec::with_capacity(s * s);
        for j in 0..s {
            for i in 0..s - j {
                tris.push([self.index(i, j), self.index(i + 1, j), self.index(i, j + 1)]);
                if i + j + 1 < s {
                    tris.push([self.index(i + 1, j), self.index(i + 1, j + 1), self.index(i, j + 1)]);
                }
            }
        }
        tris
    }
}

/// Bulk and interface rules for a cell whose level set is sampled on a
/// regular refinement: the interface is piecewise linear over sub-triangles.
pub fn subdivided_rules(
    t: &[Point; 3],
    sub_phi: &[f64],
    subdivision: &Subdivision,
    order: usize,
) -> Result<(QuadratureRule, QuadratureRule)> {
    check_order(order)?;
    let pts = subdivision.points(t);
    let mut bulk = QuadratureRule::default();
    let mut iface = QuadratureRule {
        normals: Some(Vec::new()),
        ..Default::default()
    };
    for tri in subdivision.triangles() {
        let st = tri.map(|k| pts[k]);
        let sp = tri.map(|k| sub_phi[k]);
        bulk.append(cut_bulk_rule(&st, sp, order)?);
        match interface_rule(&st, sp, order) {
            Ok(r) => iface.append(r),
            Err(Error::NoInterface) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((bulk, iface))
}

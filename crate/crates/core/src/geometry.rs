//! Cartesian grids, level-set inclusions and ground-truth masks.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of a boundary node in its boundary parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryParam {
    /// A node of the 2D perimeter.
    Curve {
        /// Arclength from the point `(x1_max, x2_mid)`, counter-clockwise.
        arclength: f64,
        /// `2π · arclength / perimeter`, the angle used by the flux bases.
        angle: f64,
        /// Polar angle `atan2(x2, x1)` in `[0, 2π)`.
        polar: f64,
    },
    /// A node of a 3D cube face. Edge and corner nodes report the first face
    /// (in the order -x1, +x1, -x2, +x2, -x3, +x3) they belong to.
    Face { face: u8, coords: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryNode {
    /// Linear node index.
    pub node: usize,
    /// Unit outward normal (third component zero in 2D).
    pub normal: [f64; 3],
    /// Trapezoid quadrature weight (length in 2D, area in 3D).
    pub weight: f64,
    pub param: BoundaryParam,
}

/// A Cartesian discretization of a box in 2 or 3 dimensions.
///
/// Nodes are stored with the last axis fastest, so a 2D field is a row-major
/// `n1 × n2` matrix whose rows follow `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    counts: [usize; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    spacing: [f64; 3],
    boundary: Vec<BoundaryNode>,
    boundary_slot: Vec<usize>,
    perimeter: f64,
}

const NOT_BOUNDARY: usize = usize::MAX;

impl Grid {
    /// Builds a grid with the same extent on every axis.
    pub fn new(counts: &[usize], extent: [f64; 2]) -> Result<Self> {
        Self::with_extents(counts, &vec![extent; counts.len()])
    }

    /// Square grid on `(-1, 1)²` with `n` nodes per axis.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(&[n, n], [-1.0, 1.0])
    }

    /// Cube grid on `(-1, 1)³` with `n` nodes per axis.
    pub fn cube(n: usize) -> Result<Self> {
        Self::new(&[n, n, n], [-1.0, 1.0])
    }

    pub fn with_extents(counts: &[usize], extents: &[[f64; 2]]) -> Result<Self> {
        let dim = counts.len();
        if dim != 2 && dim != 3 {
            return Err(Error::param(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::param("one extent per axis is required"));
        }
        let mut c = [1usize; 3];
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        let mut spacing = [1.0; 3];
        for a in 0..dim {
            if counts[a] < 3 {
                return Err(Error::param(format!(
                    "axis {a} needs at least 3 nodes, got {}",
                    counts[a]
                )));
            }
            let [l, h] = extents[a];
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::param(format!("axis {a} extent [{l}, {h}] is invalid")));
            }
            c[a] = counts[a];
            lo[a] = l;
            hi[a] = h;
            spacing[a] = (h - l) / (counts[a] - 1) as f64;
        }
        let mut grid = Grid {
            dim,
            counts: c,
            lo,
            hi,
            spacing,
            boundary: Vec::new(),
            boundary_slot: vec![NOT_BOUNDARY; c[0] * c[1] * c[2]],
            perimeter: 0.0,
        };
        if dim == 2 {
            grid.build_perimeter();
        } else {
            grid.build_surface();
        }
        for (k, b) in grid.boundary.iter().enumerate() {
            grid.boundary_slot[b.node] = k;
        }
        Ok(grid)
    }

    fn build_perimeter(&mut self) {
        let [n0, n1, _] = self.counts;
        let [h0, h1, _] = self.spacing;
        // Counter-clockwise from the corner (x1_max, x2_min).
        let mut walk: Vec<(usize, usize)> = Vec::with_capacity(2 * (n0 + n1) - 4);
        walk.extend((0..n1 - 1).map(|j| (n0 - 1, j)));
        walk.extend((1..n0).rev().map(|i| (i, n1 - 1)));
        walk.extend((1..n1).rev().map(|j| (0, j)));
        walk.extend((0..n0 - 1).map(|i| (i, 0)));

        let len0 = self.hi[0] - self.lo[0];
        let len1 = self.hi[1] - self.lo[1];
        let perimeter = 2.0 * (len0 + len1);
        let offset = 0.5 * len1;
        let mid = [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])];

        let mut arc = 0.0;
        let mut nodes = Vec::with_capacity(walk.len());
        for (k, &(i, j)) in walk.iter().enumerate() {
            let node = self.index(&[i, j]);
            let mut normal = [0.0; 3];
            if i == 0 {
                normal[0] -= 1.0;
            }
            if i == n0 - 1 {
                normal[0] += 1.0;
            }
            if j == 0 {
                normal[1] -= 1.0;
            }
            if j == n1 - 1 {
                normal[1] += 1.0;
            }
            normalize(&mut normal);
            let (ni, _) = walk[(k + 1) % walk.len()];
            let step = if ni != i { h0 } else { h1 };
            let (pi, _) = walk[(k + walk.len() - 1) % walk.len()];
            let back = if pi != i { h0 } else { h1 };
            let x = self.coords(node);
            let s = (arc - offset).rem_euclid(perimeter);
            let polar = (x[1] - mid[1]).atan2(x[0] - mid[0]).rem_euclid(TAU);
            nodes.push(BoundaryNode {
                node,
                normal,
                weight: 0.5 * (step + back),
                param: BoundaryParam::Curve {
                    arclength: s,
                    angle: TAU * s / perimeter,
                    polar,
                },
            });
            arc += step;
        }
        // Start the ordering at the smallest arclength so angles increase.
        let start = nodes
            .iter()
            .enumerate()
            .min_by(|a, b| curve_arclength(a.1).total_cmp(&curve_arclength(b.1)))
            .map(|(k, _)| k)
            .unwrap_or(0);
        nodes.rotate_left(start);
        self.boundary = nodes;
        self.perimeter = perimeter;
    }

    fn build_surface(&mut self) {
        let n = self.counts;
        let h = self.spacing;
        for node in 0..self.node_count() {
            let idx = self.multi_index(node);
            let mut normal = [0.0; 3];
            let mut weight = 0.0;
            let mut face = None;
            for a in 0..3 {
                let at_lo = idx[a] == 0;
                let at_hi = idx[a] == n[a] - 1;
                if !(at_lo || at_hi) {
                    continue;
                }
                normal[a] += if at_lo { -1.0 } else { 1.0 };
                // Trapezoid area weight of this node on the face normal to `a`.
                let mut w = 1.0;
                for t in (0..3).filter(|&t| t != a) {
                    let end = idx[t] == 0 || idx[t] == n[t] - 1;
                    w *= if end { 0.5 * h[t] } else { h[t] };
                }
                weight += w;
                let id = (2 * a + usize::from(at_hi)) as u8;
                face = Some(face.map_or(id, |f: u8| f.min(id)));
            }
            let Some(face) = face else { continue };
            normalize(&mut normal);
            let x = self.coords(node);
            let a = (face / 2) as usize;
            let others: Vec<usize> = (0..3).filter(|&t| t != a).collect();
            self.boundary.push(BoundaryNode {
                node,
                normal,
                weight,
                param: BoundaryParam::Face {
                    face,
                    coords: [x[others[0]], x[others[1]]],
                },
            });
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Node counts of the active axes.
    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    /// Node counts padded with ones to three axes.
    pub fn counts3(&self) -> [usize; 3] {
        self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Linear index offsets of one step along each axis.
    pub fn strides(&self) -> [usize; 3] {
        [self.counts[1] * self.counts[2], self.counts[2], 1]
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        let s = self.strides();
        multi.iter().zip(s).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let s = self.strides();
        [node / s[0], (node / s[1]) % self.counts[1], node % self.counts[2]]
    }

    /// Physical coordinates of a node (unused axes are zero).
    pub fn coords(&self, node: usize) -> [f64; 3] {
        let m = self.multi_index(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.lo[a] + m[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Ordered boundary nodes (counter-clockwise in 2D).
    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// Position of `node` in the boundary ordering, if it is a boundary node.
    pub fn boundary_position(&self, node: usize) -> Option<usize> {
        match self.boundary_slot[node] {
            NOT_BOUNDARY => None,
            k => Some(k),
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node] != NOT_BOUNDARY
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| !self.is_boundary(k))
    }

    /// Perimeter length of a 2D grid (zero in 3D).
    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Euclidean distance from a node to the box boundary.
    pub fn distance_to_boundary(&self, node: usize) -> f64 {
        let x = self.coords(node);
        (0..self.dim)
            .map(|a| (x[a] - self.lo[a]).min(self.hi[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Trapezoid volume weight of a node (area in 2D).
    pub fn volume_weight(&self, node: usize) -> f64 {
        let m = self.multi_index(node);
        (0..self.dim)
            .map(|a| {
                let end = m[a] == 0 || m[a] == self.counts[a] - 1;
                if end {
                    0.5 * self.spacing[a]
                } else {
                    self.spacing[a]
                }
            })
            .product()
    }

    /// Index of the node nearest to a physical point.
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let mut m = [0usize; 3];
        for a in 0..self.dim {
            let t = ((point[a] - self.lo[a]) / self.spacing[a]).round();
            m[a] = t.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
        }
        self.index(&m[..self.dim])
    }
}

fn curve_arclength(b: &BoundaryNode) -> f64 {
    match b.param {
        BoundaryParam::Curve { arclength, .. } => arclength,
        BoundaryParam::Face { .. } => 0.0,
    }
}

fn normalize(v: &mut [f64; 3]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Real values attached to every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    counts: [usize; 3],
    dim: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            counts: grid.counts3(),
            dim: grid.dim(),
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::shape(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("field values must be finite"));
        }
        Ok(Self {
            counts: grid.counts3(),
            dim: grid.dim(),
            values,
        })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|k| f(grid.coords(k))).collect();
        Self {
            counts: grid.counts3(),
            dim: grid.dim(),
            values,
        }
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self {
            counts: grid.counts3(),
            dim: grid.dim(),
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        if self.dim != grid.dim() || self.counts != grid.counts3() {
            return Err(Error::shape(format!(
                "field of shape {:?} does not match grid {:?}",
                self.counts(),
                grid.counts()
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the largest value (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        best
    }
}

/// Geometric building blocks of an inclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    /// `angle` rotates the major axis counter-clockwise from `x1`.
    Ellipse {
        center: [f64; 2],
        semi_major: f64,
        semi_minor: f64,
        angle: f64,
    },
    /// Rotation `R = Rz(angles[2]) · Ry(angles[1]) · Rx(angles[0])`.
    Ellipsoid {
        center: [f64; 3],
        semi_axes: [f64; 3],
        angles: [f64; 3],
    },
    /// Simple polygon, vertices in either orientation.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Axis-aligned rectangular ring: outer box minus inner box.
    RectRing {
        center: [f64; 2],
        outer: [f64; 2],
        inner: [f64; 2],
    },
    /// Torus around the `x3` axis.
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
    },
}

impl Primitive {
    pub fn dim(&self) -> usize {
        match self {
            Primitive::Ellipsoid { .. } | Primitive::Torus { .. } => 3,
            _ => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let valid = match self {
            Primitive::Circle { center, radius } => ok(center) && radius.is_finite() && *radius > 0.0,
            Primitive::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => {
                ok(center)
                    && ok(&[*semi_major, *semi_minor, *angle])
                    && *semi_minor > 0.0
                    && semi_major >= semi_minor
            }
            Primitive::Ellipsoid {
                center,
                semi_axes,
                angles,
            } => ok(center) && ok(angles) && ok(semi_axes) && semi_axes.iter().all(|&a| a > 0.0),
            Primitive::Polygon { vertices } => {
                vertices.len() >= 3 && vertices.iter().all(|v| ok(v))
            }
            Primitive::RectRing {
                center,
                outer,
                inner,
            } => {
                ok(center)
                    && ok(outer)
                    && ok(inner)
                    && inner.iter().all(|&v| v > 0.0)
                    && outer[0] > inner[0]
                    && outer[1] > inner[1]
            }
            Primitive::Torus {
                center,
                major,
                minor,
            } => ok(center) && major.is_finite() && *minor > 0.0 && major > minor,
        };
        if valid {
            Ok(())
        } else {
            Err(Error::param(format!("invalid primitive {self:?}")))
        }
    }

    /// Signed level-set value: negative inside, zero on the interface.
    pub fn level_set(&self, x: &[f64]) -> f64 {
        match self {
            Primitive::Circle { center, radius } => {
                ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt() - radius
            }
            Primitive::Ellipse {
                center,
                semi_major,
                semi_minor,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / semi_major).powi(2) + (v / semi_minor).powi(2) - 1.0
            }
            Primitive::Ellipsoid {
                center,
                semi_axes,
                angles,
            } => {
                let r = rotation_zyx(angles);
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                // Local coordinates: Rᵀ d.
                (0..3)
                    .map(|k| {
                        let local = r[0][k] * d[0] + r[1][k] * d[1] + r[2][k] * d[2];
                        (local / semi_axes[k]).powi(2)
                    })
                    .sum::<f64>()
                    - 1.0
            }
            Primitive::Polygon { vertices } => polygon_signed_distance(vertices, [x[0], x[1]]),
            Primitive::RectRing {
                center,
                outer,
                inner,
            } => {
                let p = [x[0] - center[0], x[1] - center[1]];
                box_signed_distance(p, *outer).max(-box_signed_distance(p, *inner))
            }
            Primitive::Torus {
                center,
                major,
                minor,
            } => {
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                let q = (d[0] * d[0] + d[1] * d[1]).sqrt() - major;
                (q * q + d[2] * d[2]).sqrt() - minor
            }
        }
    }
}

fn rotation_zyx(a: &[f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

fn box_signed_distance(p: [f64; 2], half: [f64; 2]) -> f64 {
    let dx = p[0].abs() - half[0];
    let dy = p[1].abs() - half[1];
    let outside = (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
    outside + dx.max(dy).min(0.0)
}

fn polygon_signed_distance(v: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let mut dist2 = f64::INFINITY;
    let mut inside = false;
    let n = v.len();
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let e = [b[0] - a[0], b[1] - a[1]];
        let w = [p[0] - a[0], p[1] - a[1]];
        let t = ((w[0] * e[0] + w[1] * e[1]) / (e[0] * e[0] + e[1] * e[1])).clamp(0.0, 1.0);
        let d = [w[0] - e[0] * t, w[1] - e[1] * t];
        dist2 = dist2.min(d[0] * d[0] + d[1] * d[1]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xc = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < xc {
                inside = !inside;
            }
        }
    }
    let d = dist2.sqrt();
    if inside {
        -d
    } else {
        d
    }
}

/// A union of primitives together with the background and inclusion
/// absorption values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionSet {
    primitives: Vec<Primitive>,
    mu0: f64,
    mu1: f64,
}

impl InclusionSet {
    pub fn new(primitives: Vec<Primitive>, mu0: f64, mu1: f64) -> Result<Self> {
        if !(mu0.is_finite() && mu1.is_finite()) || mu0 < 0.0 || mu1 < 0.0 {
            return Err(Error::param("absorption values must be finite and nonnegative"));
        }
        if mu0 == mu1 {
            return Err(Error::param("inclusion and background absorption must differ"));
        }
        for p in &primitives {
            p.validate()?;
        }
        if let Some(first) = primitives.first() {
            if primitives.iter().any(|p| p.dim() != first.dim()) {
                return Err(Error::param("primitives of mixed dimension"));
            }
        }
        Ok(Self {
            primitives,
            mu0,
            mu1,
        })
    }

    pub fn empty(mu0: f64, mu1: f64) -> Result<Self> {
        Self::new(Vec::new(), mu0, mu1)
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    /// The same shapes with other absorption values.
    pub fn with_contrast(&self, mu0: f64, mu1: f64) -> Result<Self> {
        Self::new(self.primitives.clone(), mu0, mu1)
    }

    pub fn push(&mut self, p: Primitive) -> Result<()> {
        p.validate()?;
        self.primitives.push(p);
        Ok(())
    }

    /// Reflection across the `x1 = 0` axis (2D shapes only).
    pub fn reflect_x1(&self) -> Result<Self> {
        let prims = self
            .primitives
            .iter()
            .map(|p| match p {
                Primitive::Circle { center, radius } => Ok(Primitive::Circle {
                    center: [-center[0], center[1]],
                    radius: *radius,
                }),
                Primitive::Ellipse {
                    center,
                    semi_major,
                    semi_minor,
                    angle,
                } => Ok(Primitive::Ellipse {
                    center: [-center[0], center[1]],
                    semi_major: *semi_major,
                    semi_minor: *semi_minor,
                    angle: PI - angle,
                }),
                Primitive::Polygon { vertices } => Ok(Primitive::Polygon {
                    vertices: vertices.iter().map(|v| [-v[0], v[1]]).collect(),
                }),
                Primitive::RectRing {
                    center,
                    outer,
                    inner,
                } => Ok(Primitive::RectRing {
                    center: [-center[0], center[1]],
                    outer: *outer,
                    inner: *inner,
                }),
                _ => Err(Error::param("reflection is only defined for 2D primitives")),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(prims, self.mu0, self.mu1)
    }
}

/// `Γ(x) = min_i Γ_i(x)`; `+∞` for an empty set.
pub fn level_set(incl: &InclusionSet, point: &[f64]) -> f64 {
    incl.primitives
        .iter()
        .map(|p| p.level_set(point))
        .fold(f64::INFINITY, f64::min)
}

/// Indicator of the inclusion on the grid nodes: 1 where `Γ < 0`, else 0.
pub fn rasterize_mask(incl: &InclusionSet, grid: &Grid) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        if level_set(incl, &x[..grid.dim()]) < 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Random inclusion families used to generate training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Circles2d,
    Ellipses2d,
    Ellipsoids3d,
}

impl Scenario {
    pub fn dim(self) -> usize {
        match self {
            Scenario::Ellipsoids3d => 3,
            _ => 2,
        }
    }

    /// Number of primitives drawn per sample.
    pub fn default_count(self) -> usize {
        match self {
            Scenario::Circles2d => 5,
            Scenario::Ellipses2d => 4,
            Scenario::Ellipsoids3d => 2,
        }
    }

    /// Identifier stored in dataset headers.
    pub fn id(self) -> u32 {
        match self {
            Scenario::Circles2d => 1,
            Scenario::Ellipses2d => 2,
            Scenario::Ellipsoids3d => 3,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Scenario::Circles2d),
            2 => Ok(Scenario::Ellipses2d),
            3 => Ok(Scenario::Ellipsoids3d),
            _ => Err(Error::param(format!("unknown scenario id {id}"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Circles2d => "circles2d",
            Scenario::Ellipses2d => "ellipses2d",
            Scenario::Ellipsoids3d => "ellipsoids3d",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circles2d" => Ok(Scenario::Circles2d),
            "ellipses2d" => Ok(Scenario::Ellipses2d),
            "ellipsoids3d" => Ok(Scenario::Ellipsoids3d),
            other => Err(Error::param(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Knobs for the number of primitives per sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingOptions {
    /// Overrides the scenario's primitive count.
    pub count: Option<usize>,
    /// Draw the count uniformly from `1..=count` instead of using it exactly.
    pub vary_count: bool,
}

/// Draws a random inclusion set with the default contrast `μ0 = 0`, `μ1 = 50`.
pub fn sample_inclusions(scenario: Scenario, seed: u64) -> InclusionSet {
    sample_inclusions_with(scenario, seed, SamplingOptions::default(), 0.0, 50.0)
        .expect("default contrast is valid")
}

pub fn sample_inclusions_with(
    scenario: Scenario,
    seed: u64,
    opts: SamplingOptions,
    mu0: f64,
    mu1: f64,
) -> Result<InclusionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = opts.count.unwrap_or(scenario.default_count());
    if max == 0 {
        return Err(Error::param("primitive count must be positive"));
    }
    let count = if opts.vary_count {
        rng.random_range(1..=max)
    } else {
        max
    };
    let prims = (0..count)
        .map(|_| match scenario {
            Scenario::Circles2d => Primitive::Circle {
                center: [rng.random_range(-0.7..=0.7), rng.random_range(-0.7..=0.7)],
                radius: rng.random_range(0.2..=0.4),
            },
            Scenario::Ellipses2d => {
                let long_axis: f64 = rng.random_range(0.2..=0.6);
                let ecc: f64 = rng.random_range(0.0..=0.9);
                let center = [rng.random_range(-0.7..=0.7), rng.random_range(-0.7..=0.7)];
                let angle = rng.random_range(0.0..PI);
                let a = 0.5 * long_axis;
                Primitive::Ellipse {
                    center,
                    semi_major: a,
                    semi_minor: a * (1.0 - ecc * ecc).sqrt(),
                    angle,
                }
            }
            Scenario::Ellipsoids3d => {
                let semi_axes = [
                    rng.random_range(0.4..=0.6),
                    rng.random_range(0.4..=0.6),
                    rng.random_range(0.4..=0.6),
                ];
                let angles = [
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.0..TAU),
                ];
                let center = [
                    rng.random_range(-0.4..=0.4),
                    rng.random_range(-0.4..=0.4),
                    rng.random_range(-0.4..=0.4),
                ];
                Primitive::Ellipsoid {
                    center,
                    semi_axes,
                    angles,
                }
            }
        })
        .collect();
    InclusionSet::new(prims, mu0, mu1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(c: [f64; 2], r: f64) -> Primitive {
        Primitive::Circle {
            center: c,
            radius: r,
        }
    }

    #[test]
    fn smallest_grid() {
        let g = Grid::square(3).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.boundary_len(), 8);
        assert_eq!(g.spacing(), &[1.0, 1.0]);
        assert_eq!(g.interior_nodes().collect::<Vec<_>>(), vec![4]);
    }

    #[test]
    fn mesh_and_perimeter_count() {
        let g = Grid::square(101).unwrap();
        assert_eq!(g.node_count(), 101 * 101);
        assert_eq!(g.boundary_len(), 400);
        assert!((g.spacing()[0] - 0.02).abs() < 1e-15);
        let total: f64 = g.boundary().iter().map(|b| b.weight).sum();
        assert!((total - 8.0).abs() < 1e-12);
    }

    #[test]
    fn cube_surface_count() {
        let g = Grid::cube(33).unwrap();
        assert_eq!(g.node_count(), 33 * 33 * 33);
        assert_eq!(g.boundary_len(), 6 * 33 * 33 - 12 * 33 + 8);
        let area: f64 = g.boundary().iter().map(|b| b.weight).sum();
        assert!((area - 24.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::square(2).is_err());
        assert!(Grid::new(&[5, 5], [1.0, -1.0]).is_err());
        assert!(Grid::new(&[5], [-1.0, 1.0]).is_err());
    }

    #[test]
    fn perimeter_is_counter_clockwise_once() {
        for n in [3, 4, 7, 64] {
            let g = Grid::square(n).unwrap();
            let mut seen = std::collections::HashSet::new();
            let mut last = -1.0;
            for b in g.boundary() {
                assert!(seen.insert(b.node));
                let BoundaryParam::Curve { angle, polar, .. } = b.param else {
                    panic!()
                };
                assert!(angle > last, "angles must increase");
                last = angle;
                assert!((0.0..TAU).contains(&polar));
                let norm: f64 = b.normal.iter().map(|x| x * x).sum();
                assert!((norm - 1.0).abs() < 1e-14);
            }
            assert_eq!(seen.len(), 4 * (n - 1));
            // Signed area via the shoelace formula is positive.
            let pts: Vec<[f64; 3]> = g.boundary().iter().map(|b| g.coords(b.node)).collect();
            let area: f64 = (0..pts.len())
                .map(|k| {
                    let a = pts[k];
                    let b = pts[(k + 1) % pts.len()];
                    a[0] * b[1] - b[0] * a[1]
                })
                .sum();
            assert!(area > 0.0);
        }
    }

    #[test]
    fn corner_normal_is_diagonal() {
        let g = Grid::square(5).unwrap();
        let corner = g.index(&[4, 4]);
        let b = &g.boundary()[g.boundary_position(corner).unwrap()];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.normal[0] - s).abs() < 1e-15 && (b.normal[1] - s).abs() < 1e-15);
    }

    #[test]
    fn angle_matches_polar_at_axis_crossings_and_corners() {
        let g = Grid::square(9).unwrap();
        for b in g.boundary() {
            let x = g.coords(b.node);
            let BoundaryParam::Curve { angle, polar, .. } = b.param else {
                panic!()
            };
            if x[0].abs() < 1e-12 || x[1].abs() < 1e-12 || (x[0].abs() - x[1].abs()).abs() < 1e-12 {
                assert!((angle - polar).abs() < 1e-12, "{x:?}");
            }
        }
    }

    #[test]
    fn level_set_examples() {
        let one = InclusionSet::new(vec![circle([0.0, 0.0], 0.3)], 0.0, 50.0).unwrap();
        assert!((level_set(&one, &[0.0, 0.0]) + 0.3).abs() < 1e-15);
        assert!(level_set(&one, &[0.3, 0.0]).abs() < 1e-15);

        let two = InclusionSet::new(
            vec![circle([-0.5, 0.0], 0.2), circle([0.5, 0.0], 0.2)],
            0.0,
            50.0,
        )
        .unwrap();
        let v = level_set(&two, &[0.55, 0.0]);
        assert!((v - (0.05 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn ellipse_and_ellipsoid_signs() {
        let e = Primitive::Ellipse {
            center: [0.0, 0.0],
            semi_major: 0.4,
            semi_minor: 0.2,
            angle: PI / 2.0,
        };
        assert!(e.level_set(&[0.0, 0.35]) < 0.0);
        assert!(e.level_set(&[0.35, 0.0]) > 0.0);
        assert!(e.level_set(&[0.0, 0.4]).abs() < 1e-12);

        let el = Primitive::Ellipsoid {
            center: [0.1, 0.0, 0.0],
            semi_axes: [0.5, 0.4, 0.3],
            angles: [0.3, 1.1, 2.0],
        };
        assert!((el.level_set(&[0.1, 0.0, 0.0]) + 1.0).abs() < 1e-12);
        assert!(el.level_set(&[0.9, 0.9, 0.9]) > 0.0);
    }

    #[test]
    fn special_shapes() {
        let tri = Primitive::Polygon {
            vertices: vec![[-0.5, -0.4], [0.5, -0.4], [0.0, 0.5]],
        };
        assert!(tri.level_set(&[0.0, 0.0]) < 0.0);
        assert!(tri.level_set(&[0.6, 0.6]) > 0.0);
        let ring = Primitive::RectRing {
            center: [0.0, 0.0],
            outer: [0.5, 0.5],
            inner: [0.3, 0.3],
        };
        assert!(ring.level_set(&[0.0, 0.0]) > 0.0);
        assert!(ring.level_set(&[0.4, 0.0]) < 0.0);
        assert!(ring.level_set(&[0.7, 0.0]) > 0.0);
        let torus = Primitive::Torus {
            center: [0.0; 3],
            major: 0.5,
            minor: 0.2,
        };
        assert!(torus.level_set(&[0.5, 0.0, 0.0]) < 0.0);
        assert!(torus.level_set(&[0.0, 0.0, 0.0]) > 0.0);
    }

    #[test]
    fn invalid_inclusions() {
        assert!(InclusionSet::new(vec![circle([0.0, 0.0], 0.0)], 0.0, 1.0).is_err());
        assert!(InclusionSet::new(vec![circle([f64::NAN, 0.0], 0.1)], 0.0, 1.0).is_err());
        assert!(InclusionSet::empty(1.0, 1.0).is_err());
    }

    #[test]
    fn masks() {
        let g = Grid::square(101).unwrap();
        let empty = InclusionSet::empty(0.0, 50.0).unwrap();
        assert!(rasterize_mask(&empty, &g).values().iter().all(|&v| v == 0.0));
        let all = InclusionSet::new(vec![circle([0.0, 0.0], 10.0)], 0.0, 50.0).unwrap();
        assert!(rasterize_mask(&all, &g).values().iter().all(|&v| v == 1.0));

        let c = InclusionSet::new(vec![circle([0.0, 0.0], 0.3)], 0.0, 50.0).unwrap();
        let mask = rasterize_mask(&c, &g);
        let frac = mask.values().iter().sum::<f64>() / g.node_count() as f64;
        let expected = PI * 0.09 / 4.0;
        // One layer of cells along the circumference.
        let layer = 2.0 * PI * 0.3 * 0.02 / 4.0;
        assert!((frac - expected).abs() <= layer, "{frac} vs {expected}");
    }

    #[test]
    fn sampling_ranges_and_determinism() {
        for seed in 0..50 {
            let a = sample_inclusions(Scenario::Circles2d, seed);
            assert_eq!(a, sample_inclusions(Scenario::Circles2d, seed));
            assert_eq!(a.primitives().len(), 5);
            for p in a.primitives() {
                let Primitive::Circle { center, radius } = p else {
                    panic!()
                };
                assert!((0.2..=0.4).contains(radius));
                assert!(center.iter().all(|c| (-0.7..=0.7).contains(c)));
            }

            let e = sample_inclusions(Scenario::Ellipses2d, seed);
            assert_eq!(e.primitives().len(), 4);
            for p in e.primitives() {
                let Primitive::Ellipse {
                    semi_major,
                    semi_minor,
                    ..
                } = p
                else {
                    panic!()
                };
                assert!((0.1..=0.3).contains(semi_major));
                assert!(semi_minor <= semi_major);
                assert!(*semi_minor >= semi_major * (1.0f64 - 0.81).sqrt() - 1e-15);
            }

            let s = sample_inclusions(Scenario::Ellipsoids3d, seed);
            assert_eq!(s.primitives().len(), 2);
            for p in s.primitives() {
                let Primitive::Ellipsoid {
                    center, semi_axes, ..
                } = p
                else {
                    panic!()
                };
                assert!(semi_axes.iter().all(|a| (0.4..=0.6).contains(a)));
                assert!(center.iter().all(|c| (-0.4..=0.4).contains(c)));
            }
        }
    }

    #[test]
    fn count_override() {
        let opts = SamplingOptions {
            count: Some(3),
            vary_count: false,
        };
        let s = sample_inclusions_with(Scenario::Circles2d, 1, opts, 0.0, 50.0).unwrap();
        assert_eq!(s.primitives().len(), 3);
        let opts = SamplingOptions {
            count: Some(4),
            vary_count: true,
        };
        for seed in 0..20 {
            let s = sample_inclusions_with(Scenario::Circles2d, seed, opts, 0.0, 50.0).unwrap();
            assert!((1..=4).contains(&s.primitives().len()));
        }
    }

    #[test]
    fn unknown_scenario() {
        assert!("squares2d".parse::<Scenario>().is_err());
        assert_eq!("ellipses2d".parse::<Scenario>().unwrap(), Scenario::Ellipses2d);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adding_a_primitive_never_raises_level_set(
                seed in 0u64..1000,
                cx in -0.9f64..0.9, cy in -0.9f64..0.9, r in 0.05f64..0.5,
                px in -1.0f64..1.0, py in -1.0f64..1.0,
            ) {
                let base = sample_inclusions(Scenario::Circles2d, seed);
                let mut more = base.clone();
                more.push(circle([cx, cy], r)).unwrap();
                prop_assert!(level_set(&more, &[px, py]) <= level_set(&base, &[px, py]));
            }

            #[test]
            fn mask_is_binary(seed in 0u64..1000) {
                let g = Grid::square(17).unwrap();
                let m = rasterize_mask(&sample_inclusions(Scenario::Ellipses2d, seed), &g);
                prop_assert!(m.values().iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }
}

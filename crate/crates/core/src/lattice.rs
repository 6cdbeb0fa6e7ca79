//! Lattice geometry: the hypercubic bond lattice `Z^d`, the triangular site
//! lattice in axial coordinates, and their finite tori.
//!
//! A triangular point `(x, y)` stands for `x + y·e^{iπ/3}`. The six unit steps
//! are `±(1,0)`, `±(0,1)` and `±(-1,1)`.
//!
//! Neighbor order is fixed everywhere: step `k = 2·axis + s` where `s = 0` is
//! the negative and `s = 1` the positive direction along `axis`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::fmt;
use thiserror::Error;

use crate::rng::mix64;

/// Coordinates are exact for `|coord| <= COORD_BOUND`; every walk or box in
/// this crate stays far below it.
pub const COORD_BOUND: i64 = 1 << 40;

/// Axial step vectors of the triangular lattice, in neighbor order.
pub const TRI_STEPS: [(i64, i64); 6] = [(-1, 0), (1, 0), (0, -1), (0, 1), (1, -1), (-1, 1)];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LatticeError {
    #[error("hypercubic dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("torus side must be even and at least 4, got {0}")]
    InvalidTorusSide(usize),
    #[error("operation requires a torus lattice")]
    NotATorus,
    #[error("point has {got} coordinates, lattice expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("torus has {0} vertices, more than the supported 2^32")]
    TorusTooLarge(u128),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LatticePoint(SmallVec<[i64; 4]>);

impl LatticePoint {
    pub fn new(coords: &[i64]) -> Self {
        LatticePoint(SmallVec::from_slice(coords))
    }

    pub fn origin(dim: usize) -> Self {
        LatticePoint(SmallVec::from_elem(0, dim))
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [i64] {
        &mut self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    /// 64-bit mix of the coordinates; stable across platforms.
    pub fn label(&self) -> u64 {
        coords_label(&self.0, u64::MAX)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Hash of a coordinate list plus a discriminating tag (bond direction, or
/// `u64::MAX` for sites).
pub fn coords_label(coords: &[i64], tag: u64) -> u64 {
    let mut h = mix64(tag ^ 0x9E37_79B9_7F4A_7C15);
    for &c in coords {
        h = mix64(h ^ (c as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Hypercubic(usize),
    Triangular,
}

/// Underlying graph plus an optional torus side length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeKind {
    geometry: Geometry,
    torus: Option<usize>,
}

/// Position of a point relative to the box `B_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BallRegion {
    Interior,
    Boundary,
    Outside,
}

/// Canonical bond of `Z^d`: the edge from `base` to `base + e_direction`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeRef {
    pub base: LatticePoint,
    pub direction: usize,
}

/// A bond traversed from `from` along neighbor step `step`; not canonical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrientedEdge {
    pub from: LatticePoint,
    pub step: usize,
}

/// The object that refreshes: a bond on `Z^d`, a site on the triangular lattice.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Bond(EdgeRef),
    Site(LatticePoint),
}

impl EdgeRef {
    pub fn label(&self) -> u64 {
        coords_label(self.base.coords(), self.direction as u64)
    }

    /// Re-derive the canonical form. Idempotent.
    pub fn canonical(&self, lattice: &LatticeKind) -> EdgeRef {
        EdgeRef {
            base: lattice.wrap(&self.base),
            direction: self.direction,
        }
    }

    pub fn endpoints(&self, lattice: &LatticeKind) -> (LatticePoint, LatticePoint) {
        let other = lattice.neighbor(&self.base, 2 * self.direction + 1);
        (self.base.clone(), other)
    }
}

impl OrientedEdge {
    pub fn canonical(&self, lattice: &LatticeKind) -> EdgeRef {
        let axis = self.step / 2;
        if self.step % 2 == 1 {
            EdgeRef {
                base: lattice.wrap(&self.from),
                direction: axis,
            }
        } else {
            EdgeRef {
                base: lattice.neighbor(&self.from, self.step),
                direction: axis,
            }
        }
    }
}

impl Unit {
    pub fn label(&self) -> u64 {
        match self {
            Unit::Bond(e) => e.label(),
            Unit::Site(v) => v.label(),
        }
    }
}

impl LatticeKind {
    pub fn hypercubic(dim: usize) -> Result<Self, LatticeError> {
        if dim < 2 {
            return Err(LatticeError::InvalidDimension(dim));
        }
        Ok(LatticeKind {
            geometry: Geometry::Hypercubic(dim),
            torus: None,
        })
    }

    pub fn triangular() -> Self {
        LatticeKind {
            geometry: Geometry::Triangular,
            torus: None,
        }
    }

    /// Same lattice wrapped on a torus of side `side` (even, at least 4).
    pub fn with_torus(self, side: usize) -> Result<Self, LatticeError> {
        if side < 4 || side % 2 != 0 {
            return Err(LatticeError::InvalidTorusSide(side));
        }
        Ok(LatticeKind {
            torus: Some(side),
            ..self
        })
    }

    pub fn without_torus(self) -> Self {
        LatticeKind {
            torus: None,
            ..self
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn torus_side(&self) -> Option<usize> {
        self.torus
    }

    pub fn is_triangular(&self) -> bool {
        matches!(self.geometry, Geometry::Triangular)
    }

    pub fn dim(&self) -> usize {
        match self.geometry {
            Geometry::Hypercubic(d) => d,
            Geometry::Triangular => 2,
        }
    }

    pub fn degree(&self) -> usize {
        match self.geometry {
            Geometry::Hypercubic(d) => 2 * d,
            Geometry::Triangular => 6,
        }
    }

    /// Critical probability when known exactly (`Z^2` bond, triangular site).
    pub fn critical_probability(&self) -> Option<f64> {
        match self.geometry {
            Geometry::Hypercubic(2) | Geometry::Triangular => Some(0.5),
            Geometry::Hypercubic(_) => None,
        }
    }

    /// Short human-readable name used in CSV output.
    pub fn name(&self) -> &'static str {
        match self.geometry {
            Geometry::Hypercubic(_) => "hypercubic",
            Geometry::Triangular => "triangular",
        }
    }

    pub fn origin(&self) -> LatticePoint {
        LatticePoint::origin(self.dim())
    }

    pub fn check_point(&self, v: &LatticePoint) -> Result<(), LatticeError> {
        if v.dim() != self.dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: self.dim(),
                got: v.dim(),
            });
        }
        Ok(())
    }

    /// Representative in `[0, L)^d` on a torus; identity otherwise.
    pub fn wrap(&self, v: &LatticePoint) -> LatticePoint {
        let mut w = v.clone();
        self.wrap_in_place(&mut w);
        w
    }

    pub fn wrap_in_place(&self, v: &mut LatticePoint) {
        if let Some(side) = self.torus {
            let l = side as i64;
            for c in v.coords_mut() {
                *c = c.rem_euclid(l);
            }
        }
    }

    /// Move `v` one step along neighbor index `k`.
    #[inline]
    pub fn step_in_place(&self, v: &mut LatticePoint, k: usize) {
        let coords = v.coords_mut();
        match self.geometry {
            Geometry::Hypercubic(_) => {
                let axis = k / 2;
                coords[axis] += if k % 2 == 1 { 1 } else { -1 };
            }
            Geometry::Triangular => {
                let (dx, dy) = TRI_STEPS[k];
                coords[0] += dx;
                coords[1] += dy;
            }
        }
        if let Some(side) = self.torus {
            let l = side as i64;
            for c in coords.iter_mut() {
                if *c < 0 {
                    *c += l;
                } else if *c >= l {
                    *c -= l;
                }
            }
        }
    }

    pub fn neighbor(&self, v: &LatticePoint, k: usize) -> LatticePoint {
        let mut w = v.clone();
        self.step_in_place(&mut w, k);
        w
    }

    /// The unit whose state decides whether step `k` from `v` succeeds.
    pub fn unit_of_step(&self, v: &LatticePoint, k: usize) -> Unit {
        match self.geometry {
            Geometry::Hypercubic(_) => Unit::Bond(
                OrientedEdge {
                    from: v.clone(),
                    step: k,
                }
                .canonical(self),
            ),
            Geometry::Triangular => Unit::Site(self.neighbor(v, k)),
        }
    }

    /// All neighbors of `v` with the unit controlling each step, in neighbor
    /// order.
    pub fn neighbors(&self, v: &LatticePoint) -> Vec<(Unit, LatticePoint)> {
        (0..self.degree())
            .map(|k| (self.unit_of_step(v, k), self.neighbor(v, k)))
            .collect()
    }

    pub fn graph_distance(&self, a: &LatticePoint, b: &LatticePoint) -> u64 {
        let delta: SmallVec<[i64; 4]> = a
            .coords()
            .iter()
            .zip(b.coords())
            .map(|(x, y)| y - x)
            .collect();
        match (self.geometry, self.torus) {
            (Geometry::Hypercubic(_), None) => delta.iter().map(|c| c.unsigned_abs()).sum(),
            (Geometry::Hypercubic(_), Some(side)) => {
                let l = side as i64;
                delta
                    .iter()
                    .map(|c| {
                        let r = c.rem_euclid(l);
                        r.min(l - r) as u64
                    })
                    .sum()
            }
            (Geometry::Triangular, None) => tri_distance(delta[0], delta[1]),
            (Geometry::Triangular, Some(side)) => {
                let l = side as i64;
                let (dx, dy) = (delta[0].rem_euclid(l), delta[1].rem_euclid(l));
                let mut best = u64::MAX;
                for a in -1..=0 {
                    for b in -1..=0 {
                        best = best.min(tri_distance(dx + a * l, dy + b * l));
                    }
                }
                best
            }
        }
    }

    /// Membership in `B_r`, the coordinate box of half-width `r`
    /// (axial box on the triangular lattice).
    pub fn ball_membership(&self, r: u64, v: &LatticePoint) -> BallRegion {
        let r = r as i64;
        let m = v.coords().iter().map(|c| c.abs()).max().unwrap_or(0);
        // Every unit step changes each coordinate by at most one, and the
        // positive unit vectors exist along every axis.
        if m > r {
            BallRegion::Outside
        } else if m == r {
            BallRegion::Boundary
        } else {
            BallRegion::Interior
        }
    }

    /// Squared Euclidean norm of the embedded point.
    pub fn sq_euclidean_norm(&self, v: &LatticePoint) -> f64 {
        let c = v.coords();
        match self.geometry {
            Geometry::Hypercubic(_) => c.iter().map(|&x| (x * x) as f64).sum(),
            Geometry::Triangular => {
                let (x, y) = (c[0], c[1]);
                (x * x + x * y + y * y) as f64
            }
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.geometry {
            Geometry::Hypercubic(d) => write!(f, "Z^{d}")?,
            Geometry::Triangular => write!(f, "triangular")?,
        }
        if let Some(l) = self.torus {
            write!(f, " torus L={l}")?;
        }
        Ok(())
    }
}

#[inline]
fn tri_distance(dx: i64, dy: i64) -> u64 {
    if dx.signum() * dy.signum() >= 0 {
        dx.unsigned_abs() + dy.unsigned_abs()
    } else {
        dx.unsigned_abs().max(dy.unsigned_abs())
    }
}

/// Flat adjacency tables for a torus, used by every dense or per-vertex
/// computation.
///
/// Vertex `v` has coordinates `c_i = (v / L^i) mod L`. Units are bonds
/// `base·d + axis` on `Z^d`, sites (same index as the vertex) on the
/// triangular lattice.
#[derive(Clone, Debug)]
pub struct TorusGraph {
    kind: LatticeKind,
    side: usize,
    n_vertices: usize,
    degree: usize,
    neighbor: Vec<u32>,
    step_unit: Vec<u32>,
    n_units: usize,
}

impl TorusGraph {
    pub fn new(kind: LatticeKind) -> Result<Self, LatticeError> {
        let side = kind.torus_side().ok_or(LatticeError::NotATorus)?;
        let dim = kind.dim();
        let n = (side as u128).pow(dim as u32);
        if n > u32::MAX as u128 {
            return Err(LatticeError::TorusTooLarge(n));
        }
        let n_vertices = n as usize;
        let degree = kind.degree();
        let mut neighbor = Vec::with_capacity(n_vertices * degree);
        let mut step_unit = Vec::with_capacity(n_vertices * degree);
        let mut graph = TorusGraph {
            kind,
            side,
            n_vertices,
            degree,
            neighbor: Vec::new(),
            step_unit: Vec::new(),
            n_units: if kind.is_triangular() {
                n_vertices
            } else {
                n_vertices * dim
            },
        };
        for v in 0..n_vertices {
            let p = graph.point(v);
            for k in 0..degree {
                let w = graph.index(&kind.neighbor(&p, k));
                neighbor.push(w as u32);
                let unit = if kind.is_triangular() {
                    w
                } else if k % 2 == 1 {
                    v * dim + k / 2
                } else {
                    w * dim + k / 2
                };
                step_unit.push(unit as u32);
            }
        }
        graph.neighbor = neighbor;
        graph.step_unit = step_unit;
        Ok(graph)
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn neighbor(&self, v: usize, k: usize) -> usize {
        self.neighbor[v * self.degree + k] as usize
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbor[v * self.degree..(v + 1) * self.degree]
    }

    /// Unit controlling step `k` out of `v`.
    #[inline]
    pub fn step_unit(&self, v: usize, k: usize) -> usize {
        self.step_unit[v * self.degree + k] as usize
    }

    #[inline]
    pub fn step_units(&self, v: usize) -> &[u32] {
        &self.step_unit[v * self.degree..(v + 1) * self.degree]
    }

    /// Endpoints of bond unit `u` (hypercubic only).
    pub fn bond_endpoints(&self, u: usize) -> (usize, usize) {
        let dim = self.kind.dim();
        let base = u / dim;
        let axis = u % dim;
        (base, self.neighbor(base, 2 * axis + 1))
    }

    pub fn point(&self, v: usize) -> LatticePoint {
        let mut coords = SmallVec::<[i64; 4]>::with_capacity(self.kind.dim());
        let mut rest = v;
        for _ in 0..self.kind.dim() {
            coords.push((rest % self.side) as i64);
            rest /= self.side;
        }
        LatticePoint(coords)
    }

    /// Index of a point (wrapped onto the torus first).
    pub fn index(&self, p: &LatticePoint) -> usize {
        let l = self.side as i64;
        p.coords()
            .iter()
            .rev()
            .fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(l) as usize)
    }

    pub fn distance(&self, a: usize, b: usize) -> u64 {
        self.kind.graph_distance(&self.point(a), &self.point(b))
    }
}

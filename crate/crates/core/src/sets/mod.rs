//! Convex sets queried through support functions, and the set algebra built
//! on top of them.

mod boxset;
mod ellipsoid;
mod polytope;
mod vertices;

pub use boxset::BoxSet;
pub use ellipsoid::Ellipsoid;
pub use polytope::Polytope;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::lp;
use crate::serde_mat;

/// Convex hull of a finite point list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VPolytope {
    #[serde(with = "serde_mat::vectors")]
    points: Vec<DVector<f64>>,
    dim: usize,
}

impl VPolytope {
    pub fn new(points: Vec<DVector<f64>>, dim: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(RgError::EmptySet {
                context: "hull of no points".into(),
            });
        }
        for p in &points {
            if p.len() != dim {
                return Err(RgError::DimensionMismatch {
                    context: "hull point",
                    expected: dim,
                    actual: p.len(),
                });
            }
        }
        Ok(VPolytope { points, dim })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self, a: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|p| p.dot(a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Drops duplicate points and points that are convex combinations of
    /// the others.
    pub fn reduced(&self, tol: f64) -> Result<VPolytope> {
        let mut pts: Vec<DVector<f64>> = Vec::with_capacity(self.points.len());
        for p in &self.points {
            if !pts.iter().any(|q| (q - p).amax() <= tol) {
                pts.push(p.clone());
            }
        }
        let mut i = 0;
        while i < pts.len() && pts.len() > 1 {
            let others: Vec<DVector<f64>> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| q.clone())
                .collect();
            if lp::in_convex_hull(&others, &pts[i], tol)? {
                pts.remove(i);
            } else {
                i += 1;
            }
        }
        VPolytope::new(pts, self.dim)
    }

    /// H-representation of a full-dimensional hull, from the vertices of
    /// its polar about the centroid.
    pub fn facets(&self, tol: f64) -> Result<Polytope> {
        let n = self.points.len() as f64;
        let c = self.points.iter().fold(DVector::zeros(self.dim), |acc, p| acc + p) / n;
        let q = DMatrix::from_fn(self.points.len(), self.dim, |i, j| self.points[i][j] - c[j]);
        if crate::numeric::rank(&q, 1e-9 * q.amax().max(1.0)) < self.dim {
            return Err(RgError::Unsupported("halfspace form of a flat hull"));
        }
        let polar = vertices::enumerate(&q, &DVector::from_element(q.nrows(), 1.0), tol)?;
        let g = DMatrix::from_fn(polar.len(), self.dim, |i, j| polar[i][j]);
        let h = DVector::from_fn(polar.len(), |i, _| 1.0 + polar[i].dot(&c));
        Polytope::new(g, h)
    }
}

/// Tagged union of the supported set representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexSet {
    Box(BoxSet),
    Ellipsoid(Ellipsoid),
    Polytope(Polytope),
    Hull(VPolytope),
    /// `{M s : s ∈ set}`, kept lazily.
    Image {
        #[serde(with = "serde_mat::matrix")]
        map: DMatrix<f64>,
        set: Box<ConvexSet>,
    },
    /// Minkowski sum of the terms, kept lazily.
    Sum { terms: Vec<ConvexSet>, dim: usize },
}

impl From<BoxSet> for ConvexSet {
    fn from(b: BoxSet) -> Self {
        ConvexSet::Box(b)
    }
}

impl From<Ellipsoid> for ConvexSet {
    fn from(e: Ellipsoid) -> Self {
        ConvexSet::Ellipsoid(e)
    }
}

impl From<Polytope> for ConvexSet {
    fn from(p: Polytope) -> Self {
        ConvexSet::Polytope(p)
    }
}

impl From<VPolytope> for ConvexSet {
    fn from(v: VPolytope) -> Self {
        ConvexSet::Hull(v)
    }
}

impl ConvexSet {
    /// The singleton `{0}`.
    pub fn origin(dim: usize) -> Self {
        ConvexSet::Box(BoxSet::zero(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box(b) => b.dim(),
            ConvexSet::Ellipsoid(e) => e.dim(),
            ConvexSet::Polytope(p) => p.dim(),
            ConvexSet::Hull(v) => v.dim(),
            ConvexSet::Image { map, .. } => map.nrows(),
            ConvexSet::Sum { dim, .. } => *dim,
        }
    }

    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(RgError::DimensionMismatch {
                context: "support direction",
                expected: self.dim(),
                actual: a.len(),
            });
        }
        match self {
            ConvexSet::Box(b) => b.support(a),
            ConvexSet::Ellipsoid(e) => Ok(e.support(a)),
            ConvexSet::Polytope(p) => p.support(a),
            ConvexSet::Hull(v) => Ok(v.support(a)),
            ConvexSet::Image { map, set } => set.support(&(map.transpose() * a)),
            ConvexSet::Sum { terms, .. } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.support(a)?;
                }
                Ok(s)
            }
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Ok(false);
        }
        match self {
            ConvexSet::Box(b) => Ok(b.contains(x, tol)),
            ConvexSet::Ellipsoid(e) => Ok(e.contains(x, tol)),
            ConvexSet::Polytope(p) => Ok(p.contains(x, tol)),
            ConvexSet::Hull(v) => lp::in_convex_hull(v.points(), x, tol),
            ConvexSet::Image { .. } | ConvexSet::Sum { .. } => {
                let vs = self.vertices(tol)?;
                lp::in_convex_hull(&vs, x, tol)
            }
        }
    }

    /// H-representation, when the variant has one.
    pub fn halfspaces(&self) -> Result<Polytope> {
        match self {
            ConvexSet::Box(b) => Ok(b.to_polytope()),
            ConvexSet::Polytope(p) => Ok(p.clone()),
            ConvexSet::Hull(v) => v.facets(1e-9),
            _ => Err(RgError::Unsupported("halfspace form")),
        }
    }

    /// Points whose convex hull is the set (not necessarily all extreme).
    pub fn vertices(&self, tol: f64) -> Result<Vec<DVector<f64>>> {
        match self {
            ConvexSet::Box(b) => b.corners(),
            ConvexSet::Polytope(p) => p.vertices(tol),
            ConvexSet::Hull(v) => Ok(v.points().to_vec()),
            ConvexSet::Ellipsoid(_) => Err(RgError::Unsupported("vertices of an ellipsoid")),
            ConvexSet::Image { map, set } => {
                Ok(set.vertices(tol)?.iter().map(|v| map * v).collect())
            }
            ConvexSet::Sum { terms, dim } => {
                let mut acc = vec![DVector::zeros(*dim)];
                for t in terms {
                    let vs = t.vertices(tol)?;
                    let mut next = Vec::with_capacity(acc.len() * vs.len());
                    for a in &acc {
                        for v in &vs {
                            next.push(a + v);
                        }
                    }
                    acc = VPolytope::new(next, *dim)?.reduced(tol)?.points;
                }
                Ok(acc)
            }
        }
    }

    /// Whether `-S = S` (within `tol`).
    pub fn is_symmetric(&self, tol: f64) -> Result<bool> {
        match self {
            ConvexSet::Box(b) => Ok(b.is_symmetric(tol)),
            ConvexSet::Ellipsoid(_) => Ok(true),
            ConvexSet::Polytope(p) => {
                for i in 0..p.len() {
                    let n = p.normal(i);
                    if p.support(&(-n))? > p.offsets()[i] + tol {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConvexSet::Hull(v) => {
                for p in v.points() {
                    if !lp::in_convex_hull(v.points(), &(-p), tol)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            ConvexSet::Image { set, .. } => set.is_symmetric(tol),
            ConvexSet::Sum { terms, .. } => {
                for t in terms {
                    if !t.is_symmetric(tol)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    /// `self ⊆ other`. `other` must expose halfspaces (a full-dimensional
    /// hull is converted) or be an ellipsoid.
    pub fn subset_of(&self, other: &ConvexSet, tol: f64) -> Result<bool> {
        if self.dim() != other.dim() {
            return Err(RgError::DimensionMismatch {
                context: "subset test",
                expected: other.dim(),
                actual: self.dim(),
            });
        }
        if let ConvexSet::Ellipsoid(outer) = other {
            let worst = match self {
                ConvexSet::Ellipsoid(inner) => inner.max_quadratic(outer.shape()),
                _ => self
                    .vertices(tol)?
                    .iter()
                    .map(|v| outer.value(v))
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            return Ok(worst <= outer.level() + tol);
        }
        let h = other.halfspaces()?;
        for i in 0..h.len() {
            let n = h.normal(i);
            let scale = n.norm().max(1e-300);
            match self.support(&n) {
                Ok(s) if s <= h.offsets()[i] + tol * scale => {}
                Ok(_) | Err(RgError::Unbounded) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }
}

/// `s1 ⊕ s2`: exact for boxes and vertex-representable operands, lazy
/// otherwise.
pub fn minkowski_sum(s1: &ConvexSet, s2: &ConvexSet, tol: f64) -> Result<ConvexSet> {
    let dim = s1.dim();
    if s2.dim() != dim {
        return Err(RgError::DimensionMismatch {
            context: "Minkowski sum",
            expected: dim,
            actual: s2.dim(),
        });
    }
    match (s1, s2) {
        (ConvexSet::Box(a), ConvexSet::Box(b)) => Ok(ConvexSet::Box(a.minkowski(b))),
        _ if has_vertex_form(s1) && has_vertex_form(s2) => {
            let va = s1.vertices(tol)?;
            let vb = s2.vertices(tol)?;
            let mut pts = Vec::with_capacity(va.len() * vb.len());
            for a in &va {
                for b in &vb {
                    pts.push(a + b);
                }
            }
            Ok(ConvexSet::Hull(VPolytope::new(pts, dim)?.reduced(tol)?))
        }
        _ => Ok(ConvexSet::Sum {
            terms: vec![s1.clone(), s2.clone()],
            dim,
        }),
    }
}

fn has_vertex_form(s: &ConvexSet) -> bool {
    match s {
        ConvexSet::Box(b) => b.is_bounded(),
        ConvexSet::Hull(_) => true,
        ConvexSet::Polytope(p) => p.cached_vertices().is_some(),
        _ => false,
    }
}

/// `s1 ⊖ s2` on the fixed halfspaces of `s1`: every offset moves inward by
/// the support of `s2` along its normal. An empty result is returned as a
/// value; see [`Polytope::is_empty`].
pub fn pontryagin_diff(s1: &ConvexSet, s2: &ConvexSet) -> Result<Polytope> {
    let h = s1.halfspaces()?;
    if s2.dim() != h.dim() {
        return Err(RgError::DimensionMismatch {
            context: "Pontryagin difference",
            expected: h.dim(),
            actual: s2.dim(),
        });
    }
    let mut offsets = h.offsets().clone();
    for i in 0..h.len() {
        offsets[i] -= s2.support(&h.normal(i))?;
    }
    h.with_offsets(offsets)
}

/// `{M s : s ∈ S}`; vertex-representable sets map their vertices.
pub fn affine_image(s: &ConvexSet, m: &DMatrix<f64>) -> Result<ConvexSet> {
    if m.ncols() != s.dim() {
        return Err(RgError::DimensionMismatch {
            context: "affine image",
            expected: s.dim(),
            actual: m.ncols(),
        });
    }
    if has_vertex_form(s) {
        let mut pts: Vec<DVector<f64>> = Vec::new();
        for v in s.vertices(0.0)? {
            let p = m * v;
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        return Ok(ConvexSet::Hull(VPolytope::new(pts, m.nrows())?));
    }
    Ok(ConvexSet::Image {
        map: m.clone(),
        set: Box::new(s.clone()),
    })
}

pub fn prune_redundant(p: &Polytope, tol: f64) -> Result<Polytope> {
    p.prune_redundant(tol)
}

pub fn vertices_of(p: &Polytope, tol: f64) -> Result<Vec<DVector<f64>>> {
    p.vertices(tol)
}

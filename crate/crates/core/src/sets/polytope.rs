use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::lp::{self, LpOutcome};
use crate::serde_mat;

use super::vertices;

/// Halfspace polytope `{x : normals · x ≤ offsets}` with an optional cache
/// of its vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    #[serde(with = "serde_mat::matrix")]
    normals: DMatrix<f64>,
    #[serde(with = "serde_mat::vector")]
    offsets: DVector<f64>,
    #[serde(
        default,
        with = "serde_mat::opt_vectors",
        skip_serializing_if = "Option::is_none"
    )]
    vertices: Option<Vec<DVector<f64>>>,
    /// Ambient dimension, kept explicitly so zero-row polytopes round-trip.
    dim: usize,
}

impl Polytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(RgError::DimensionMismatch {
                context: "polytope offsets",
                expected: normals.nrows(),
                actual: offsets.len(),
            });
        }
        if offsets.iter().any(|o| o.is_nan()) || normals.iter().any(|v| !v.is_finite()) {
            return Err(RgError::InvalidParameter {
                name: "polytope",
                reason: "non-finite data".into(),
            });
        }
        let dim = normals.ncols();
        Ok(Polytope {
            normals,
            offsets,
            vertices: None,
            dim,
        })
    }

    /// The whole space `R^dim` (no rows).
    pub fn universe(dim: usize) -> Self {
        Polytope {
            normals: DMatrix::zeros(0, dim),
            offsets: DVector::zeros(0),
            vertices: None,
            dim,
        }
    }

    /// Attaches a vertex list after checking it against the halfspaces.
    pub fn with_vertices(mut self, vertices: Vec<DVector<f64>>, tol: f64) -> Result<Self> {
        for v in &vertices {
            if v.len() != self.dim {
                return Err(RgError::DimensionMismatch {
                    context: "polytope vertex",
                    expected: self.dim,
                    actual: v.len(),
                });
            }
            if !self.contains(v, tol) {
                return Err(RgError::InvalidParameter {
                    name: "polytope vertices",
                    reason: "vertex violates a halfspace".into(),
                });
            }
        }
        self.vertices = Some(vertices);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty_rows(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn cached_vertices(&self) -> Option<&[DVector<f64>]> {
        self.vertices.as_deref()
    }

    pub fn normal(&self, i: usize) -> DVector<f64> {
        self.normals.row(i).transpose()
    }

    /// Same normals, new offsets; any vertex cache is dropped.
    pub fn with_offsets(&self, offsets: DVector<f64>) -> Result<Self> {
        Polytope::new(self.normals.clone(), offsets)
    }

    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        if a.len() != self.dim {
            return Err(RgError::DimensionMismatch {
                context: "polytope support direction",
                expected: self.dim,
                actual: a.len(),
            });
        }
        if let Some(vs) = &self.vertices {
            return vs
                .iter()
                .map(|v| v.dot(a))
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
                .ok_or(RgError::EmptySet {
                    context: "polytope support".into(),
                });
        }
        match lp::maximize(a, &self.normals, &self.offsets)? {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Unbounded => Err(RgError::Unbounded),
            LpOutcome::Infeasible => Err(RgError::EmptySet {
                context: "polytope support".into(),
            }),
        }
    }

    /// Largest violation `max_i (n_iᵀx − o_i)`; nonpositive inside.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let r = &self.normals * x - &self.offsets;
        r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim && (self.offsets.is_empty() || self.max_violation(x) <= tol)
    }

    pub fn chebyshev_center(&self) -> Result<(DVector<f64>, f64)> {
        lp::chebyshev_center(&self.normals, &self.offsets)
    }

    /// True when no point satisfies every row (within `tol`).
    pub fn is_empty(&self, tol: f64) -> Result<bool> {
        if self.offsets.is_empty() {
            return Ok(false);
        }
        let (_, r) = self.chebyshev_center()?;
        Ok(r < -tol)
    }

    /// Per-coordinate extents; infinite entries mark unbounded directions.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut lo = DVector::zeros(self.dim);
        let mut hi = DVector::zeros(self.dim);
        for k in 0..self.dim {
            let mut e = DVector::zeros(self.dim);
            e[k] = 1.0;
            hi[k] = match lp::maximize(&e, &self.normals, &self.offsets)? {
                LpOutcome::Optimal { value, .. } => value,
                LpOutcome::Unbounded => f64::INFINITY,
                LpOutcome::Infeasible => {
                    return Err(RgError::EmptySet {
                        context: "bounding box".into(),
                    })
                }
            };
            e[k] = -1.0;
            lo[k] = match lp::maximize(&e, &self.normals, &self.offsets)? {
                LpOutcome::Optimal { value, .. } => -value,
                LpOutcome::Unbounded => f64::NEG_INFINITY,
                LpOutcome::Infeasible => {
                    return Err(RgError::EmptySet {
                        context: "bounding box".into(),
                    })
                }
            };
        }
        Ok((lo, hi))
    }

    /// Whether row `i` can be dropped without changing the set.
    pub fn is_row_redundant(&self, i: usize, tol: f64) -> Result<bool> {
        let keep: Vec<usize> = (0..self.len()).filter(|j| *j != i).collect();
        self.row_redundant_among(i, &keep, tol)
    }

    fn row_redundant_among(&self, i: usize, keep: &[usize], tol: f64) -> Result<bool> {
        let normals = self.normals.select_rows(keep.iter());
        let offsets = self.offsets.select_rows(keep.iter());
        let g = self.normal(i);
        let scale = g.norm().max(1e-300);
        match lp::maximize(&g, &normals, &offsets)? {
            LpOutcome::Optimal { value, .. } => Ok(value <= self.offsets[i] + tol * scale),
            LpOutcome::Unbounded => Ok(false),
            LpOutcome::Infeasible => Err(RgError::EmptySet {
                context: "redundancy test".into(),
            }),
        }
    }

    /// Removes rows whose deletion leaves the set unchanged.
    pub fn prune_redundant(&self, tol: f64) -> Result<Polytope> {
        let mut keep: Vec<usize> = (0..self.len())
            .filter(|i| self.normals.row(*i).norm() > 1e-14 || self.offsets[*i] < 0.0)
            .collect();
        let mut idx = 0;
        while idx < keep.len() {
            let i = keep[idx];
            let others: Vec<usize> = keep.iter().cloned().filter(|j| *j != i).collect();
            if self.row_redundant_among(i, &others, tol)? {
                keep.remove(idx);
            } else {
                idx += 1;
            }
        }
        let mut out = Polytope::new(
            self.normals.select_rows(keep.iter()),
            self.offsets.select_rows(keep.iter()),
        )?;
        out.dim = self.dim;
        out.vertices = self.vertices.clone();
        Ok(out)
    }

    /// Extreme points of a bounded polytope.
    pub fn vertices(&self, tol: f64) -> Result<Vec<DVector<f64>>> {
        if let Some(v) = &self.vertices {
            return Ok(v.clone());
        }
        vertices::enumerate(&self.normals, &self.offsets, tol)
    }

    /// Returns a copy carrying its enumerated vertices.
    pub fn with_enumerated_vertices(&self, tol: f64) -> Result<Polytope> {
        let vs = self.vertices(tol)?;
        let mut out = self.clone();
        out.vertices = Some(vs);
        Ok(out)
    }

    /// `{x : normals · x ≤ offsets + delta}`.
    pub fn shifted(&self, delta: &DVector<f64>) -> Result<Polytope> {
        self.with_offsets(&self.offsets + delta)
    }

    pub fn scaled(&self, alpha: f64) -> Result<Polytope> {
        let mut out = self.with_offsets(&self.offsets * alpha)?;
        out.vertices = self
            .vertices
            .as_ref()
            .map(|vs| vs.iter().map(|v| v * alpha).collect());
        Ok(out)
    }

    /// Intersection with another polytope (rows appended).
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if other.dim != self.dim {
            return Err(RgError::DimensionMismatch {
                context: "polytope intersection",
                expected: self.dim,
                actual: other.dim,
            });
        }
        let normals = crate::numeric::vstack(&self.normals, &other.normals);
        let offsets = crate::numeric::concat(&self.offsets, &other.offsets);
        Polytope::new(normals, offsets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn square_with(extra: &[(f64, f64, f64)]) -> Polytope {
        let mut rows = vec![
            (1.0, 0.0, 1.0),
            (-1.0, 0.0, 1.0),
            (0.0, 1.0, 1.0),
            (0.0, -1.0, 1.0),
        ];
        rows.extend_from_slice(extra);
        let normals =
            DMatrix::from_row_iterator(rows.len(), 2, rows.iter().flat_map(|r| [r.0, r.1]));
        let offsets = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
        Polytope::new(normals, offsets).unwrap()
    }

    #[test]
    fn prune_duplicate_face() {
        let p = square_with(&[(1.0, 0.0, 1.0)]);
        assert_eq!(p.prune_redundant(1e-9).unwrap().len(), 4);
    }

    #[test]
    fn prune_slack_faces() {
        let p = square_with(&[
            (1.0, 1.0, 5.0),
            (-1.0, 1.0, 5.0),
            (1.0, -1.0, 5.0),
            (-1.0, -1.0, 5.0),
        ]);
        let q = p.prune_redundant(1e-9).unwrap();
        assert_eq!(q.len(), 4);
        for i in 0..4 {
            assert!(q.normal(i).iter().any(|v| v.abs() == 1.0));
        }
    }

    #[test]
    fn square_vertices() {
        let p = square_with(&[(1.0, 1.0, 2.0)]);
        let vs = p.vertices(1e-9).unwrap();
        assert_eq!(vs.len(), 4);
        assert_relative_eq!(p.support(&DVector::from_vec(vec![1.0, 1.0])).unwrap(), 2.0);
    }

    #[test]
    fn bounding_box_and_emptiness() {
        let p = square_with(&[]);
        let (lo, hi) = p.bounding_box().unwrap();
        assert_relative_eq!(lo[0], -1.0);
        assert_relative_eq!(hi[1], 1.0);
        assert!(!p.is_empty(1e-9).unwrap());
        let q = square_with(&[(1.0, 0.0, -2.0)]);
        assert!(q.is_empty(1e-9).unwrap());
    }
}

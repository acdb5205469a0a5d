use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::serde_mat;

use super::Polytope;

/// Axis-aligned box `{x : lower ≤ x ≤ upper}`. Infinite bounds mark
/// unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRaw", into = "BoxRaw")]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxRaw {
    #[serde(with = "serde_mat::vector")]
    lower: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    upper: DVector<f64>,
}

impl TryFrom<BoxRaw> for BoxSet {
    type Error = RgError;
    fn try_from(raw: BoxRaw) -> Result<Self> {
        BoxSet::new(raw.lower, raw.upper)
    }
}

impl From<BoxSet> for BoxRaw {
    fn from(b: BoxSet) -> Self {
        BoxRaw {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(RgError::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(RgError::InvalidParameter {
                    name: "box",
                    reason: format!("invalid bounds [{l}, {u}]"),
                });
            }
        }
        Ok(BoxSet { lower, upper })
    }

    /// `[-r_i, r_i]` in every coordinate.
    pub fn symmetric(radius: &[f64]) -> Result<Self> {
        let upper = DVector::from_row_slice(radius);
        BoxSet::new(-upper.clone(), upper)
    }

    pub fn zero(dim: usize) -> Self {
        BoxSet {
            lower: DVector::zeros(dim),
            upper: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }

    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        let mut s = 0.0;
        for i in 0..self.dim() {
            let term = if a[i] > 0.0 {
                a[i] * self.upper[i]
            } else if a[i] < 0.0 {
                a[i] * self.lower[i]
            } else {
                0.0
            };
            if !term.is_finite() {
                return Err(RgError::Unbounded);
            }
            s += term;
        }
        Ok(s)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }

    pub fn corners(&self) -> Result<Vec<DVector<f64>>> {
        if !self.is_bounded() {
            return Err(RgError::Unbounded);
        }
        let n = self.dim();
        // Degenerate coordinates contribute a single value.
        let mut out = vec![DVector::zeros(n)];
        for i in 0..n {
            let vals: Vec<f64> = if self.lower[i] == self.upper[i] {
                vec![self.lower[i]]
            } else {
                vec![self.lower[i], self.upper[i]]
            };
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for p in &out {
                for v in &vals {
                    let mut q = p.clone();
                    q[i] = *v;
                    next.push(q);
                }
            }
            out = next;
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim()).all(|i| (self.lower[i] + self.upper[i]).abs() <= tol)
    }

    /// Halfspace form keeping only the finite bounds.
    pub fn to_polytope(&self) -> Polytope {
        let n = self.dim();
        let mut rows = Vec::new();
        let mut offsets = Vec::new();
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                offsets.push(self.upper[i]);
            }
            if self.lower[i].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                offsets.push(-self.lower[i]);
            }
        }
        let normals = DMatrix::from_row_iterator(rows.len(), n, rows.into_iter().flatten());
        Polytope::new(normals, DVector::from_vec(offsets)).expect("box rows are consistent")
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> BoxSet {
        BoxSet {
            lower: crate::numeric::concat(&self.lower, &other.lower),
            upper: crate::numeric::concat(&self.upper, &other.upper),
        }
    }

    pub fn minkowski(&self, other: &BoxSet) -> BoxSet {
        BoxSet {
            lower: &self.lower + &other.lower,
            upper: &self.upper + &other.upper,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_of_square() {
        let b = BoxSet::symmetric(&[1.0, 1.0]).unwrap();
        assert_eq!(b.support(&DVector::from_vec(vec![1.0, 1.0])).unwrap(), 2.0);
        assert_eq!(b.support(&DVector::from_vec(vec![-3.0, 0.0])).unwrap(), 3.0);
    }

    #[test]
    fn unbounded_coordinate() {
        let b = BoxSet::new(
            DVector::from_vec(vec![-1.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![1.0, f64::INFINITY]),
        )
        .unwrap();
        assert!(b.support(&DVector::from_vec(vec![1.0, 0.0])).is_ok());
        assert_eq!(
            b.support(&DVector::from_vec(vec![0.0, 1.0])),
            Err(RgError::Unbounded)
        );
        assert_eq!(b.to_polytope().len(), 2);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(BoxSet::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.0])).is_err());
    }

    #[test]
    fn degenerate_corners() {
        let b = BoxSet::new(
            DVector::from_vec(vec![0.0, 0.0, -0.4]),
            DVector::from_vec(vec![0.0, 0.0, 0.4]),
        )
        .unwrap();
        assert_eq!(b.corners().unwrap().len(), 2);
    }
}

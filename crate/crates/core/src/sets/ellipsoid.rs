use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::numeric;
use crate::serde_mat;

/// `{e : eᵀ P e ≤ level}` with `P` symmetric positive definite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EllipsoidRaw", into = "EllipsoidRaw")]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    level: f64,
    shape_inv: DMatrix<f64>,
}

impl PartialEq for Ellipsoid {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.level == other.level
    }
}

#[derive(Serialize, Deserialize)]
struct EllipsoidRaw {
    #[serde(with = "serde_mat::matrix")]
    shape: DMatrix<f64>,
    level: f64,
}

impl TryFrom<EllipsoidRaw> for Ellipsoid {
    type Error = RgError;
    fn try_from(raw: EllipsoidRaw) -> Result<Self> {
        Ellipsoid::new(raw.shape, raw.level)
    }
}

impl From<Ellipsoid> for EllipsoidRaw {
    fn from(e: Ellipsoid) -> Self {
        EllipsoidRaw {
            shape: e.shape,
            level: e.level,
        }
    }
}

impl Ellipsoid {
    pub fn new(shape: DMatrix<f64>, level: f64) -> Result<Self> {
        if !shape.is_square() {
            return Err(RgError::DimensionMismatch {
                context: "ellipsoid shape",
                expected: shape.nrows(),
                actual: shape.ncols(),
            });
        }
        if !numeric::is_symmetric(&shape, 1e-10) {
            return Err(RgError::InvalidParameter {
                name: "ellipsoid shape",
                reason: "not symmetric".into(),
            });
        }
        if !(level >= 0.0) || !level.is_finite() {
            return Err(RgError::InvalidParameter {
                name: "ellipsoid level",
                reason: format!("must be finite and nonnegative, got {level}"),
            });
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or(RgError::InvalidParameter {
            name: "ellipsoid shape",
            reason: "not positive definite".into(),
        })?;
        let shape_inv = chol.inverse();
        Ok(Ellipsoid {
            shape: sym,
            level,
            shape_inv,
        })
    }

    /// Euclidean ball of the given radius.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        Ellipsoid::new(DMatrix::identity(dim, dim), radius * radius)
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn support(&self, a: &DVector<f64>) -> f64 {
        let q = (a.transpose() * &self.shape_inv * a)[(0, 0)];
        (self.level * q.max(0.0)).sqrt()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.shape * x)[(0, 0)]
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && self.value(x) <= self.level * (1.0 + tol) + tol
    }

    pub fn with_level(&self, level: f64) -> Result<Self> {
        Ellipsoid::new(self.shape.clone(), level)
    }

    /// `max xᵀ other.P x` over this ellipsoid.
    pub fn max_quadratic(&self, other_shape: &DMatrix<f64>) -> f64 {
        let chol = self.shape.clone().cholesky().expect("validated at construction");
        let l_inv = chol
            .l()
            .try_inverse()
            .expect("Cholesky factor of a positive definite matrix is invertible");
        let m = &l_inv * other_shape * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let lmax = m.symmetric_eigenvalues().iter().cloned().fold(f64::MIN, f64::max);
        self.level * lmax
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ball_support() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2), 4.0).unwrap();
        assert_relative_eq!(e.support(&DVector::from_vec(vec![1.0, 0.0])), 2.0);
    }

    #[test]
    fn rejects_indefinite() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(Ellipsoid::new(p, 1.0).is_err());
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(Ellipsoid::new(p, 1.0).is_err());
    }

    #[test]
    fn quadratic_bound() {
        let small = Ellipsoid::new(DMatrix::identity(2, 2) * 4.0, 1.0).unwrap();
        // radius 1/2 ball; max |x|^2 = 1/4
        assert_relative_eq!(
            small.max_quadratic(&DMatrix::identity(2, 2)),
            0.25,
            epsilon = 1e-12
        );
    }
}

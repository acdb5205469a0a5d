//! Shared numeric policy and small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RgError};

/// Tolerances used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericPolicy {
    /// Algebraic identities, residuals and Schur margins.
    pub algebraic: f64,
    /// Geometric predicates: membership, containment, redundancy.
    pub geometric: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        algebraic: 1e-9,
        geometric: 1e-7,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Errors unless every eigenvalue lies strictly inside the unit circle by `tol`.
pub fn ensure_schur(m: &DMatrix<f64>, what: &'static str, tol: f64) -> Result<f64> {
    let radius = spectral_radius(m);
    if radius >= 1.0 - tol {
        return Err(RgError::NotSchur { what, radius });
    }
    Ok(radius)
}

pub fn check_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if m.nrows() != rows {
        return Err(RgError::DimensionMismatch {
            context,
            expected: rows,
            actual: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(RgError::DimensionMismatch {
            context,
            expected: cols,
            actual: m.ncols(),
        });
    }
    Ok(())
}

pub fn check_len(v: &DVector<f64>, len: usize, context: &'static str) -> Result<()> {
    if v.len() != len {
        return Err(RgError::DimensionMismatch {
            context,
            expected: len,
            actual: v.len(),
        });
    }
    Ok(())
}

/// Numerical rank from singular values, relative to the largest one.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * max.max(1.0)).count()
}

/// Stacks two blocks vertically.
pub fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape())
        .copy_from(bottom);
    out
}

/// Stacks two blocks horizontally.
pub fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape())
        .copy_from(right);
    out
}

pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

/// Exact zero-order-hold discretization of `(A, B)` over `period` seconds.
pub fn discretize_zoh(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    period: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    check_shape(a, n, n, "continuous A")?;
    check_shape(b, n, b.ncols(), "continuous B")?;
    if period.is_nan() || period <= 0.0 {
        return Err(RgError::InvalidParameter {
            name: "sample_period",
            reason: format!("must be positive, got {period}"),
        });
    }
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * period));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * period));
    let e = aug.exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() <= tol * (1.0 + m.abs().max())
}

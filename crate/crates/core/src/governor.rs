//! The online update `v_n = v_{n−1} + κ* (r_n − v_{n−1})`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::admissible::{AdmissibleSequence, AdmissibleSet};
use crate::error::{Result, RgError};
use crate::numeric::NumericPolicy;
use crate::serde_mat;
use crate::sets::Polytope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernorState {
    #[serde(with = "serde_mat::vector")]
    pub v_prev: DVector<f64>,
    pub n: usize,
}

impl GovernorState {
    pub fn new(v0: DVector<f64>) -> Self {
        GovernorState { v_prev: v0, n: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernorOutcome {
    pub kappa_star: f64,
    #[serde(with = "serde_mat::vector")]
    pub v_applied: DVector<f64>,
    pub binding_row: Option<usize>,
    pub feasible: bool,
}

/// Largest `κ ∈ [0, 1]` keeping `(v_prev + κ Δ, x̂)` in `polytope`, by a
/// line search over its rows.
pub fn kappa_on(polytope: &Polytope, n_v: usize, v_prev: &DVector<f64>, x_hat: &DVector<f64>, r: &DVector<f64>) -> GovernorOutcome {
    let tol = NumericPolicy::DEFAULT.geometric;
    let delta = r - v_prev;
    let g = polytope.normals();
    let h = polytope.offsets();
    let gv = g.columns(0, n_v);
    let gx = g.columns(n_v, g.ncols() - n_v);
    let slack = h - &gv * v_prev - &gx * x_hat;
    let rate = &gv * &delta;
    let feasible = slack.iter().all(|s| *s >= -tol);
    if !feasible {
        return GovernorOutcome {
            kappa_star: 0.0,
            v_applied: v_prev.clone(),
            binding_row: None,
            feasible,
        };
    }
    if delta.amax() == 0.0 {
        return GovernorOutcome {
            kappa_star: 1.0,
            v_applied: v_prev.clone(),
            binding_row: None,
            feasible,
        };
    }
    let mut kappa = 1.0;
    let mut binding = None;
    for i in 0..slack.len() {
        if rate[i] > 0.0 {
            let k = slack[i].max(0.0) / rate[i];
            if k < kappa {
                kappa = k;
                binding = Some(i);
            }
        }
    }
    let v_applied = if kappa == 1.0 { r.clone() } else { v_prev + delta * kappa };
    GovernorOutcome {
        kappa_star: kappa,
        v_applied,
        binding_row: binding,
        feasible,
    }
}

pub fn kappa_max(admissible: &AdmissibleSet, v_prev: &DVector<f64>, x_hat: &DVector<f64>, r: &DVector<f64>) -> GovernorOutcome {
    kappa_on(&admissible.polytope, admissible.n_v, v_prev, x_hat, r)
}

/// One governor update using `Õ∞,min(n, n̄)`. An infeasible start is an
/// error carrying the step index.
pub fn governor_step(
    state: &GovernorState,
    seq: &AdmissibleSequence,
    x_hat: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<(GovernorState, GovernorOutcome)> {
    let out = kappa_max(seq.set(state.n), &state.v_prev, x_hat, r);
    if !out.feasible {
        return Err(RgError::GovernorInfeasible { step: state.n });
    }
    Ok((
        GovernorState {
            v_prev: out.v_applied.clone(),
            n: state.n + 1,
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_row_halfway() {
        let p = Polytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[1.0])).unwrap();
        let o = kappa_on(&p, 1, &dv(&[0.0]), &dv(&[0.0]), &dv(&[2.0]));
        assert_eq!(o.kappa_star, 0.5);
        assert_eq!(o.v_applied, dv(&[1.0]));
        assert_eq!(o.binding_row, Some(0));
        assert!(o.feasible);
    }

    #[test]
    fn admissible_reference_is_taken() {
        let p = Polytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[5.0])).unwrap();
        let o = kappa_on(&p, 1, &dv(&[0.0]), &dv(&[0.0]), &dv(&[2.0]));
        assert_eq!(o.kappa_star, 1.0);
        assert_eq!(o.v_applied, dv(&[2.0]));
        assert_eq!(o.binding_row, None);
    }

    #[test]
    fn zero_step_is_kept() {
        let p = Polytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[1.0])).unwrap();
        let o = kappa_on(&p, 1, &dv(&[0.7]), &dv(&[0.0]), &dv(&[0.7]));
        assert_eq!(o.kappa_star, 1.0);
        assert_eq!(o.v_applied, dv(&[0.7]));
    }

    #[test]
    fn infeasible_start_reported() {
        let p = Polytope::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), dv(&[1.0])).unwrap();
        let o = kappa_on(&p, 1, &dv(&[0.0]), &dv(&[2.0]), &dv(&[0.0]));
        assert!(!o.feasible);
        assert_eq!(o.kappa_star, 0.0);
    }

    #[test]
    fn lowest_index_wins_ties() {
        let p = Polytope::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]), dv(&[1.0, 2.0])).unwrap();
        let o = kappa_on(&p, 1, &dv(&[0.0]), &dv(&[0.0]), &dv(&[4.0]));
        assert_eq!(o.kappa_star, 0.25);
        assert_eq!(o.binding_row, Some(0));
    }
}

//! Property checks over precomputed artifacts: Monte Carlo containment,
//! operator identities and set monotonicity.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admissible::{self, AdmissibleSequence, HOperators};
use crate::bounding::BoundingSequence;
use crate::error::Result;
use crate::model::{ObserverModel, PredictionModel};
use crate::numeric::NumericPolicy;
use crate::sampling;
use crate::sets::ConvexSet;
use crate::sim::SimTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub trajectories: usize,
    pub steps: usize,
    pub escapes: usize,
    /// `(trajectory, step)` of the first escape.
    pub first_escape: Option<(usize, usize)>,
}

/// Random extreme point most of the time, interior point otherwise.
fn draw<R: Rng + ?Sized>(set: &ConvexSet, rng: &mut R) -> Result<DVector<f64>> {
    if rng.random::<f64>() < 0.8 {
        sampling::sample_boundary(set, rng)
    } else {
        sampling::sample_set(set, rng)
    }
}

fn set_tol(set: &ConvexSet) -> f64 {
    match set {
        ConvexSet::Polytope(p) => 1e-9 * (1.0 + p.offsets().amax()),
        _ => 1e-9,
    }
}

/// Simulates `e_{k+1} = Ā e_k + B̄ w̃_k` from `e_0 ∈ E0` and counts the
/// steps where `e_k ∉ Ω_k`.
pub fn monte_carlo_containment(
    observer: &ObserverModel,
    bounding: &BoundingSequence,
    e0: &ConvexSet,
    w_tilde: &ConvexSet,
    trajectories: usize,
    steps: usize,
    seed: u64,
) -> Result<ContainmentReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tols: Vec<f64> = (0..=bounding.n_bar).map(|k| set_tol(bounding.omega(k))).collect();
    let mut escapes = 0;
    let mut first = None;
    for t in 0..trajectories {
        let mut e = draw(e0, &mut rng)?;
        // a fixed rate vertex for a whole run pushes the error furthest
        let hold = rng.random::<bool>();
        let held = draw(w_tilde, &mut rng)?;
        for k in 0..steps {
            let omega = bounding.omega(k);
            if !omega.contains(&e, tols[k.min(bounding.n_bar)])? {
                escapes += 1;
                first.get_or_insert((t, k));
            }
            let dw = if hold { held.clone() } else { draw(w_tilde, &mut rng)? };
            e = observer.error_step(&e, &dw);
        }
    }
    Ok(ContainmentReport {
        trajectories,
        steps,
        escapes,
        first_escape: first,
    })
}

/// Steps of a trace whose realized error leaves its bounding set.
pub fn trace_containment(trace: &SimTrace, bounding: &BoundingSequence) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for r in &trace.records {
        let omega = bounding.omega(r.n);
        if !omega.contains(&r.e, set_tol(omega))? {
            out.push(r.n);
        }
    }
    Ok(out)
}

/// Largest deviation in `Hx(k+1) = A Hx(k) + B`, `Hy(k) = D + C Hx(k)`
/// and `Hx(k) → Hx∞` over `k ≤ steps`.
pub fn telescoping_residual(pred: &PredictionModel, steps: usize) -> Result<f64> {
    let ops = HOperators::new(pred)?;
    let mut worst: f64 = 0.0;
    let mut prev = ops.hx(0);
    worst = worst.max(prev.amax());
    for k in 1..=steps {
        let hx = ops.hx(k);
        let step = &pred.a_cl * &prev + &pred.b_cl;
        worst = worst.max((&hx - step).amax());
        let hy = &pred.d_cl + &pred.c_cl * &hx;
        worst = worst.max((ops.hy(k) - hy).amax());
        prev = hx;
    }
    let tail = (&ops.hx_inf - pred.a_cl.pow(steps as u32) * &ops.hx_inf - &prev).amax();
    Ok(worst.max(tail))
}

/// First `n < upto` with `Ω_{n+1} ⊄ Ω_n`.
pub fn first_non_nested_pair(bounding: &BoundingSequence, upto: usize) -> Result<Option<usize>> {
    let tol = NumericPolicy::DEFAULT.geometric;
    for n in 0..upto {
        if !bounding.omega(n + 1).subset_of(bounding.omega(n), tol)? {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sample counts for [`verify`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyBudget {
    pub trajectories: usize,
    pub audit_samples: usize,
    pub seed: u64,
}

impl Default for VerifyBudget {
    fn default() -> Self {
        VerifyBudget {
            trajectories: 200,
            audit_samples: 2000,
            seed: 0,
        }
    }
}

pub fn verify(
    observer: &ObserverModel,
    pred: &PredictionModel,
    bounding: &BoundingSequence,
    seq: &AdmissibleSequence,
    e0: &ConvexSet,
    w_tilde: &ConvexSet,
    budget: VerifyBudget,
) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let steps = 3 * bounding.n_bar.max(1);
    let mc = monte_carlo_containment(observer, bounding, e0, w_tilde, budget.trajectories, steps, budget.seed)?;
    checks.push(CheckResult {
        name: "error_containment".into(),
        passed: mc.escapes == 0,
        detail: format!("{} trajectories x {} steps, {} escapes", mc.trajectories, mc.steps, mc.escapes),
    });
    let audit = admissible::invariance_audit(seq, pred, bounding, budget.audit_samples, budget.seed)?;
    checks.push(CheckResult {
        name: "invariance_audit".into(),
        passed: audit.failures == 0,
        detail: format!(
            "{} samples, {} failures, worst violation {:e}",
            audit.samples, audit.failures, audit.worst_violation
        ),
    });
    let k_max = seq.sets.iter().map(|s| s.k_star).max().unwrap_or(0);
    let residual = telescoping_residual(pred, k_max + 1)?;
    checks.push(CheckResult {
        name: "h_operator_telescoping".into(),
        passed: residual <= 1e-8,
        detail: format!("max residual {residual:e} over k <= {}", k_max + 1),
    });
    let tol = NumericPolicy::DEFAULT.geometric;
    let mut nested = true;
    for w in seq.steady_state.sets.windows(2) {
        if (w[0].offsets() - w[1].offsets()).max() > tol {
            let (a, b): (ConvexSet, ConvexSet) = (w[0].clone().into(), w[1].clone().into());
            if !a.subset_of(&b, tol)? {
                nested = false;
                break;
            }
        }
    }
    checks.push(CheckResult {
        name: "steady_state_monotone".into(),
        passed: nested,
        detail: if seq.steady_state.adjusted {
            "nested after suffix-minimum adjustment".into()
        } else {
            "nested as built".into()
        },
    });
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounding::BoundingMethod;
    use crate::scenario::{Precomputed, Scenario, System};
    use crate::sets::BoxSet;
    use crate::sim::{self, ReferenceSignal};

    fn spring_damper() -> (Scenario, System, Precomputed) {
        let sc = Scenario::bundled("spring_damper").unwrap();
        let sys = sc.build_system().unwrap();
        let pre = sc.precompute(&sys, BoundingMethod::Polyhedral, 0).unwrap();
        (sc, sys, pre)
    }

    #[test]
    fn containment_holds_for_design_sets_and_breaks_for_larger_e0() {
        let (sc, sys, pre) = spring_damper();
        let cons = &sc.constraints;
        let ok = monte_carlo_containment(&sys.observer, &pre.bounding, &cons.e0, &cons.w_tilde, 50, 100, 1).unwrap();
        assert_eq!(ok.escapes, 0);
        assert_eq!(ok.first_escape, None);
        let wide: ConvexSet = BoxSet::symmetric(&[10.0; 3]).unwrap().into();
        let bad = monte_carlo_containment(&sys.observer, &pre.bounding, &wide, &cons.w_tilde, 10, 5, 1).unwrap();
        assert!(bad.escapes > 0);
        assert_eq!(bad.first_escape.map(|f| f.1), Some(0));
    }

    #[test]
    fn trace_containment_flags_tampered_error() {
        let (mut sc, sys, pre) = spring_damper();
        sc.reference = ReferenceSignal::Step {
            value: DVector::from_element(1, 0.5),
        };
        let mut trace = sim::run_closed_loop(&sc, &sys, &pre.admissible, &sc.disturbance, 60).unwrap();
        assert!(trace_containment(&trace, &pre.bounding).unwrap().is_empty());
        trace.records[17].e[0] += 100.0;
        assert_eq!(trace_containment(&trace, &pre.bounding).unwrap(), vec![17]);
    }

    #[test]
    fn telescoping_holds_on_bundled_models() {
        for name in ["spring_damper", "short_period", "icing"] {
            let sys = Scenario::bundled(name).unwrap().build_system().unwrap();
            assert!(telescoping_residual(&sys.prediction, 100).unwrap() < 1e-9, "{name}");
        }
    }

    #[test]
    fn verify_reports_every_check() {
        let (sc, sys, pre) = spring_damper();
        let budget = VerifyBudget {
            trajectories: 20,
            audit_samples: 200,
            seed: 4,
        };
        let cons = &sc.constraints;
        let report = verify(&sys.observer, &sys.prediction, &pre.bounding, &pre.admissible, &cons.e0, &cons.w_tilde, budget)
            .unwrap();
        assert_eq!(report.checks.len(), 4);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn one_failed_check_fails_the_report() {
        let check = |passed| CheckResult {
            name: "c".into(),
            passed,
            detail: String::new(),
        };
        assert!(VerifyReport { checks: vec![] }.passed());
        assert!(!VerifyReport {
            checks: vec![check(true), check(false)]
        }
        .passed());
    }
}

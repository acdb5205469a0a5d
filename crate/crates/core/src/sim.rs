//! Closed-loop simulation with seeded, rate-bounded disturbances.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admissible::AdmissibleSequence;
use crate::error::{Result, RgError};
use crate::governor::{self, GovernorState};
use crate::model::{self, PlantModel};
use crate::numeric::{self, NumericPolicy};
use crate::sampling;
use crate::scenario::{Scenario, System};
use crate::serde_mat;
use crate::sets::{ConvexSet, Polytope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSignal {
    Step {
        #[serde(with = "serde_mat::vector")]
        value: DVector<f64>,
    },
    /// `values[i]` holds from step `times[i]` until the next switch.
    Piecewise {
        times: Vec<usize>,
        #[serde(with = "serde_mat::vectors")]
        values: Vec<DVector<f64>>,
    },
}

impl ReferenceSignal {
    pub fn dim(&self) -> usize {
        match self {
            ReferenceSignal::Step { value } => value.len(),
            ReferenceSignal::Piecewise { values, .. } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn at(&self, n: usize) -> DVector<f64> {
        match self {
            ReferenceSignal::Step { value } => value.clone(),
            ReferenceSignal::Piecewise { times, values } => {
                let idx = times.iter().rposition(|t| *t <= n).unwrap_or(0);
                values[idx].clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    /// Holds `w_0`.
    Constant,
    /// Moves toward `target` as fast as the rate bound allows, then stays.
    RampSaturate {
        #[serde(with = "serde_mat::vector")]
        target: DVector<f64>,
    },
    /// Follows `amplitude · sin(2π n / period)` under the rate bound.
    SinusoidRateLimited {
        #[serde(with = "serde_mat::vector")]
        amplitude: DVector<f64>,
        period: f64,
    },
    /// Independent uniform increments in the rate bound.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    #[serde(default)]
    pub seed: u64,
}

fn axis_box(set: &ConvexSet) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = set.dim();
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        hi[k] = set.support(&e)?;
        e[k] = -1.0;
        lo[k] = -set.support(&e)?;
    }
    Ok((lo, hi))
}

fn clamp(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].clamp(lo[i], hi[i]))
}

impl DisturbanceProfile {
    /// `w_0 … w_{steps−1}`. Increments are clipped to the box around
    /// `W̃` and values to the box around `W`; the result is then checked
    /// against both sets.
    pub fn generate(&self, w0: &DVector<f64>, w: &ConvexSet, w_tilde: &ConvexSet, steps: usize) -> Result<Vec<DVector<f64>>> {
        let (w_lo, w_hi) = axis_box(w)?;
        let (d_lo, d_hi) = axis_box(w_tilde)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(steps);
        let mut cur = w0.clone();
        let tol = NumericPolicy::DEFAULT.geometric;
        for n in 0..steps {
            out.push(cur.clone());
            let wanted = match &self.kind {
                DisturbanceKind::Constant => DVector::zeros(cur.len()),
                DisturbanceKind::RampSaturate { target } => target - &cur,
                DisturbanceKind::SinusoidRateLimited { amplitude, period } => {
                    amplitude * (2.0 * std::f64::consts::PI * (n + 1) as f64 / period).sin() - &cur
                }
                DisturbanceKind::RandomWalk => DVector::from_fn(cur.len(), |i, _| {
                    if d_hi[i] > d_lo[i] {
                        rng.random_range(d_lo[i]..=d_hi[i])
                    } else {
                        d_lo[i]
                    }
                }),
            };
            let step = clamp(&wanted, &d_lo, &d_hi);
            let next = clamp(&(&cur + step), &w_lo, &w_hi);
            if !w_tilde.contains(&(&next - &cur), tol)? {
                log::warn!("disturbance increment at step {n} left the rate bound");
            }
            cur = next;
        }
        for (n, x) in out.iter().enumerate() {
            if !w.contains(x, tol)? {
                return Err(RgError::InvalidParameter {
                    name: "disturbance profile",
                    reason: format!("w_{n} outside W"),
                });
            }
            if n > 0 && !w_tilde.contains(&(x - &out[n - 1]), tol)? {
                return Err(RgError::InvalidParameter {
                    name: "disturbance profile",
                    reason: format!("increment at step {n} outside the rate bound"),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    #[serde(with = "serde_mat::vector")]
    pub x: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub x_hat: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub w: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub w_hat: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub e: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub u: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub y: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub v: DVector<f64>,
    #[serde(with = "serde_mat::vector")]
    pub r: DVector<f64>,
    pub kappa: f64,
    /// Offset minus row value on each unit-normalized constraint row.
    #[serde(with = "serde_mat::vector")]
    pub margins: DVector<f64>,
    pub feasible: bool,
    pub binding_row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scenario: String,
    #[serde(default)]
    pub scenario_hash: Option<String>,
    pub method: Option<String>,
    pub governed: bool,
    pub columns: TraceColumns,
    pub records: Vec<StepRecord>,
}

/// Vector lengths of each recorded quantity, so an empty trace still has
/// a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceColumns {
    pub x: usize,
    pub w: usize,
    pub u: usize,
    pub y: usize,
    pub v: usize,
    pub margins: usize,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn worst_margin(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.margins.iter().cloned())
            .fold(f64::INFINITY, f64::min)
    }

    /// Steps with at least one margin below `-tol`.
    pub fn violations(&self, tol: f64) -> usize {
        self.records.iter().filter(|r| r.margins.iter().any(|m| *m < -tol)).count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| RgError::Scenario(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(h) = &self.scenario_hash {
            let _ = writeln!(s, "# scenario {} sha256 {h}", self.scenario);
        }
        let c = self.columns;
        let mut cols = vec!["n".to_string()];
        let groups: [(&str, usize); 10] = [
            ("x", c.x),
            ("x_hat", c.x),
            ("w", c.w),
            ("w_hat", c.w),
            ("e", c.x + c.w),
            ("u", c.u),
            ("y", c.y),
            ("v", c.v),
            ("r", c.v),
            ("margin", c.margins),
        ];
        for (name, len) in groups {
            for i in 1..=len {
                cols.push(match name {
                    "x_hat" => format!("x{i}_hat"),
                    "w_hat" => format!("w{i}_hat"),
                    _ => format!("{name}{i}"),
                });
            }
        }
        cols.extend(["kappa".into(), "feasible".into(), "binding_row".into()]);
        let _ = writeln!(s, "{}", cols.join(","));
        for r in &self.records {
            let mut fields = vec![r.n.to_string()];
            for v in [&r.x, &r.x_hat, &r.w, &r.w_hat, &r.e, &r.u, &r.y, &r.v, &r.r, &r.margins] {
                fields.extend(v.iter().map(|x| format!("{x:e}")));
            }
            fields.push(format!("{:e}", r.kappa));
            fields.push(r.feasible.to_string());
            fields.push(r.binding_row.map_or(String::new(), |b| b.to_string()));
            let _ = writeln!(s, "{}", fields.join(","));
        }
        s
    }
}

/// Unit-normalized constraint rows and the constrained output of the
/// true closed loop.
struct MarginProbe {
    rows: Polytope,
}

impl MarginProbe {
    fn new(system: &System) -> Result<Self> {
        let y = &system.prediction.y_cl;
        let mut g = y.normals().clone();
        let mut h = y.offsets().clone();
        for i in 0..y.len() {
            let s = g.row(i).norm();
            if s > 0.0 {
                g.row_mut(i).scale_mut(1.0 / s);
                h[i] /= s;
            }
        }
        Ok(MarginProbe {
            rows: Polytope::new(g, h)?,
        })
    }

    fn output(system: &System, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match &system.plant.h {
            Some(h) if !system.plant.is_matched() => h * x,
            _ => numeric::concat(x, &(u + w)),
        }
    }

    fn margins(&self, y: &DVector<f64>) -> DVector<f64> {
        self.rows.offsets() - self.rows.normals() * y
    }
}

/// Default initial conditions: `x_0` from the scenario or zero, zero
/// estimates, and `w_0` from the scenario or drawn from the disturbance
/// part of `E0` with `seed`.
pub fn initial_conditions(scenario: &Scenario, plant: &PlantModel, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    let n_x = plant.n_x();
    let x0 = scenario.simulation.x0.clone().unwrap_or_else(|| DVector::zeros(n_x));
    let w0 = match &scenario.simulation.w0 {
        Some(w) => w.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = sampling::sample_set(&scenario.constraints.e0, &mut rng)?;
            e.rows(n_x, e.len() - n_x).into_owned()
        }
    };
    let e0 = numeric::concat(&x0, &w0);
    if !scenario.constraints.e0.contains(&e0, NumericPolicy::DEFAULT.geometric)? {
        return Err(RgError::InvalidParameter {
            name: "initial conditions",
            reason: "initial estimation error outside E0".into(),
        });
    }
    Ok((x0, w0))
}

fn simulate(
    scenario: &Scenario,
    system: &System,
    seq: Option<&AdmissibleSequence>,
    profile: &DisturbanceProfile,
    steps: usize,
) -> Result<SimTrace> {
    let plant = &system.plant;
    let (mut x, w0) = initial_conditions(scenario, plant, profile.seed)?;
    let cons = &system.constraints;
    let ws = profile.generate(&w0, &cons.w, &cons.w_tilde, steps)?;
    let probe = MarginProbe::new(system)?;
    let n_x = plant.n_x();
    let n_w = plant.n_w();
    let mut x_hat_ext = DVector::zeros(n_x + n_w);
    let v0 = scenario
        .simulation
        .v0
        .clone()
        .unwrap_or_else(|| DVector::zeros(system.gains.n_v()));
    let mut gov = GovernorState::new(v0);
    let mut records = Vec::with_capacity(steps);
    for (n, w) in ws.iter().enumerate() {
        let x_hat = x_hat_ext.rows(0, n_x).into_owned();
        let w_hat = x_hat_ext.rows(n_x, n_w).into_owned();
        let r = scenario.reference.at(n);
        let (v, kappa, binding_row, feasible) = match seq {
            Some(seq) => {
                let state = model::prediction_state(plant, &system.prediction, &x_hat);
                let (next, out) = governor::governor_step(&gov, seq, &state, &r)?;
                gov = next;
                (out.v_applied, out.kappa_star, out.binding_row, out.feasible)
            }
            None => (r.clone(), 1.0, None, true),
        };
        let u = model::control_input(plant, &system.gains, &system.prediction, &x_hat, &w_hat, &v)?;
        let y = plant.output(&x);
        let margins = probe.margins(&MarginProbe::output(system, &x, &u, w));
        let e = numeric::concat(&(&x - &x_hat), &(w - &w_hat));
        let x_next = plant.step(&x, &u, w);
        x_hat_ext = model::observer_step(&system.observer, &x_hat_ext, &u, &y);
        records.push(StepRecord {
            n,
            x: x.clone(),
            x_hat,
            w: w.clone(),
            w_hat,
            e,
            u,
            y,
            v,
            r,
            kappa,
            margins,
            feasible,
            binding_row,
        });
        x = x_next;
    }
    Ok(SimTrace {
        scenario: scenario.name.clone(),
        scenario_hash: None,
        method: None,
        governed: seq.is_some(),
        columns: TraceColumns {
            x: n_x,
            w: n_w,
            u: plant.n_u(),
            y: plant.n_y(),
            v: system.gains.n_v(),
            margins: probe.rows.len(),
        },
        records,
    })
}

/// Governed closed loop. Stops with an error if the governor ever finds
/// its previous command inadmissible.
pub fn run_closed_loop(
    scenario: &Scenario,
    system: &System,
    seq: &AdmissibleSequence,
    profile: &DisturbanceProfile,
    steps: usize,
) -> Result<SimTrace> {
    simulate(scenario, system, Some(seq), profile, steps)
}

/// The same loop with `v_n = r_n`.
pub fn run_baseline_no_rg(scenario: &Scenario, system: &System, profile: &DisturbanceProfile, steps: usize) -> Result<SimTrace> {
    simulate(scenario, system, None, profile, steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// `None` for an empty trace.
    pub worst_margin: Option<f64>,
    pub violations: usize,
    /// First step with `‖v − r‖ ≤ 0.1 ‖r − v_0‖`.
    pub time_to_90: Option<usize>,
    pub final_error: f64,
    pub cumulative_error: f64,
}

impl TraceSummary {
    pub fn of(trace: &SimTrace) -> Self {
        let tol = NumericPolicy::DEFAULT.geometric;
        let start = trace.records.first().map(|r| (&r.r - &r.v).norm()).unwrap_or(0.0);
        let time_to_90 = trace
            .records
            .iter()
            .find(|r| (&r.v - &r.r).norm() <= 0.1 * start)
            .map(|r| r.n);
        TraceSummary {
            worst_margin: (!trace.is_empty()).then(|| trace.worst_margin()),
            violations: trace.violations(tol),
            time_to_90,
            final_error: trace.records.last().map_or(0.0, |r| (&r.v - &r.r).norm()),
            cumulative_error: trace.records.iter().fold(0.0, |acc, r| acc + (&r.v - &r.r).norm()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    pub a: TraceSummary,
    pub b: TraceSummary,
    /// `v_a − v_b` per step (first component).
    pub v_difference: Vec<f64>,
}

impl TraceComparison {
    /// Whether trace `a`'s first command component is strictly above `b`'s
    /// on every step in `range`.
    pub fn a_strictly_higher(&self, range: std::ops::Range<usize>) -> bool {
        self.v_difference[range].iter().all(|d| *d > 0.0)
    }
}

pub fn compare_traces(a: &SimTrace, b: &SimTrace) -> Result<TraceComparison> {
    if a.len() != b.len() {
        return Err(RgError::DimensionMismatch {
            context: "trace length",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.records.iter().zip(&b.records).any(|(x, y)| x.r != y.r) {
        return Err(RgError::InvalidParameter {
            name: "traces",
            reason: "references differ".into(),
        });
    }
    let v_difference = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| x.v.get(0).copied().unwrap_or(0.0) - y.v.get(0).copied().unwrap_or(0.0))
        .collect();
    Ok(TraceComparison {
        a: TraceSummary::of(a),
        b: TraceSummary::of(b),
        v_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::BoxSet;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn ramp_respects_rate_and_range() {
        let w: ConvexSet = BoxSet::symmetric(&[0.5]).unwrap().into();
        let dw: ConvexSet = BoxSet::symmetric(&[0.01]).unwrap().into();
        let p = DisturbanceProfile {
            kind: DisturbanceKind::RampSaturate { target: dv(&[0.9]) },
            seed: 0,
        };
        let ws = p.generate(&dv(&[0.0]), &w, &dw, 80).unwrap();
        assert!((ws[10][0] - 0.1).abs() < 1e-12);
        assert_eq!(ws[79][0], 0.5);
    }

    #[test]
    fn random_walk_is_seeded() {
        let w: ConvexSet = BoxSet::symmetric(&[1.0, 1.0]).unwrap().into();
        let dw: ConvexSet = BoxSet::symmetric(&[0.1, 0.2]).unwrap().into();
        let p = DisturbanceProfile {
            kind: DisturbanceKind::RandomWalk,
            seed: 4,
        };
        let a = p.generate(&dv(&[0.0, 0.0]), &w, &dw, 500).unwrap();
        let b = p.generate(&dv(&[0.0, 0.0]), &w, &dw, 500).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|p| (&p[1] - &p[0]).amax() <= 0.2 + 1e-15));
    }

    #[test]
    fn piecewise_reference() {
        let r = ReferenceSignal::Piecewise {
            times: vec![0, 5],
            values: vec![dv(&[1.0]), dv(&[2.0])],
        };
        assert_eq!(r.at(4), dv(&[1.0]));
        assert_eq!(r.at(5), dv(&[2.0]));
    }

    #[test]
    fn profile_toml_shape() {
        let p: DisturbanceProfile = toml::from_str("kind = \"ramp_saturate\"\ntarget = [0.3]\nseed = 7\n").unwrap();
        assert_eq!(p.seed, 7);
        let back: DisturbanceProfile = toml::from_str(&toml::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
    }
}

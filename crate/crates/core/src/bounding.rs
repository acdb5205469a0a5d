//! Time-varying outer bounds `Ω_k` on the joint state/disturbance
//! estimation error.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::model::{ObserverModel, PredictionModel};
use crate::numeric::{self, NumericPolicy};
use crate::serde_mat;
use crate::sets::{ConvexSet, Ellipsoid, Polytope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum BoundingMethod {
    Ellipsoidal,
    Polyhedral,
}

impl std::str::FromStr for BoundingMethod {
    type Err = RgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoidal" => Ok(BoundingMethod::Ellipsoidal),
            "polyhedral" => Ok(BoundingMethod::Polyhedral),
            other => Err(RgError::InvalidParameter {
                name: "method",
                reason: format!("unknown bounding method {other:?}"),
            }),
        }
    }
}

impl std::fmt::Display for BoundingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundingMethod::Ellipsoidal => "ellipsoidal",
            BoundingMethod::Polyhedral => "polyhedral",
        })
    }
}

const DLYAP_RESIDUAL_TOL: f64 = 1e-9;

/// Solves `Āᵀ P Ā − P = −I`.
pub fn solve_dlyap(a_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_bar.nrows();
    numeric::check_shape(a_bar, n, n, "Lyapunov matrix")?;
    numeric::ensure_schur(a_bar, "observer error matrix", NumericPolicy::DEFAULT.algebraic)?;
    let at = a_bar.transpose();
    // vec(Aᵀ P A) = (Aᵀ ⊗ Aᵀ) vec(P)
    let system = at.kronecker(&at) - DMatrix::identity(n * n, n * n);
    let rhs = -DMatrix::<f64>::identity(n, n).reshape_generic(nalgebra::Dyn(n * n), nalgebra::Const::<1>);
    let lu = system.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(RgError::RankDeficient {
        what: "Lyapunov operator",
    })?;
    for _ in 0..2 {
        let r = &rhs - &system * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    let residual = lyapunov_residual(a_bar, &p);
    if residual > DLYAP_RESIDUAL_TOL {
        return Err(RgError::IllConditioned { residual });
    }
    Ok(p)
}

/// `‖Āᵀ P Ā − P + I‖_F`.
pub fn lyapunov_residual(a_bar: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let n = a_bar.nrows();
    (a_bar.transpose() * p * a_bar - p + DMatrix::identity(n, n)).norm()
}

fn lambda_max(p: &DMatrix<f64>) -> f64 {
    p.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest one-step Lyapunov increment contributed by a rate disturbance:
/// `max_{w̃ ∈ W̃} c‖ĀᵀPB̄w̃‖² + w̃ᵀB̄ᵀPB̄w̃`, attained at a vertex of `W̃`.
pub fn rho_bound(
    p: &DMatrix<f64>,
    a_bar: &DMatrix<f64>,
    b_bar: &DMatrix<f64>,
    c: f64,
    w_tilde: &ConvexSet,
) -> Result<f64> {
    let vs = w_tilde
        .vertices(NumericPolicy::DEFAULT.algebraic)
        .map_err(|_| RgError::Unsupported("rate bound without vertices"))?;
    let cross = a_bar.transpose() * p * b_bar;
    let gram = b_bar.transpose() * p * b_bar;
    Ok(vs
        .iter()
        .map(|w| c * (&cross * w).norm_squared() + (w.transpose() * &gram * w)[(0, 0)])
        .fold(0.0, f64::max))
}

/// Parameters of the ellipsoidal bound `Ω_k = {e : eᵀ P e ≤ ξ_k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidalBounder {
    #[serde(with = "serde_mat::matrix")]
    pub p: DMatrix<f64>,
    pub c: f64,
    pub mu: f64,
    pub rho: f64,
    pub v0_max: f64,
}

impl EllipsoidalBounder {
    pub fn new(observer: &ObserverModel, e0: &ConvexSet, w_tilde: &ConvexSet, c: f64) -> Result<Self> {
        if c.is_nan() || c <= 1.0 {
            return Err(RgError::InvalidParameter {
                name: "c",
                reason: format!("must exceed 1, got {c}"),
            });
        }
        let p = solve_dlyap(&observer.a_bar)?;
        let mu = 1.0 - ((c - 1.0) / c) / lambda_max(&p);
        if !(mu > 0.0 && mu < 1.0) {
            return Err(RgError::InvalidParameter {
                name: "mu",
                reason: format!("{mu} lies outside (0, 1)"),
            });
        }
        let rho = rho_bound(&p, &observer.a_bar, &observer.b_bar, c, w_tilde)?;
        let v0_max = match e0 {
            ConvexSet::Ellipsoid(e) => e.max_quadratic(&p),
            _ => e0
                .vertices(NumericPolicy::DEFAULT.algebraic)?
                .iter()
                .map(|v| (v.transpose() * &p * v)[(0, 0)])
                .fold(0.0, f64::max),
        };
        Ok(EllipsoidalBounder {
            p,
            c,
            mu,
            rho,
            v0_max,
        })
    }

    /// `ρ / (1 − μ)`, the level the sequence settles to.
    pub fn floor(&self) -> f64 {
        self.rho / (1.0 - self.mu)
    }

    pub fn nu(&self, k: usize) -> f64 {
        let mk = self.mu.powi(k as i32);
        mk * self.v0_max + (1.0 - mk) / (1.0 - self.mu) * self.rho
    }

    pub fn xi(&self, k: usize) -> f64 {
        self.nu(k).max(self.floor())
    }

    pub fn omega(&self, k: usize) -> Result<Ellipsoid> {
        Ellipsoid::new(self.p.clone(), self.xi(k))
    }
}

/// The `n_e` axis directions followed by `n_l` seeded uniform unit vectors.
pub fn directions(n_e: usize, n_l: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..n_e)
        .map(|i| {
            let mut e = DVector::zeros(n_e);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < n_e + n_l {
        let v: DVector<f64> = DVector::from_fn(n_e, |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
    }
    out
}

/// Unit directions along which the constraint tightening queries the
/// error sets: `D_wᵀ a` and `B_wᵀ (A_clᵀ)ᵐ C_clᵀ a` for each constraint
/// row `a` and `m < steps`. Directions parallel (up to sign) to one
/// already present are skipped.
pub fn constraint_directions(prediction: &PredictionModel, steps: usize, existing: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let y = &prediction.y_cl;
    let mut out: Vec<DVector<f64>> = Vec::new();
    let push = |d: DVector<f64>, out: &mut Vec<DVector<f64>>| {
        let n = d.norm();
        if n < 1e-12 {
            return;
        }
        let d = d / n;
        let seen = |o: &DVector<f64>| (o - &d).amax() < 1e-9 || (o + &d).amax() < 1e-9;
        if !existing.iter().any(seen) && !out.iter().any(seen) {
            out.push(d);
        }
    };
    let a_t = prediction.a_cl.transpose();
    let b_w_t = prediction.b_w.transpose();
    for i in 0..y.len() {
        let a = y.normal(i);
        push(prediction.d_w.transpose() * &a, &mut out);
        let mut v = prediction.c_cl.transpose() * &a;
        for _ in 0..steps {
            push(&b_w_t * &v, &mut out);
            v = &a_t * v;
        }
    }
    out
}

/// Face-level recursion for the polyhedral bound
/// `Ω_k = {e : |L_jᵀ e| ≤ y(k, j)}`.
#[derive(Debug, Clone)]
pub struct PolyhedralBounder {
    directions: Vec<DVector<f64>>,
    normals: DMatrix<f64>,
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    e0: ConvexSet,
    w_tilde: ConvexSet,
    /// `(Āᵏ)ᵀ L_j` for the next `k`, one column per direction.
    dirs: DMatrix<f64>,
    w_e: DVector<f64>,
    k: usize,
}

impl PolyhedralBounder {
    pub fn new(
        observer: &ObserverModel,
        e0: &ConvexSet,
        w_tilde: &ConvexSet,
        directions: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let tol = NumericPolicy::DEFAULT.algebraic;
        let n_e = observer.n_e();
        if e0.dim() != n_e {
            return Err(RgError::DimensionMismatch {
                context: "E0",
                expected: n_e,
                actual: e0.dim(),
            });
        }
        if !e0.is_symmetric(tol)? {
            return Err(RgError::NotSymmetric("E0"));
        }
        if !w_tilde.is_symmetric(tol)? {
            return Err(RgError::NotSymmetric("W_tilde"));
        }
        if directions.is_empty() {
            return Err(RgError::InvalidParameter {
                name: "directions",
                reason: "at least one direction is needed".into(),
            });
        }
        for d in &directions {
            if d.len() != n_e || (d.norm() - 1.0).abs() > 1e-9 {
                return Err(RgError::InvalidParameter {
                    name: "directions",
                    reason: "directions must be unit vectors in the error space".into(),
                });
            }
        }
        let n_l = directions.len();
        let mut normals = DMatrix::zeros(2 * n_l, n_e);
        let mut lmat = DMatrix::zeros(n_e, n_l);
        for (j, d) in directions.iter().enumerate() {
            normals.row_mut(j).copy_from(&d.transpose());
            normals.row_mut(n_l + j).copy_from(&(-d).transpose());
            lmat.column_mut(j).copy_from(d);
        }
        Ok(PolyhedralBounder {
            directions,
            normals,
            a_bar: observer.a_bar.clone(),
            b_bar: observer.b_bar.clone(),
            e0: e0.clone(),
            w_tilde: w_tilde.clone(),
            dirs: lmat,
            w_e: DVector::zeros(n_l),
            k: 0,
        })
    }

    pub fn directions(&self) -> &[DVector<f64>] {
        &self.directions
    }

    /// Index of the next level vector [`Self::advance`] returns.
    pub fn index(&self) -> usize {
        self.k
    }

    /// Returns `y(k, ·)` for the current `k` and moves to `k + 1`.
    pub fn advance(&mut self) -> Result<DVector<f64>> {
        let n_l = self.directions.len();
        let mut y = DVector::zeros(n_l);
        let bt = self.b_bar.transpose();
        for j in 0..n_l {
            let d = self.dirs.column(j).into_owned();
            y[j] = self.e0.support(&d)? + self.w_e[j];
            // w_e(k+1, j) = w_e(k, j) + max_{w̃} L_jᵀ Āᵏ B̄ w̃
            self.w_e[j] += self.w_tilde.support(&(&bt * &d))?;
        }
        self.dirs = self.a_bar.transpose() * &self.dirs;
        self.k += 1;
        Ok(y)
    }

    pub fn polytope(&self, levels: &DVector<f64>) -> Result<Polytope> {
        let offsets = DVector::from_iterator(
            2 * levels.len(),
            levels.iter().chain(levels.iter()).cloned(),
        );
        Polytope::new(self.normals.clone(), offsets)
    }
}

/// Which bounding sets the terminal set must cover, and how far its
/// containment is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalSpec {
    /// Inclusive index range whose sets are merged into `Ω_f`.
    pub window: (usize, usize),
    /// Containment `Ω_k ⊆ Ω_f` is verified for `k ∈ [window.0, verify_to]`.
    pub verify_to: usize,
}

impl TerminalSpec {
    /// `Ω_f = Ω_{n̄}` verified up to `3 n̄`.
    pub fn at(n_bar: usize) -> Self {
        TerminalSpec {
            window: (n_bar, n_bar),
            verify_to: 3 * n_bar,
        }
    }
}

/// Finite description of `{Ω_k}`: the stored prefix, then `Ω_f` from
/// index `n_bar` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingSequence {
    pub method: BoundingMethod,
    pub n_bar: usize,
    pub omegas: Vec<ConvexSet>,
    pub omega_f: ConvexSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ellipsoidal: Option<EllipsoidalBounder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BoundingSequence {
    /// The set bounding the error at time `k`.
    pub fn omega(&self, k: usize) -> &ConvexSet {
        if k < self.n_bar {
            &self.omegas[k]
        } else {
            &self.omega_f
        }
    }

    pub fn dim(&self) -> usize {
        self.omega_f.dim()
    }
}

pub fn ellipsoidal_sequence(
    observer: &ObserverModel,
    e0: &ConvexSet,
    w_tilde: &ConvexSet,
    c: f64,
    n_bar: usize,
) -> Result<BoundingSequence> {
    let bounder = EllipsoidalBounder::new(observer, e0, w_tilde, c)?;
    let omegas = (0..=n_bar)
        .map(|k| bounder.omega(k).map(ConvexSet::from))
        .collect::<Result<Vec<_>>>()?;
    let omega_f = omegas[n_bar].clone();
    Ok(BoundingSequence {
        method: BoundingMethod::Ellipsoidal,
        n_bar,
        omegas,
        omega_f,
        ellipsoidal: Some(bounder),
        seed: None,
    })
}

/// Polyhedral bounds for `k = 0..=max(n̄, verify_to)`, with `Ω_f` merged
/// over the terminal window and checked against the rest of the range.
pub fn polyhedral_sequence(
    observer: &ObserverModel,
    e0: &ConvexSet,
    w_tilde: &ConvexSet,
    directions: Vec<DVector<f64>>,
    n_bar: usize,
    terminal: TerminalSpec,
) -> Result<BoundingSequence> {
    let (lo, hi) = terminal.window;
    if lo > hi || lo < n_bar || terminal.verify_to < hi {
        return Err(RgError::InvalidParameter {
            name: "terminal window",
            reason: format!(
                "need n_bar ≤ start ≤ end ≤ verify_to, got n_bar={n_bar}, window=[{lo}, {hi}], verify_to={}",
                terminal.verify_to
            ),
        });
    }
    let mut bounder = PolyhedralBounder::new(observer, e0, w_tilde, directions)?;
    let mut omegas = Vec::with_capacity(n_bar + 1);
    let mut tail = Vec::with_capacity(hi - lo + 1);
    let mut extra = Vec::new();
    for k in 0..=terminal.verify_to {
        let levels = bounder.advance()?;
        let set = ConvexSet::from(bounder.polytope(&levels)?);
        if k >= lo && k <= hi {
            tail.push(set.clone());
        }
        if k <= n_bar {
            omegas.push(set);
        } else if k > hi {
            extra.push((k, set));
        }
    }
    let mut verify: Vec<(usize, ConvexSet)> = (n_bar..lo).map(|k| (k, omegas[k].clone())).collect();
    verify.extend(extra);
    let omega_f = terminal_set(&tail, &verify)?;
    Ok(BoundingSequence {
        method: BoundingMethod::Polyhedral,
        n_bar,
        omegas,
        omega_f,
        ellipsoidal: None,
        seed: None,
    })
}

/// Relative slack allowed when a verified set pokes out of the merged
/// tail; the terminal set is widened to cover it exactly.
pub const TERMINAL_REL_TOL: f64 = 1e-4;

/// Smallest set over the shared face normals of `tail` that contains every
/// member, widened to cover the `(index, set)` pairs of `verify` when they
/// exceed it by at most [`TERMINAL_REL_TOL`].
pub fn terminal_set(tail: &[ConvexSet], verify: &[(usize, ConvexSet)]) -> Result<ConvexSet> {
    let first = tail.first().ok_or(RgError::InvalidParameter {
        name: "terminal tail",
        reason: "empty".into(),
    })?;
    let tol = NumericPolicy::DEFAULT.geometric;
    if let ConvexSet::Ellipsoid(e) = first {
        let mut level = e.level();
        for s in &tail[1..] {
            match s {
                ConvexSet::Ellipsoid(o) if o.shape() == e.shape() => level = level.max(o.level()),
                _ => return Err(RgError::Unsupported("mixed terminal tail")),
            }
        }
        let merged = ConvexSet::from(e.with_level(level)?);
        for (k, s) in verify {
            if !s.subset_of(&merged, tol)? {
                return Err(RgError::TerminalVerification { index: *k });
            }
        }
        return Ok(merged);
    }
    if let ConvexSet::Polytope(p) = first {
        let shared = tail
            .iter()
            .all(|s| matches!(s, ConvexSet::Polytope(q) if q.normals() == p.normals()));
        if shared {
            return shared_normal_terminal(p, tail, verify);
        }
    }
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for s in tail {
        let h = s.halfspaces()?;
        for i in 0..h.len() {
            let n = h.normal(i);
            let n = &n / n.norm();
            if !rows.iter().any(|r| (r - &n).amax() < 1e-12) {
                rows.push(n);
            }
        }
    }
    let dim = first.dim();
    let mut offsets = DVector::from_element(rows.len(), f64::NEG_INFINITY);
    for s in tail {
        for (i, r) in rows.iter().enumerate() {
            offsets[i] = offsets[i].max(s.support(r)?);
        }
    }
    let scale = offsets.amax().max(tol);
    let mut widened = offsets.clone();
    for (k, s) in verify {
        for (i, r) in rows.iter().enumerate() {
            let h = s.support(r)?;
            if h > offsets[i] + TERMINAL_REL_TOL * scale {
                return Err(RgError::TerminalVerification { index: *k });
            }
            widened[i] = widened[i].max(h);
        }
    }
    let normals = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    Ok(ConvexSet::from(Polytope::new(normals, widened)?))
}

/// Tail polytopes sharing one normal matrix: offsets are merged row by row,
/// and a verified set only needs an LP on rows where its own offset is
/// larger.
fn shared_normal_terminal(first: &Polytope, tail: &[ConvexSet], verify: &[(usize, ConvexSet)]) -> Result<ConvexSet> {
    let g = first.normals();
    let mut offsets = first.offsets().clone();
    for s in &tail[1..] {
        if let ConvexSet::Polytope(q) = s {
            offsets = offsets.zip_map(q.offsets(), f64::max);
        }
    }
    let norms = DVector::from_fn(g.nrows(), |i, _| g.row(i).norm());
    let scale = offsets.component_div(&norms).amax().max(NumericPolicy::DEFAULT.geometric);
    let mut widened = offsets.clone();
    for (k, s) in verify {
        for i in 0..g.nrows() {
            let cheap = match s {
                ConvexSet::Polytope(q) if q.normals() == g => Some(q.offsets()[i]),
                _ => None,
            };
            if cheap.is_some_and(|h| h <= widened[i]) {
                continue;
            }
            let h = s.support(&g.row(i).transpose())?;
            if h > offsets[i] + TERMINAL_REL_TOL * scale * norms[i] {
                return Err(RgError::TerminalVerification { index: *k });
            }
            widened[i] = widened[i].max(h);
        }
    }
    Ok(ConvexSet::from(Polytope::new(g.clone(), widened)?))
}

/// `{e : |L_jᵀ e| ≤ l_j s}` with `s = max_j y_j / l_j`, i.e. the base
/// polytope scaled just enough to cover the levels `y`.
pub fn scaled_base_overbound(base: &Polytope, y: &DVector<f64>, levels: &DVector<f64>) -> Result<Polytope> {
    if y.len() != levels.len() {
        return Err(RgError::DimensionMismatch {
            context: "base levels",
            expected: levels.len(),
            actual: y.len(),
        });
    }
    let mut factor: f64 = 0.0;
    for (yj, lj) in y.iter().zip(levels.iter()) {
        if *lj <= 0.0 {
            return Err(RgError::InvalidParameter {
                name: "base levels",
                reason: "every level must be positive".into(),
            });
        }
        factor = factor.max(yj / lj);
    }
    base.scaled(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use crate::sets::BoxSet;
    use approx::assert_relative_eq;

    fn observer(a_bar: DMatrix<f64>, b_bar: DMatrix<f64>) -> ObserverModel {
        let n_e = a_bar.nrows();
        let n_w = b_bar.ncols();
        ObserverModel {
            a_ext: a_bar.clone(),
            b_ext: DMatrix::zeros(n_e, 1),
            c_ext: DMatrix::zeros(1, n_e),
            l: DMatrix::zeros(n_e, 1),
            a_bar,
            b_bar,
            n_x: n_e - n_w,
            n_w,
        }
    }

    fn scalar() -> ObserverModel {
        observer(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0))
    }

    fn interval(r: f64) -> ConvexSet {
        BoxSet::symmetric(&[r]).unwrap().into()
    }

    fn spring_damper_observer() -> ObserverModel {
        Scenario::bundled("spring_damper").unwrap().build_system().unwrap().observer
    }

    #[test]
    fn dlyap_of_zero_is_identity() {
        let p = solve_dlyap(&DMatrix::zeros(3, 3)).unwrap();
        assert_relative_eq!(p, DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn dlyap_scalar() {
        let p = solve_dlyap(&DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert_relative_eq!(p[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn dlyap_matches_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=5 {
            let m = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
            let a: DMatrix<f64> = &m * (0.8 / numeric::spectral_radius(&m));
            let mut series = DMatrix::zeros(n, n);
            let mut term = DMatrix::identity(n, n);
            for _ in 0..2000 {
                series += &term;
                term = a.transpose() * &term * &a;
            }
            let p = solve_dlyap(&a).unwrap();
            assert!((&p - &series).amax() < 1e-8 * series.amax().max(1.0));
        }
    }

    #[test]
    fn dlyap_rejects_unstable() {
        let a = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(solve_dlyap(&a), Err(RgError::NotSchur { .. })));
    }

    #[test]
    fn rho_scalar_arithmetic() {
        let o = scalar();
        let p = DMatrix::from_element(1, 1, 4.0 / 3.0);
        let rho = rho_bound(&p, &o.a_bar, &o.b_bar, 2.0, &interval(1.0)).unwrap();
        assert_relative_eq!(rho, 20.0 / 9.0, epsilon = 1e-14);
        let zero = rho_bound(&p, &o.a_bar, &o.b_bar, 2.0, &BoxSet::zero(1).into()).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn rho_matches_grid_search() {
        let o = spring_damper_observer();
        let p = solve_dlyap(&o.a_bar).unwrap();
        let c = 2.0;
        let rho = rho_bound(&p, &o.a_bar, &o.b_bar, c, &interval(0.001)).unwrap();
        let cross = o.a_bar.transpose() * &p * &o.b_bar;
        let gram = o.b_bar.transpose() * &p * &o.b_bar;
        let grid = (0..=10_000)
            .map(|i| {
                let w = DVector::from_element(1, -0.001 + 0.002 * i as f64 / 10_000.0);
                c * (&cross * &w).norm_squared() + (w.transpose() * &gram * &w)[(0, 0)]
            })
            .fold(0.0, f64::max);
        assert!((rho - grid).abs() < 1e-12);
    }

    #[test]
    fn zero_initial_error_sits_at_floor() {
        let b = EllipsoidalBounder::new(&scalar(), &BoxSet::zero(1).into(), &interval(0.1), 2.0).unwrap();
        assert_eq!(b.xi(0), b.floor());
        assert!((0..50).all(|k| b.xi(k) == b.floor()));
    }

    #[test]
    fn spring_damper_xi_reaches_floor() {
        let o = spring_damper_observer();
        let e0: ConvexSet = BoxSet::new(DVector::from_vec(vec![0.0, 0.0, -0.4]), DVector::from_vec(vec![0.0, 0.0, 0.4]))
            .unwrap()
            .into();
        let b = EllipsoidalBounder::new(&o, &e0, &interval(0.001), 10.0).unwrap();
        assert!((1..=200).all(|k| b.xi(k) <= b.xi(k - 1)));
        assert!((b.xi(200) - b.floor()) / b.floor() <= 0.01);
    }

    #[test]
    fn ellipsoidal_levels_bound_lyapunov_function() {
        let o = spring_damper_observer();
        let e0: ConvexSet = BoxSet::symmetric(&[0.05, 0.05, 0.4]).unwrap().into();
        let w = interval(0.001);
        let b = EllipsoidalBounder::new(&o, &e0, &w, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let mut e = crate::sampling::sample_boundary(&e0, &mut rng).unwrap();
            for k in 0..60 {
                assert!((e.transpose() * &b.p * &e)[(0, 0)] <= b.xi(k) * (1.0 + 1e-12));
                let dw = crate::sampling::sample_boundary(&w, &mut rng).unwrap();
                e = o.error_step(&e, &dw);
            }
        }
    }

    #[test]
    fn c_must_exceed_one() {
        let r = EllipsoidalBounder::new(&scalar(), &interval(1.0), &interval(0.1), 1.0);
        assert!(matches!(r, Err(RgError::InvalidParameter { name: "c", .. })));
    }

    #[test]
    fn nilpotent_error_dies_out() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let o = observer(a, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        let e0: ConvexSet = BoxSet::symmetric(&[1.0, 1.0]).unwrap().into();
        let mut p = PolyhedralBounder::new(&o, &e0, &BoxSet::zero(1).into(), directions(2, 6, 1)).unwrap();
        let levels: Vec<_> = (0..5).map(|_| p.advance().unwrap()).collect();
        assert!(levels[0].amax() > 0.0);
        assert!(levels[2..].iter().all(|y| y.amax() == 0.0));
    }

    #[test]
    fn first_step_unrolled() {
        let o = spring_damper_observer();
        let e0: ConvexSet = BoxSet::symmetric(&[0.1, 0.2, 0.4]).unwrap().into();
        let w = interval(0.001);
        let dirs = directions(3, 4, 9);
        let mut p = PolyhedralBounder::new(&o, &e0, &w, dirs.clone()).unwrap();
        p.advance().unwrap();
        let y1 = p.advance().unwrap();
        for (j, l) in dirs.iter().enumerate() {
            let expect = e0.support(&(o.a_bar.transpose() * l)).unwrap() + w.support(&(o.b_bar.transpose() * l)).unwrap();
            assert_relative_eq!(y1[j], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn polyhedral_rejects_asymmetric_sets() {
        let e0: ConvexSet = BoxSet::new(DVector::from_element(1, 0.0), DVector::from_element(1, 1.0))
            .unwrap()
            .into();
        let r = PolyhedralBounder::new(&scalar(), &e0, &interval(0.1), directions(1, 0, 0));
        assert!(matches!(r, Err(RgError::NotSymmetric("E0"))));
    }

    #[test]
    fn constant_tail_is_kept() {
        let s: ConvexSet = BoxSet::symmetric(&[1.0, 2.0]).unwrap().into();
        let f = terminal_set(&[s.clone(), s.clone()], &[]).unwrap();
        assert!(f.subset_of(&s, 1e-12).unwrap() && s.subset_of(&f, 1e-12).unwrap());
    }

    #[test]
    fn nested_tail_gives_outer_box() {
        let inner: ConvexSet = BoxSet::symmetric(&[1.0, 1.0]).unwrap().into();
        let outer: ConvexSet = BoxSet::symmetric(&[2.0, 3.0]).unwrap().into();
        let f = terminal_set(&[inner, outer.clone()], &[]).unwrap();
        assert!(f.subset_of(&outer, 1e-12).unwrap() && outer.subset_of(&f, 1e-12).unwrap());
    }

    #[test]
    fn terminal_verification_failure_is_reported() {
        let small: ConvexSet = BoxSet::symmetric(&[1.0]).unwrap().into();
        let big: ConvexSet = BoxSet::symmetric(&[2.0]).unwrap().into();
        let r = terminal_set(&[small], &[(7, big)]);
        assert_eq!(r.unwrap_err(), RgError::TerminalVerification { index: 7 });
    }

    #[test]
    fn short_period_terminal_window_covers_verify_range() {
        let sc = Scenario::bundled("short_period").unwrap();
        let sys = sc.build_system().unwrap();
        let b = sc.bounding_sequence(&sys, BoundingMethod::Polyhedral).unwrap();
        let t = sc.bounding.terminal();
        assert_eq!((t.window, t.verify_to), ((200, 250), 600));
        let mut p = PolyhedralBounder::new(
            &sys.observer,
            &sc.constraints.e0,
            &sc.constraints.w_tilde,
            match &b.omega_f {
                ConvexSet::Polytope(f) => (0..f.len() / 2).map(|j| f.normal(j)).collect(),
                _ => unreachable!(),
            },
        )
        .unwrap();
        for k in 0..=600 {
            let y = p.advance().unwrap();
            if k >= 200 {
                let s = ConvexSet::from(p.polytope(&y).unwrap());
                assert!(s.subset_of(&b.omega_f, 1e-9).unwrap(), "k = {k}");
            }
        }
    }

    #[test]
    fn overbound_scaling() {
        let base = BoxSet::symmetric(&[1.0, 2.0]).unwrap().to_polytope();
        let levels = base.offsets().clone();
        let same = scaled_base_overbound(&base, &levels, &levels).unwrap();
        assert_eq!(same.offsets(), base.offsets());
        let doubled = scaled_base_overbound(&base, &(&levels * 2.0), &levels).unwrap();
        assert_relative_eq!(doubled.offsets().clone(), base.offsets() * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn overbound_contains_level_polytope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = BoxSet::symmetric(&[1.0, 1.0]).unwrap().to_polytope();
        let levels = base.offsets().clone();
        for _ in 0..50 {
            let y = DVector::from_fn(levels.len(), |_, _| rand::Rng::random_range(&mut rng, 0.1..3.0));
            let tight = base.with_offsets(y.clone()).unwrap();
            let over = scaled_base_overbound(&base, &y, &levels).unwrap();
            assert!(ConvexSet::from(tight).subset_of(&over.into(), 1e-9).unwrap());
        }
    }

    #[test]
    fn directions_are_unit_and_seeded() {
        let a = directions(4, 10, 2);
        assert_eq!(a.len(), 14);
        assert!(a.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
        assert_eq!(a, directions(4, 10, 2));
        assert_ne!(a, directions(4, 10, 3));
    }
}

//! Time-dependent tightened constraints and the finitely determined
//! admissible sets `Õ∞,n` over stacked `(v, x̂)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounding::BoundingSequence;
use crate::error::{Result, RgError};
use crate::lp::{self, LpOutcome, WarmStart};
use crate::model::PredictionModel;
use crate::numeric::{self, NumericPolicy};
use crate::sampling;
use crate::sets::{ConvexSet, Polytope};

/// Redundancy threshold for the determination test.
pub const REDUNDANCY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TighteningParams {
    /// Length `N` of the reachable sum used for `Ỹ_n`.
    pub horizon: usize,
    pub epsilon: f64,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
}

fn default_k_max() -> usize {
    2000
}

/// `Hx(k) = Σ_{i<k} Aⁱ B` and `Hy(k) = D + C Hx(k)`, plus their limits.
#[derive(Debug, Clone)]
pub struct HOperators {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    pub hx_inf: DMatrix<f64>,
    pub hy_inf: DMatrix<f64>,
}

impl HOperators {
    pub fn new(pred: &PredictionModel) -> Result<Self> {
        let n = pred.n_state();
        let resolvent = (DMatrix::identity(n, n) - &pred.a_cl)
            .try_inverse()
            .ok_or(RgError::RankDeficient { what: "I - A_cl" })?;
        let hx_inf = &resolvent * &pred.b_cl;
        let hy_inf = &pred.d_cl + &pred.c_cl * &hx_inf;
        Ok(HOperators {
            a: pred.a_cl.clone(),
            b: pred.b_cl.clone(),
            c: pred.c_cl.clone(),
            d: pred.d_cl.clone(),
            hx_inf,
            hy_inf,
        })
    }

    /// `(I − A)⁻¹ (I − Aᵏ) B`, evaluated in closed form.
    pub fn hx(&self, k: usize) -> DMatrix<f64> {
        let n = self.a.nrows();
        let ak = self.a.pow(k as u32);
        let resolvent = (DMatrix::identity(n, n) - &self.a)
            .try_inverse()
            .expect("checked at construction");
        resolvent * (DMatrix::identity(n, n) - ak) * &self.b
    }

    pub fn hy(&self, k: usize) -> DMatrix<f64> {
        &self.d + &self.c * self.hx(k)
    }

    /// `(Hy(k), C Aᵏ)` for `k = 0, 1, …` by the one-step recursion.
    pub fn blocks(&self) -> impl Iterator<Item = (DMatrix<f64>, DMatrix<f64>)> + '_ {
        let n = self.a.nrows();
        let mut hx = DMatrix::zeros(n, self.b.ncols());
        let mut ak = DMatrix::identity(n, n);
        std::iter::from_fn(move || {
            let out = (&self.d + &self.c * &hx, &self.c * &ak);
            hx = &self.a * &hx + &self.b;
            ak = &self.a * &ak;
            Some(out)
        })
    }
}

fn support_warm(set: &ConvexSet, dir: &DVector<f64>, warm: &mut WarmStart) -> Result<f64> {
    match set {
        ConvexSet::Polytope(p) if p.cached_vertices().is_none() => {
            match lp::maximize_warm(dir, p.normals(), p.offsets(), warm)? {
                LpOutcome::Optimal { value, .. } => Ok(value),
                LpOutcome::Unbounded => Err(RgError::Unbounded),
                LpOutcome::Infeasible => Err(RgError::EmptySet {
                    context: "error bounding set".into(),
                }),
            }
        }
        other => other.support(dir),
    }
}

/// Support values of the reachable error sets along the unit normals of
/// `Y_cl`.
///
/// With `σ(j, m) = h(Ω_j, (C A^m B_w)ᵀ a)` and `δ(j) = h(Ω_j, D_wᵀ a)`,
/// the tightening of row `a` is
/// `t(n, k) = δ(n + k) + Σ_{i<k} σ(n + i, k − 1 − i)`; the sum obeys
/// `S(n, k) = σ(n, k − 1) + S(n + 1, k − 1)` and is constant in `n` once
/// `n ≥ n̄`.
#[derive(Debug, Clone)]
pub struct SupportTable {
    n_bar: usize,
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    /// `delta[j][i]` for `j = 0..=n̄`.
    delta: Vec<DVector<f64>>,
    /// `sigma[m][j][i]`, `j = 0..=n̄`.
    sigma: Vec<Vec<DVector<f64>>>,
    /// `(Aᵀ)^m Cᵀ a_i` for the next `m`.
    next_dirs: DMatrix<f64>,
    a_t: DMatrix<f64>,
    b_w_t: DMatrix<f64>,
    omegas: Vec<ConvexSet>,
    warm: Vec<WarmStart>,
    /// `s_tail[k][i] = S(n̄, k)`.
    s_tail: Vec<DVector<f64>>,
}

impl SupportTable {
    pub fn new(pred: &PredictionModel, bounding: &BoundingSequence) -> Result<Self> {
        if bounding.dim() != pred.n_e() {
            return Err(RgError::DimensionMismatch {
                context: "bounding sets",
                expected: pred.n_e(),
                actual: bounding.dim(),
            });
        }
        let y = &pred.y_cl;
        let rows = y.len();
        let mut normals = y.normals().clone();
        let mut offsets = y.offsets().clone();
        for i in 0..rows {
            let s = normals.row(i).norm();
            if s > 0.0 {
                normals.row_mut(i).scale_mut(1.0 / s);
                offsets[i] /= s;
            }
        }
        let n_bar = bounding.n_bar;
        let omegas: Vec<ConvexSet> = (0..=n_bar).map(|j| bounding.omega(j).clone()).collect();
        let dw_dirs = pred.d_w.transpose() * normals.transpose();
        let mut delta = Vec::with_capacity(n_bar + 1);
        let mut warm = vec![WarmStart::default(); rows];
        for omega in &omegas {
            let mut d = DVector::zeros(rows);
            for i in 0..rows {
                d[i] = support_warm(omega, &dw_dirs.column(i).into_owned(), &mut warm[i])?;
            }
            delta.push(d);
        }
        Ok(SupportTable {
            n_bar,
            next_dirs: pred.c_cl.transpose() * normals.transpose(),
            normals,
            offsets,
            delta,
            sigma: Vec::new(),
            a_t: pred.a_cl.transpose(),
            b_w_t: pred.b_w.transpose(),
            omegas,
            warm,
            s_tail: vec![DVector::zeros(rows)],
        })
    }

    pub fn rows(&self) -> usize {
        self.offsets.len()
    }

    /// Unit normals of `Y_cl`.
    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    /// Offsets of `Y_cl` for the unit normals.
    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Makes `σ(·, m)` available for every `m < len`.
    pub fn extend_to(&mut self, len: usize) -> Result<()> {
        let rows = self.rows();
        while self.sigma.len() < len {
            let dirs = &self.b_w_t * &self.next_dirs;
            let mut layer = Vec::with_capacity(self.n_bar + 1);
            for j in 0..=self.n_bar {
                let mut s = DVector::zeros(rows);
                for i in 0..rows {
                    s[i] = support_warm(&self.omegas[j], &dirs.column(i).into_owned(), &mut self.warm[i])?;
                }
                layer.push(s);
            }
            let m = self.sigma.len();
            let tail = &self.s_tail[m] + &layer[self.n_bar];
            self.s_tail.push(tail);
            self.sigma.push(layer);
            self.next_dirs = &self.a_t * &self.next_dirs;
        }
        Ok(())
    }

    pub fn delta(&self, j: usize) -> &DVector<f64> {
        &self.delta[j.min(self.n_bar)]
    }

    pub fn sigma(&self, j: usize, m: usize) -> &DVector<f64> {
        &self.sigma[m][j.min(self.n_bar)]
    }

    /// `S(n, k) = Σ_{i<k} σ(n + i, k − 1 − i)`, for `k ≤` the extended length.
    pub fn reach_sum(&self, n: usize, k: usize) -> DVector<f64> {
        if n >= self.n_bar {
            return self.s_tail[k].clone();
        }
        // Once n + i reaches n̄ the rest of the sum is a tail value.
        let head = (self.n_bar - n).min(k);
        let mut s = self.s_tail[k - head].clone();
        for i in 0..head {
            s += self.sigma(n + i, k - 1 - i);
        }
        s
    }

    /// `h(E^y(n, k), a_i)` for every row.
    pub fn tightening(&self, n: usize, k: usize) -> DVector<f64> {
        self.delta(n + k) + self.reach_sum(n, k)
    }

    /// `Y_cl ⊖ E^y(n, k)` on the unit normals.
    pub fn tightened_set(&mut self, n: usize, k: usize) -> Result<Polytope> {
        self.extend_to(k)?;
        Polytope::new(self.normals.clone(), &self.offsets - self.tightening(n, k))
    }
}

/// `Ỹ_n` for `n = 0..=n̄`, with the monotonicity check outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSets {
    pub sets: Vec<Polytope>,
    /// Whether `Ỹ_n ⊆ Ỹ_{n+1}` held as built.
    pub monotone: bool,
    /// Whether offsets were replaced by suffix minima to restore nesting.
    pub adjusted: bool,
}

/// `Ỹ_n = Y_cl ⊖ E^y(n, N) ⊖ εB` for one `n`.
pub fn steady_state_set(table: &mut SupportTable, n: usize, params: &TighteningParams) -> Result<Polytope> {
    if !(params.epsilon > 0.0) {
        return Err(RgError::InvalidParameter {
            name: "epsilon",
            reason: "must be positive".into(),
        });
    }
    let p = table.tightened_set(n, params.horizon)?;
    let offsets = p.offsets().add_scalar(-params.epsilon);
    let out = p.with_offsets(offsets)?;
    if out.is_empty(NumericPolicy::DEFAULT.algebraic)? {
        return Err(RgError::EmptySet {
            context: format!("steady-state constraint set at n = {n}"),
        });
    }
    Ok(out)
}

pub fn steady_state_sets(table: &mut SupportTable, params: &TighteningParams) -> Result<SteadyStateSets> {
    let n_bar = table.n_bar;
    let mut sets = Vec::with_capacity(n_bar + 1);
    for n in 0..=n_bar {
        sets.push(steady_state_set(table, n, params)?);
    }
    let tol = NumericPolicy::DEFAULT.geometric;
    let mut monotone = true;
    for n in 0..n_bar {
        let a: ConvexSet = sets[n].clone().into();
        let b: ConvexSet = sets[n + 1].clone().into();
        let rowwise = (sets[n].offsets() - sets[n + 1].offsets()).max() <= tol;
        if !rowwise && !a.subset_of(&b, tol)? {
            monotone = false;
            break;
        }
    }
    let mut adjusted = false;
    if !monotone {
        log::warn!("steady-state sets are not nested; using suffix minima of their offsets");
        for n in (0..n_bar).rev() {
            let merged = sets[n].offsets().zip_map(sets[n + 1].offsets(), f64::min);
            sets[n] = sets[n].with_offsets(merged)?;
        }
        adjusted = true;
    }
    Ok(SteadyStateSets {
        sets,
        monotone,
        adjusted,
    })
}

/// `Õ∞,n` as an H-polytope over `(v, x̂)`: `ss_rows` steady-state rows
/// followed by `k_star + 1` blocks of `block_rows` rows each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub polytope: Polytope,
    pub k_star: usize,
    pub n: usize,
    pub ss_rows: usize,
    pub block_rows: usize,
    pub n_v: usize,
}

impl AdmissibleSet {
    pub fn stack(v: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        numeric::concat(v, x)
    }

    pub fn contains(&self, v: &DVector<f64>, x: &DVector<f64>, tol: f64) -> bool {
        self.polytope.contains(&Self::stack(v, x), tol)
    }

    /// Rows of block `k`, as a polytope over the same space.
    pub fn block(&self, k: usize) -> Result<Polytope> {
        let start = self.ss_rows + k * self.block_rows;
        let idx: Vec<usize> = (start..start + self.block_rows).collect();
        Polytope::new(
            self.polytope.normals().select_rows(idx.iter()),
            self.polytope.offsets().select_rows(idx.iter()),
        )
    }

    /// The set without its last block.
    pub fn without_last_block(&self) -> Result<Polytope> {
        let keep = self.ss_rows + self.k_star * self.block_rows;
        let idx: Vec<usize> = (0..keep).collect();
        Polytope::new(
            self.polytope.normals().select_rows(idx.iter()),
            self.polytope.offsets().select_rows(idx.iter()),
        )
    }
}

fn stack_rows(normals: &mut Vec<DVector<f64>>, offsets: &mut Vec<f64>, gv: &DMatrix<f64>, gx: &DMatrix<f64>, h: &DVector<f64>) {
    for i in 0..h.len() {
        normals.push(numeric::concat(&gv.row(i).transpose(), &gx.row(i).transpose()));
        offsets.push(h[i]);
    }
}

fn to_polytope(normals: &[DVector<f64>], offsets: &[f64], dim: usize) -> Result<Polytope> {
    let g = DMatrix::from_fn(normals.len(), dim, |i, j| normals[i][j]);
    Polytope::new(g, DVector::from_column_slice(offsets))
}

/// Adds prediction blocks `k = 0, 1, …` until every row of the next block
/// is implied by the rows already present.
pub fn finite_determination(
    pred: &PredictionModel,
    ops: &HOperators,
    table: &mut SupportTable,
    y_tilde: &Polytope,
    n: usize,
    k_max: usize,
) -> Result<AdmissibleSet> {
    let n_v = pred.n_v();
    let dim = n_v + pred.n_state();
    let a = table.normals().clone();
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    let zero_x = DMatrix::zeros(y_tilde.len(), pred.n_state());
    stack_rows(
        &mut normals,
        &mut offsets,
        &(y_tilde.normals() * &ops.hy_inf),
        &zero_x,
        y_tilde.offsets(),
    );
    let ss_rows = normals.len();
    let rows = table.rows();
    let mut k_star = None;
    for (k, (hy, cak)) in ops.blocks().enumerate() {
        if k > k_max {
            break;
        }
        table.extend_to(k)?;
        let h = table.offsets() - table.tightening(n, k);
        let gv = &a * hy;
        let gx = &a * cak;
        if k > 0 {
            let current = to_polytope(&normals, &offsets, dim)?;
            let mut all_redundant = true;
            for i in 0..rows {
                let row = numeric::concat(&gv.row(i).transpose(), &gx.row(i).transpose());
                let redundant = match lp::maximize(&row, current.normals(), current.offsets())? {
                    LpOutcome::Optimal { value, .. } => value <= h[i] + REDUNDANCY_TOL,
                    LpOutcome::Unbounded => false,
                    LpOutcome::Infeasible => {
                        return Err(RgError::EmptySet {
                            context: format!("admissible set at n = {n}"),
                        })
                    }
                };
                if !redundant {
                    all_redundant = false;
                    break;
                }
            }
            if all_redundant {
                k_star = Some(k - 1);
                break;
            }
        }
        stack_rows(&mut normals, &mut offsets, &gv, &gx, &h);
    }
    let k_star = k_star.ok_or(RgError::DeterminationLimit { n, k_max })?;
    let polytope = to_polytope(&normals, &offsets, dim)?;
    if polytope.is_empty(NumericPolicy::DEFAULT.algebraic)? {
        return Err(RgError::EmptySet {
            context: format!("admissible set at n = {n}"),
        });
    }
    Ok(AdmissibleSet {
        polytope,
        k_star,
        n,
        ss_rows,
        block_rows: rows,
        n_v,
    })
}

/// `Õ∞,0 … Õ∞,n̄`; later indices reuse `Õ∞,n̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleSequence {
    pub sets: Vec<AdmissibleSet>,
    pub n_bar: usize,
    pub steady_state: SteadyStateSets,
}

impl AdmissibleSequence {
    pub fn set(&self, n: usize) -> &AdmissibleSet {
        &self.sets[n.min(self.n_bar)]
    }
}

/// Builds the sequence and runs an invariance audit with `audit_samples`
/// random triples before returning.
pub fn build_sequence(
    pred: &PredictionModel,
    bounding: &BoundingSequence,
    params: &TighteningParams,
    audit_samples: usize,
    seed: u64,
) -> Result<AdmissibleSequence> {
    let ops = HOperators::new(pred)?;
    let mut table = SupportTable::new(pred, bounding)?;
    let steady_state = steady_state_sets(&mut table, params)?;
    let mut sets = Vec::with_capacity(bounding.n_bar + 1);
    for n in 0..=bounding.n_bar {
        let set = finite_determination(pred, &ops, &mut table, &steady_state.sets[n], n, params.k_max)?;
        log::debug!("n = {n}: k* = {}, {} rows", set.k_star, set.polytope.len());
        sets.push(set);
    }
    let seq = AdmissibleSequence {
        sets,
        n_bar: bounding.n_bar,
        steady_state,
    };
    if audit_samples > 0 {
        let report = invariance_audit(&seq, pred, bounding, audit_samples, seed)?;
        if report.failures > 0 {
            return Err(RgError::AuditFailure {
                failures: report.failures,
            });
        }
    }
    Ok(seq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    pub failures: usize,
    /// Largest successor row violation seen (negative when all inside).
    pub worst_violation: f64,
}

/// Checks that holding `v` keeps `(v, x̂⁺)` admissible at `n + 1` for
/// random `n`, `(v, x̂) ∈ Õ∞,n` and `e ∈ Ω_n`.
pub fn invariance_audit(
    seq: &AdmissibleSequence,
    pred: &PredictionModel,
    bounding: &BoundingSequence,
    samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samplers: Vec<Option<sampling::PolytopeSampler>> = vec![None; seq.n_bar + 1];
    let tol = NumericPolicy::DEFAULT.geometric;
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let n = rng.random_range(0..=seq.n_bar);
        let set = seq.set(n);
        let sampler = match &mut samplers[n] {
            Some(s) => s,
            slot => slot.insert(sampling::PolytopeSampler::new(&set.polytope)?),
        };
        let z = sampler.sample(&mut rng)?;
        let (v, x) = split(&z, set.n_v);
        let e = sampling::sample_set(bounding.omega(n), &mut rng)?;
        let next = pred.step(&x, &v, &e);
        let viol = seq.set(n + 1).polytope.max_violation(&AdmissibleSet::stack(&v, &next));
        worst = worst.max(viol);
        if viol > tol {
            failures += 1;
        }
    }
    Ok(AuditReport {
        samples,
        failures,
        worst_violation: worst,
    })
}

pub fn split(z: &DVector<f64>, n_v: usize) -> (DVector<f64>, DVector<f64>) {
    (
        z.rows(0, n_v).into_owned(),
        z.rows(n_v, z.len() - n_v).into_owned(),
    )
}

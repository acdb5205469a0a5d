//! Linear programs over a handful of variables and many inequality rows.
//!
//! `maximize cᵀx s.t. Gx ≤ h` is solved through its dual
//! `minimize hᵀλ s.t. Gᵀλ = c, λ ≥ 0`, which has only `d` equality rows.
//! A revised simplex with an explicit `d × d` basis inverse therefore costs
//! `O(m d)` per iteration, which suits the low-dimensional, row-heavy
//! problems that appear in support-function and redundancy queries.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RgError};

const PIVOT_TOL: f64 = 1e-9;
const REDUCED_COST_TOL: f64 = 1e-10;
const PHASE_ONE_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 40;
const DEGENERATE_BEFORE_BLAND: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: DVector<f64> },
    Unbounded,
    Infeasible,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Standard-form problem `min costᵀλ s.t. Aλ = rhs, λ ≥ 0`, with the
/// columns of `A` stored contiguously.
struct StandardForm<'a> {
    d: usize,
    columns: &'a [f64],
    costs: &'a [f64],
    rhs: &'a [f64],
}

enum StandardOutcome {
    Optimal {
        multipliers: Vec<f64>,
        weights: Vec<(usize, f64)>,
    },
    /// Phase one could not reach `Aλ = rhs`.
    Infeasible,
    /// The objective decreases without bound.
    Unbounded,
}

struct Tableau<'a> {
    form: &'a StandardForm<'a>,
    m: usize,
    sign: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Pivoted,
}

impl<'a> Tableau<'a> {
    fn new(form: &'a StandardForm<'a>) -> Self {
        let d = form.d;
        let m = form.columns.len() / d.max(1);
        let sign: Vec<f64> = form
            .rhs
            .iter()
            .map(|r| if *r < 0.0 { -1.0 } else { 1.0 })
            .collect();
        let rhs: Vec<f64> = form.rhs.iter().map(|r| r.abs()).collect();
        let mut binv = vec![0.0; d * d];
        for i in 0..d {
            binv[i * d + i] = 1.0;
        }
        Tableau {
            form,
            m,
            sign,
            xb: rhs.clone(),
            rhs,
            basis: (m..m + d).collect(),
            in_basis: vec![false; m],
            binv,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.m
    }

    fn column_entry(&self, var: usize, row: usize) -> f64 {
        if var >= self.m {
            if var - self.m == row {
                1.0
            } else {
                0.0
            }
        } else {
            self.sign[row] * self.form.columns[var * self.form.d + row]
        }
    }

    fn cost(&self, var: usize, phase_one: bool) -> f64 {
        match (phase_one, self.is_artificial(var)) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            (false, true) => 0.0,
            (false, false) => self.form.costs[var],
        }
    }

    fn multipliers(&self, phase_one: bool) -> Vec<f64> {
        let d = self.form.d;
        let mut y = vec![0.0; d];
        for (r, var) in self.basis.iter().enumerate() {
            let c = self.cost(*var, phase_one);
            if c != 0.0 {
                for k in 0..d {
                    y[k] += c * self.binv[r * d + k];
                }
            }
        }
        y
    }

    fn direction(&self, var: usize) -> Vec<f64> {
        let d = self.form.d;
        let mut out = vec![0.0; d];
        if var >= self.m {
            let i = var - self.m;
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.binv[r * d + i];
            }
        } else {
            let col = &self.form.columns[var * d..(var + 1) * d];
            for (r, o) in out.iter_mut().enumerate() {
                let row = &self.binv[r * d..(r + 1) * d];
                *o = row
                    .iter()
                    .zip(col.iter())
                    .zip(self.sign.iter())
                    .map(|((b, c), s)| b * c * s)
                    .sum();
            }
        }
        out
    }

    fn refactor(&mut self) -> Result<()> {
        let d = self.form.d;
        let mut b = DMatrix::zeros(d, d);
        for (c, var) in self.basis.iter().enumerate() {
            for r in 0..d {
                b[(r, c)] = self.column_entry(*var, r);
            }
        }
        let inv = b.try_inverse().ok_or(RgError::RankDeficient {
            what: "simplex basis",
        })?;
        for r in 0..d {
            for c in 0..d {
                self.binv[r * d + c] = inv[(r, c)];
            }
        }
        for r in 0..d {
            let v: f64 = (0..d).map(|k| self.binv[r * d + k] * self.rhs[k]).sum();
            self.xb[r] = if v.abs() < 1e-14 { 0.0 } else { v };
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn pivot(&mut self, row: usize, var: usize, dir: &[f64]) {
        let d = self.form.d;
        let piv = dir[row];
        for k in 0..d {
            self.binv[row * d + k] /= piv;
        }
        for r in 0..d {
            if r != row && dir[r] != 0.0 {
                let f = dir[r];
                for k in 0..d {
                    self.binv[r * d + k] -= f * self.binv[row * d + k];
                }
            }
        }
        let theta = self.xb[row] / piv;
        for r in 0..d {
            if r != row {
                self.xb[r] -= theta * dir[r];
                if self.xb[r] < 0.0 && self.xb[r] > -1e-12 {
                    self.xb[r] = 0.0;
                }
            }
        }
        self.xb[row] = theta.max(0.0);
        let leaving = self.basis[row];
        if leaving < self.m {
            self.in_basis[leaving] = false;
        }
        self.basis[row] = var;
        self.in_basis[var] = true;
        self.since_refactor += 1;
    }

    fn step(&mut self, phase_one: bool, bland: bool) -> Result<Step> {
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        let d = self.form.d;
        let y = self.multipliers(phase_one);
        let sy: Vec<f64> = y.iter().zip(self.sign.iter()).map(|(a, b)| a * b).collect();

        let mut entering = None;
        let mut best = -REDUCED_COST_TOL;
        for j in 0..self.m {
            if self.in_basis[j] {
                continue;
            }
            let col = &self.form.columns[j * d..(j + 1) * d];
            let dot: f64 = col.iter().zip(sy.iter()).map(|(a, b)| a * b).sum();
            let rc = self.cost(j, phase_one) - dot;
            if rc < best {
                entering = Some(j);
                if bland {
                    break;
                }
                best = rc;
            }
        }
        let Some(var) = entering else {
            return Ok(Step::Optimal);
        };

        let dir = self.direction(var);
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..d {
            let art = self.is_artificial(self.basis[r]);
            let blocking = if art && !phase_one {
                dir[r].abs() > PIVOT_TOL
            } else {
                dir[r] > PIVOT_TOL
            };
            if !blocking {
                continue;
            }
            let ratio = if art && !phase_one {
                0.0
            } else {
                self.xb[r] / dir[r]
            };
            let better = match leave {
                None => true,
                Some((lr, lt)) => {
                    if ratio < lt - 1e-12 {
                        true
                    } else if ratio <= lt + 1e-12 {
                        if bland {
                            self.basis[r] < self.basis[lr]
                        } else {
                            dir[r].abs() > dir[lr].abs()
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                leave = Some((r, ratio));
            }
        }
        let Some((row, _)) = leave else {
            return Ok(Step::Unbounded);
        };
        // A negative pivot only occurs for an artificial held at zero, so
        // the step length is zero and feasibility is kept.
        self.pivot(row, var, &dir);
        Ok(Step::Pivoted)
    }

    fn run(&mut self, phase_one: bool) -> Result<Step> {
        let limit = 50 * (self.m + self.form.d) + 200;
        let mut degenerate = 0usize;
        loop {
            if self.iterations > limit {
                return Err(RgError::LpIterationLimit(limit));
            }
            self.iterations += 1;
            let before: f64 = self.objective(phase_one);
            match self.step(phase_one, degenerate > DEGENERATE_BEFORE_BLAND)? {
                Step::Pivoted => {
                    let after = self.objective(phase_one);
                    if after < before - 1e-13 * (1.0 + before.abs()) {
                        degenerate = 0;
                    } else {
                        degenerate += 1;
                    }
                }
                other => return Ok(other),
            }
        }
    }

    fn objective(&self, phase_one: bool) -> f64 {
        self.basis
            .iter()
            .zip(self.xb.iter())
            .map(|(v, x)| self.cost(*v, phase_one) * x)
            .sum()
    }

    fn drive_out_artificials(&mut self) {
        let d = self.form.d;
        for row in 0..d {
            if !self.is_artificial(self.basis[row]) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.m {
                if self.in_basis[j] {
                    continue;
                }
                let col = &self.form.columns[j * d..(j + 1) * d];
                let e: f64 = (0..d)
                    .map(|k| self.binv[row * d + k] * col[k] * self.sign[k])
                    .sum();
                if e.abs() > 1e-7 && best.is_none_or(|(_, b)| e.abs() > b) {
                    best = Some((j, e.abs()));
                }
            }
            if let Some((j, _)) = best {
                let dir = self.direction(j);
                self.xb[row] = 0.0;
                self.pivot(row, j, &dir);
            }
        }
        let _ = self.refactor();
    }
}

fn solve_standard(form: &StandardForm<'_>) -> Result<StandardOutcome> {
    let d = form.d;
    let mut t = Tableau::new(form);
    if d == 0 {
        return Ok(StandardOutcome::Optimal {
            multipliers: vec![],
            weights: vec![],
        });
    }
    t.run(true)?;
    let scale = 1.0 + form.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if t.objective(true) > PHASE_ONE_TOL * scale {
        return Ok(StandardOutcome::Infeasible);
    }
    t.drive_out_artificials();
    match t.run(false)? {
        Step::Unbounded => Ok(StandardOutcome::Unbounded),
        _ => {
            let y = t.multipliers(false);
            let multipliers = y.iter().zip(t.sign.iter()).map(|(a, s)| a * s).collect();
            let weights = t
                .basis
                .iter()
                .zip(t.xb.iter())
                .filter(|(v, _)| **v < t.m)
                .map(|(v, x)| (*v, *x))
                .collect();
            Ok(StandardOutcome::Optimal {
                multipliers,
                weights,
            })
        }
    }
}

/// Rows of `Gx ≤ h` scaled to unit normals; zero rows are dropped after
/// checking their offsets.
struct NormalizedRows {
    columns: Vec<f64>,
    offsets: Vec<f64>,
    /// Original row of each kept row.
    index: Vec<usize>,
    trivially_infeasible: bool,
}

fn normalize_rows(normals: &DMatrix<f64>, offsets: &DVector<f64>) -> NormalizedRows {
    let d = normals.ncols();
    let mut columns = Vec::with_capacity(normals.nrows() * d);
    let mut out_offsets = Vec::with_capacity(normals.nrows());
    let mut index = Vec::with_capacity(normals.nrows());
    let mut trivially_infeasible = false;
    for i in 0..normals.nrows() {
        let row = normals.row(i);
        let norm = row.norm();
        if norm < 1e-13 {
            if offsets[i] < -1e-9 {
                trivially_infeasible = true;
            }
            continue;
        }
        columns.extend(row.iter().map(|v| v / norm));
        out_offsets.push(offsets[i] / norm);
        index.push(i);
    }
    NormalizedRows {
        columns,
        offsets: out_offsets,
        index,
        trivially_infeasible,
    }
}

/// Maximizes `objective · x` over `{x : normals · x ≤ offsets}`.
pub fn maximize(
    objective: &DVector<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
) -> Result<LpOutcome> {
    Ok(maximize_with_basis(objective, normals, offsets)?.0)
}

/// Like [`maximize`], also returning the original indices of the rows in
/// the optimal basis (empty unless optimal).
fn maximize_with_basis(
    objective: &DVector<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
) -> Result<(LpOutcome, Vec<usize>)> {
    let d = normals.ncols();
    if objective.len() != d {
        return Err(RgError::DimensionMismatch {
            context: "LP objective",
            expected: d,
            actual: objective.len(),
        });
    }
    if offsets.len() != normals.nrows() {
        return Err(RgError::DimensionMismatch {
            context: "LP offsets",
            expected: normals.nrows(),
            actual: offsets.len(),
        });
    }
    let rows = normalize_rows(normals, offsets);
    if rows.trivially_infeasible {
        return Ok((LpOutcome::Infeasible, vec![]));
    }
    let scale = objective.norm();
    if scale < 1e-300 {
        let out = match chebyshev_normalized(d, &rows)? {
            Some((center, radius)) if radius >= -1e-9 => LpOutcome::Optimal {
                value: 0.0,
                point: center,
            },
            _ => LpOutcome::Infeasible,
        };
        return Ok((out, vec![]));
    }
    let rhs: Vec<f64> = objective.iter().map(|c| c / scale).collect();
    let form = StandardForm {
        d,
        columns: &rows.columns,
        costs: &rows.offsets,
        rhs: &rhs,
    };
    match solve_standard(&form)? {
        StandardOutcome::Optimal {
            multipliers,
            weights,
        } => {
            let value: f64 = weights.iter().map(|(j, w)| rows.offsets[*j] * w).sum();
            let basis = weights.iter().map(|(j, _)| rows.index[*j]).collect();
            Ok((
                LpOutcome::Optimal {
                    value: value * scale,
                    point: DVector::from_vec(multipliers),
                },
                basis,
            ))
        }
        StandardOutcome::Unbounded => Ok((LpOutcome::Infeasible, vec![])),
        StandardOutcome::Infeasible => match chebyshev_normalized(d, &rows)? {
            Some((_, radius)) if radius >= -1e-9 => Ok((LpOutcome::Unbounded, vec![])),
            _ => Ok((LpOutcome::Infeasible, vec![])),
        },
    }
}

/// Optimal basis remembered between [`maximize_warm`] calls that share the
/// normals and differ only in offsets. A new objective discards it.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    rows: Vec<usize>,
    inverse: Option<DMatrix<f64>>,
    objective: Option<DVector<f64>>,
}

/// [`maximize`] that first tries the remembered basis: when its vertex is
/// feasible for the new offsets it is optimal, since dual feasibility does
/// not depend on the offsets.
pub fn maximize_warm(
    objective: &DVector<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    warm: &mut WarmStart,
) -> Result<LpOutcome> {
    if warm.objective.as_ref() != Some(objective) {
        warm.inverse = None;
    }
    if let Some(inv) = &warm.inverse {
        if offsets.len() == normals.nrows() && inv.ncols() == warm.rows.len() {
            let hb = DVector::from_iterator(warm.rows.len(), warm.rows.iter().map(|i| offsets[*i]));
            let x = inv * hb;
            let slack_tol = 1e-10 * (1.0 + offsets.amax());
            if (normals * &x - offsets).max() <= slack_tol {
                return Ok(LpOutcome::Optimal {
                    value: objective.dot(&x),
                    point: x,
                });
            }
        }
    }
    let (out, basis) = maximize_with_basis(objective, normals, offsets)?;
    warm.inverse = None;
    let d = normals.ncols();
    if basis.len() == d && d > 0 {
        let gb = normals.select_rows(basis.iter());
        if let Some(inv) = gb.clone().try_inverse() {
            let lambda = inv.transpose() * objective;
            if lambda.iter().all(|l| *l >= -1e-12 * (1.0 + objective.amax())) {
                warm.rows = basis;
                warm.inverse = Some(inv);
                warm.objective = Some(objective.clone());
            }
        }
    }
    Ok(out)
}

/// Radius cap used when the inscribed ball is unbounded.
pub const CHEBYSHEV_RADIUS_CAP: f64 = 1e9;

fn chebyshev_normalized(d: usize, rows: &NormalizedRows) -> Result<Option<(DVector<f64>, f64)>> {
    let m = rows.offsets.len();
    let mut columns = Vec::with_capacity((m + 1) * (d + 1));
    for i in 0..m {
        columns.extend_from_slice(&rows.columns[i * d..(i + 1) * d]);
        columns.push(1.0);
    }
    columns.extend(std::iter::repeat_n(0.0, d));
    columns.push(1.0);
    let mut costs = rows.offsets.clone();
    costs.push(CHEBYSHEV_RADIUS_CAP);
    let mut rhs = vec![0.0; d + 1];
    rhs[d] = 1.0;
    let form = StandardForm {
        d: d + 1,
        columns: &columns,
        costs: &costs,
        rhs: &rhs,
    };
    match solve_standard(&form)? {
        StandardOutcome::Optimal { multipliers, .. } => {
            let center = DVector::from_iterator(d, multipliers.iter().take(d).cloned());
            Ok(Some((center, multipliers[d])))
        }
        _ => Ok(None),
    }
}

/// Center and radius of the largest ball inside `{x : Gx ≤ h}`. A negative
/// radius means the set is empty; the radius is capped at
/// [`CHEBYSHEV_RADIUS_CAP`].
pub fn chebyshev_center(
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let d = normals.ncols();
    let rows = normalize_rows(normals, offsets);
    if rows.trivially_infeasible {
        return Ok((DVector::zeros(d), -1.0));
    }
    chebyshev_normalized(d, &rows)?.ok_or(RgError::EmptySet {
        context: "Chebyshev center".into(),
    })
}

/// Whether `x` is a convex combination of `points` (within `tol`).
pub fn in_convex_hull(points: &[DVector<f64>], x: &DVector<f64>, tol: f64) -> Result<bool> {
    if points.is_empty() {
        return Ok(false);
    }
    let d = x.len();
    let mut columns = Vec::with_capacity(points.len() * (d + 1));
    for p in points {
        if p.len() != d {
            return Err(RgError::DimensionMismatch {
                context: "hull membership",
                expected: d,
                actual: p.len(),
            });
        }
        columns.extend(p.iter().cloned());
        columns.push(1.0);
    }
    let costs = vec![0.0; points.len()];
    let mut rhs: Vec<f64> = x.iter().cloned().collect();
    rhs.push(1.0);
    // Phase one alone decides feasibility; relax by `tol` through a final
    // distance check on the recovered combination.
    let form = StandardForm {
        d: d + 1,
        columns: &columns,
        costs: &costs,
        rhs: &rhs,
    };
    match solve_standard(&form)? {
        StandardOutcome::Optimal { weights, .. } => {
            let mut y = DVector::zeros(d);
            for (j, w) in weights {
                y += &points[j] * w;
            }
            Ok((y - x).amax() <= tol.max(1e-9))
        }
        _ => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
        )
    }

    #[test]
    fn square_support() {
        let (g, h) = unit_square();
        let c = DVector::from_vec(vec![1.0, 1.0]);
        match maximize(&c, &g, &h).unwrap() {
            LpOutcome::Optimal { value, point } => {
                assert_relative_eq!(value, 2.0, epsilon = 1e-12);
                assert_relative_eq!(point[0], 1.0, epsilon = 1e-12);
                assert_relative_eq!(point[1], 1.0, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn halfplane_is_unbounded() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let h = DVector::from_vec(vec![1.0]);
        let c = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(maximize(&c, &g, &h).unwrap(), LpOutcome::Unbounded);
        // bounded objective over an unbounded region
        let c = DVector::from_vec(vec![2.0, 0.0]);
        assert_relative_eq!(maximize(&c, &g, &h).unwrap().value().unwrap(), 2.0);
    }

    #[test]
    fn detects_empty() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_vec(vec![-1.0, -1.0]);
        let c = DVector::from_vec(vec![1.0]);
        assert_eq!(maximize(&c, &g, &h).unwrap(), LpOutcome::Infeasible);
        let (_, r) = chebyshev_center(&g, &h).unwrap();
        assert!(r < 0.0);
    }

    #[test]
    fn degenerate_flat_set() {
        // x in [0,0], y in [-1,1] with duplicated rows
        let g = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0, 2.0, 1.0],
        );
        let h = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 3.0]);
        assert_relative_eq!(
            maximize(&c, &g, &h).unwrap().value().unwrap(),
            3.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn chebyshev_of_square() {
        let (g, h) = unit_square();
        let (c, r) = chebyshev_center(&g, &h).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        assert!(c.norm() < 1e-12);
    }

    #[test]
    fn hull_membership() {
        let pts = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        ];
        assert!(in_convex_hull(&pts, &DVector::from_vec(vec![0.2, 0.3]), 1e-9).unwrap());
        assert!(!in_convex_hull(&pts, &DVector::from_vec(vec![0.6, 0.6]), 1e-9).unwrap());
    }

    #[test]
    fn warm_start_matches_cold_solves() {
        // octagon-like family with drifting offsets
        let n = 16;
        let g = DMatrix::from_fn(n, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            if j == 0 { t.cos() } else { t.sin() }
        });
        let c = DVector::from_vec(vec![0.3, 1.0]);
        let mut warm = WarmStart::default();
        for step in 0..50 {
            let h = DVector::from_fn(n, |i, _| 1.0 + 0.3 * ((i * 7 + step) as f64 * 0.37).sin());
            let hot = maximize_warm(&c, &g, &h, &mut warm).unwrap().value().unwrap();
            let cold = maximize(&c, &g, &h).unwrap().value().unwrap();
            assert_relative_eq!(hot, cold, epsilon = 1e-9);
        }
    }
}

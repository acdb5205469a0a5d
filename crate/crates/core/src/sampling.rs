//! Random points in convex sets, used by audits and Monte Carlo checks.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Result, RgError};
use crate::lp::{self, LpOutcome};
use crate::sets::{ConvexSet, Polytope};

/// Box coordinates beyond this magnitude are clipped before sampling.
const COORD_CAP: f64 = 1e6;
const REJECTION_TRIES: usize = 200;

fn gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = gaussian(dim, rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Random points of an H-polytope: uniform by rejection from its bounding
/// box, or by dilation about the Chebyshev center when rejection rarely
/// succeeds.
#[derive(Debug, Clone)]
pub struct PolytopeSampler {
    polytope: Polytope,
    lower: DVector<f64>,
    upper: DVector<f64>,
    center: DVector<f64>,
    use_dilation: bool,
}

impl PolytopeSampler {
    pub fn new(polytope: &Polytope) -> Result<Self> {
        let (center, radius) = polytope.chebyshev_center()?;
        if radius < 0.0 {
            return Err(RgError::EmptySet {
                context: "polytope sampler".into(),
            });
        }
        let (lower, upper) = match polytope.bounding_box() {
            Ok(b) => b,
            Err(RgError::Unbounded) => {
                let d = polytope.dim();
                let mut lo = DVector::from_element(d, -COORD_CAP);
                let mut hi = DVector::from_element(d, COORD_CAP);
                for k in 0..d {
                    let mut e = DVector::zeros(d);
                    e[k] = 1.0;
                    if let LpOutcome::Optimal { value, .. } = lp::maximize(&e, polytope.normals(), polytope.offsets())? {
                        hi[k] = value;
                    }
                    e[k] = -1.0;
                    if let LpOutcome::Optimal { value, .. } = lp::maximize(&e, polytope.normals(), polytope.offsets())? {
                        lo[k] = -value;
                    }
                }
                (lo, hi)
            }
            Err(e) => return Err(e),
        };
        Ok(PolytopeSampler {
            polytope: polytope.clone(),
            lower: lower.map(|v| v.max(-COORD_CAP)),
            upper: upper.map(|v| v.min(COORD_CAP)),
            center,
            use_dilation: false,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<DVector<f64>> {
        if !self.use_dilation {
            for _ in 0..REJECTION_TRIES {
                let x = self.box_point(rng);
                if self.polytope.contains(&x, 0.0) {
                    return Ok(x);
                }
            }
            self.use_dilation = true;
        }
        self.dilation_point(rng)
    }

    fn box_point<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.lower.len(), |i, _| {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })
    }

    /// A point on the segment from the Chebyshev center to the extreme
    /// point in a random direction.
    fn dilation_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let c = unit_direction(self.center.len(), rng);
        let far = match lp::maximize(&c, self.polytope.normals(), self.polytope.offsets())? {
            LpOutcome::Optimal { point, .. } => point,
            _ => {
                // unbounded direction: stay inside the clipped box
                let b = self.box_point(rng);
                let d = &b - &self.center;
                let gd = self.polytope.normals() * &d;
                let slack = self.polytope.offsets() - self.polytope.normals() * &self.center;
                let mut reach: f64 = 1.0;
                for i in 0..gd.len() {
                    if gd[i] > 1e-14 {
                        reach = reach.min(slack[i].max(0.0) / gd[i]);
                    }
                }
                &self.center + d * reach
            }
        };
        let t: f64 = rng.random();
        Ok(&self.center + (far - &self.center) * t)
    }
}

fn dirichlet<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..count).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

fn combine<R: Rng + ?Sized>(points: &[DVector<f64>], rng: &mut R) -> DVector<f64> {
    let w = dirichlet(points.len(), rng);
    points.iter().zip(w).fold(DVector::zeros(points[0].len()), |acc, (p, w)| acc + p * w)
}

/// A random point of `set`. Polytopes use random convex combinations of
/// extreme points found by LP, so samples reach the boundary.
pub fn sample_set<R: Rng + ?Sized>(set: &ConvexSet, rng: &mut R) -> Result<DVector<f64>> {
    let dim = set.dim();
    match set {
        ConvexSet::Box(b) => Ok(DVector::from_fn(dim, |i, _| {
            let lo = b.lower()[i].max(-COORD_CAP);
            let hi = b.upper()[i].min(COORD_CAP);
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        })),
        ConvexSet::Ellipsoid(e) => {
            if dim == 0 {
                return Ok(DVector::zeros(0));
            }
            let u = unit_direction(dim, rng);
            let r: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
            // x = sqrt(level) L⁻ᵀ u r with P = L Lᵀ.
            let chol = e.shape().clone().cholesky().expect("validated at construction");
            let x = chol
                .l()
                .transpose()
                .solve_upper_triangular(&(u * (r * e.level().sqrt())))
                .expect("triangular factor is invertible");
            Ok(x)
        }
        ConvexSet::Polytope(p) => {
            if let Some(vs) = p.cached_vertices() {
                if !vs.is_empty() {
                    return Ok(combine(vs, rng));
                }
            }
            let mut points = Vec::with_capacity(dim + 1);
            for _ in 0..=dim {
                let c = unit_direction(dim, rng);
                match lp::maximize(&c, p.normals(), p.offsets())? {
                    LpOutcome::Optimal { point, .. } => points.push(point),
                    LpOutcome::Unbounded => return Err(RgError::Unbounded),
                    LpOutcome::Infeasible => {
                        return Err(RgError::EmptySet {
                            context: "sampled polytope".into(),
                        })
                    }
                }
            }
            Ok(combine(&points, rng))
        }
        ConvexSet::Hull(h) => Ok(combine(h.points(), rng)),
        ConvexSet::Image { map, set } => Ok(map * sample_set(set, rng)?),
        ConvexSet::Sum { terms, dim } => {
            let mut acc = DVector::zeros(*dim);
            for t in terms {
                acc += sample_set(t, rng)?;
            }
            Ok(acc)
        }
    }
}

/// A random extreme point of `set` in a random direction, or an interior
/// point for lazily represented sets.
pub fn sample_boundary<R: Rng + ?Sized>(set: &ConvexSet, rng: &mut R) -> Result<DVector<f64>> {
    let dim = set.dim();
    match set {
        ConvexSet::Box(b) if b.is_bounded() => Ok(DVector::from_fn(dim, |i, _| {
            if rng.random::<bool>() {
                b.upper()[i]
            } else {
                b.lower()[i]
            }
        })),
        ConvexSet::Ellipsoid(e) => {
            let c = unit_direction(dim, rng);
            let chol = e.shape().clone().cholesky().expect("validated at construction");
            let pinv_c = chol.solve(&c);
            let q = c.dot(&pinv_c).max(1e-300);
            Ok(pinv_c * (e.level() / q).sqrt())
        }
        ConvexSet::Polytope(p) => {
            let c = unit_direction(dim, rng);
            match lp::maximize(&c, p.normals(), p.offsets())? {
                LpOutcome::Optimal { point, .. } => Ok(point),
                LpOutcome::Unbounded => Err(RgError::Unbounded),
                LpOutcome::Infeasible => Err(RgError::EmptySet {
                    context: "sampled polytope".into(),
                }),
            }
        }
        ConvexSet::Hull(h) => Ok(h.points()[rng.random_range(0..h.points().len())].clone()),
        other => sample_set(other, rng),
    }
}

//! Vertex enumeration by the double-description method: start from a box
//! enclosing the polytope and cut it one halfspace at a time, creating new
//! vertices on edges that cross each cutting hyperplane.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RgError};
use crate::lp::{self, LpOutcome};

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn and(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }
    fn or_assign(&mut self, o: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&o.0) {
            *a |= b;
        }
    }
    fn count(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
    fn subset_of(&self, o: &Bits) -> bool {
        self.0.iter().zip(&o.0).all(|(a, b)| a & !b == 0)
    }
}

struct Vertex {
    point: DVector<f64>,
    active: Bits,
}

pub(crate) fn enumerate(
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    tol: f64,
) -> Result<Vec<DVector<f64>>> {
    let d = normals.ncols();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(normals.nrows());
    for i in 0..normals.nrows() {
        let g = normals.row(i).transpose();
        let n = g.norm();
        if n < 1e-14 {
            if offsets[i] < -tol {
                return Err(RgError::EmptySet {
                    context: "vertex enumeration".into(),
                });
            }
            continue;
        }
        rows.push((g / n, offsets[i] / n));
    }
    if d == 0 {
        return Ok(vec![DVector::zeros(0)]);
    }

    // Enclosing box from 2d LPs.
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for k in 0..d {
        for (sign, slot) in [(1.0, &mut hi), (-1.0, &mut lo)] {
            let mut e = DVector::zeros(d);
            e[k] = sign;
            match lp::maximize(&e, normals, offsets)? {
                LpOutcome::Optimal { value, .. } => slot[k] = sign * value,
                LpOutcome::Unbounded => return Err(RgError::Unbounded),
                LpOutcome::Infeasible => {
                    return Err(RgError::EmptySet {
                        context: "vertex enumeration".into(),
                    })
                }
            }
        }
    }
    let extent = (0..d).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let margin = 1.0 + extent;
    let scale = 1.0 + (0..d).map(|k| hi[k].abs().max(lo[k].abs())).fold(0.0, f64::max);
    let eps = tol.max(1e-12) * scale;

    let m = rows.len();
    let total = m + 2 * d;
    let mut verts: Vec<Vertex> = Vec::with_capacity(1 << d);
    for mask in 0..(1usize << d) {
        let mut p = DVector::zeros(d);
        let mut active = Bits::new(total);
        for k in 0..d {
            if mask & (1 << k) != 0 {
                p[k] = hi[k] + margin;
                active.set(m + 2 * k);
            } else {
                p[k] = lo[k] - margin;
                active.set(m + 2 * k + 1);
            }
        }
        verts.push(Vertex { point: p, active });
    }

    for (i, (g, h)) in rows.iter().enumerate() {
        let slack: Vec<f64> = verts.iter().map(|v| h - g.dot(&v.point)).collect();
        let minus: Vec<usize> = (0..verts.len()).filter(|j| slack[*j] < -eps).collect();
        if minus.is_empty() {
            for (j, v) in verts.iter_mut().enumerate() {
                if slack[j].abs() <= eps {
                    v.active.set(i);
                }
            }
            continue;
        }
        let plus: Vec<usize> = (0..verts.len()).filter(|j| slack[*j] > eps).collect();

        let mut created: Vec<Vertex> = Vec::new();
        for &p in &plus {
            for &q in &minus {
                let common = verts[p].active.and(&verts[q].active);
                if (common.count() as usize) + 1 < d {
                    continue;
                }
                let adjacent = verts
                    .iter()
                    .enumerate()
                    .all(|(r, v)| r == p || r == q || !common.subset_of(&v.active));
                if !adjacent {
                    continue;
                }
                let t = slack[p] / (slack[p] - slack[q]);
                let point = &verts[p].point + (&verts[q].point - &verts[p].point) * t;
                let mut active = common;
                active.set(i);
                if let Some(dup) = created
                    .iter_mut()
                    .find(|c| (&c.point - &point).amax() <= eps)
                {
                    dup.active.or_assign(&active);
                } else {
                    created.push(Vertex { point, active });
                }
            }
        }

        let mut next: Vec<Vertex> = Vec::with_capacity(plus.len() + created.len());
        for (j, mut v) in verts.into_iter().enumerate() {
            if slack[j] > eps {
                next.push(v);
            } else if slack[j] >= -eps {
                v.active.set(i);
                next.push(v);
            }
        }
        for c in created {
            if let Some(dup) = next.iter_mut().find(|v| (&v.point - &c.point).amax() <= eps) {
                dup.active.or_assign(&c.active);
            } else {
                next.push(c);
            }
        }
        verts = next;
    }

    Ok(verts.into_iter().map(|v| v.point).collect())
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rgov_core::sets::{self, BoxSet, ConvexSet, Ellipsoid, Polytope, VPolytope};

const TOL: f64 = 1e-9;

fn vec_strategy(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_map(DVector::from_vec)
}

fn direction(dim: usize) -> impl Strategy<Value = DVector<f64>> {
    vec_strategy(dim).prop_filter("nonzero", |v| v.norm() > 1e-3)
}

/// Bounded polytope: a box plus random cuts that keep the origin inside.
fn polytope(dim: usize) -> impl Strategy<Value = Polytope> {
    (
        prop::collection::vec(0.5f64..2.0, dim),
        prop::collection::vec((vec_strategy(dim), 0.2f64..1.5), 0..6),
    )
        .prop_map(move |(radii, cuts)| {
            let b = BoxSet::symmetric(&radii).unwrap().to_polytope();
            let extra = cuts.len();
            let g = DMatrix::from_fn(2 * dim + extra, dim, |i, j| {
                if i < 2 * dim {
                    b.normals()[(i, j)]
                } else {
                    cuts[i - 2 * dim].0[j]
                }
            });
            let h = DVector::from_fn(2 * dim + extra, |i, _| {
                if i < 2 * dim {
                    b.offsets()[i]
                } else {
                    cuts[i - 2 * dim].1
                }
            });
            Polytope::new(g, h).unwrap()
        })
}

fn hull(dim: usize) -> impl Strategy<Value = VPolytope> {
    prop::collection::vec(vec_strategy(dim), dim + 1..dim + 8).prop_map(move |pts| VPolytope::new(pts, dim).unwrap())
}

fn boxes(dim: usize) -> impl Strategy<Value = BoxSet> {
    prop::collection::vec((-1.0f64..1.0, 0.0f64..1.0), dim).prop_map(|b| {
        let lo = DVector::from_iterator(b.len(), b.iter().map(|(l, _)| *l));
        let hi = DVector::from_iterator(b.len(), b.iter().map(|(l, w)| l + w));
        BoxSet::new(lo, hi).unwrap()
    })
}

fn ellipsoid(dim: usize) -> impl Strategy<Value = Ellipsoid> {
    (prop::collection::vec(-1.0f64..1.0, dim * dim), 0.1f64..3.0).prop_map(move |(m, level)| {
        let m = DMatrix::from_vec(dim, dim, m);
        let shape = &m * m.transpose() + DMatrix::identity(dim, dim) * 0.5;
        Ellipsoid::new(shape, level).unwrap()
    })
}

fn any_set(dim: usize) -> impl Strategy<Value = ConvexSet> {
    prop_oneof![
        boxes(dim).prop_map(ConvexSet::from),
        ellipsoid(dim).prop_map(ConvexSet::from),
        polytope(dim).prop_map(ConvexSet::from),
        hull(dim).prop_map(ConvexSet::from),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_support_matches_vertex_support(p in polytope(3), dirs in prop::collection::vec(direction(3), 20)) {
        let verts = p.vertices(1e-9).unwrap();
        for a in &dirs {
            let lp = p.support(a).unwrap();
            let v = verts.iter().map(|x| a.dot(x)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((lp - v).abs() < 1e-7, "{lp} vs {v}");
        }
    }

    #[test]
    fn support_is_subadditive_and_homogeneous(s in any_set(3), a in direction(3), b in direction(3), t in 0.1f64..5.0) {
        let ha = s.support(&a).unwrap();
        let hb = s.support(&b).unwrap();
        let hab = s.support(&(&a + &b)).unwrap();
        prop_assert!(hab <= ha + hb + TOL * (1.0 + ha.abs() + hb.abs()));
        let scaled = s.support(&(&a * t)).unwrap();
        prop_assert!((scaled - t * ha).abs() <= TOL * (1.0 + scaled.abs()));
    }

    #[test]
    fn minkowski_support_adds(p in hull(2), q in polytope(2), dirs in prop::collection::vec(direction(2), 10)) {
        let ps: ConvexSet = p.into();
        let qs: ConvexSet = q.clone().with_enumerated_vertices(1e-9).unwrap().into();
        let sum = sets::minkowski_sum(&ps, &qs, 1e-12).unwrap();
        for a in &dirs {
            let lhs = sum.support(a).unwrap();
            let rhs = ps.support(a).unwrap() + q.support(a).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn pontryagin_of_sum_is_iterated(s1 in polytope(2), s2 in boxes(2), s3 in hull(2)) {
        let s1: ConvexSet = s1.into();
        let (s2, s3): (ConvexSet, ConvexSet) = (s2.into(), s3.into());
        let sum = sets::minkowski_sum(&s2, &s3, 1e-12).unwrap();
        let once = sets::pontryagin_diff(&s1, &sum).unwrap();
        let first: ConvexSet = sets::pontryagin_diff(&s1, &s2).unwrap().into();
        let twice = sets::pontryagin_diff(&first, &s3).unwrap();
        prop_assert!((once.offsets() - twice.offsets()).amax() < 1e-9);
    }

    #[test]
    fn shrunken_polytope_is_inside(p in polytope(3), alpha in 0.0f64..=1.0) {
        let small: ConvexSet = p.scaled(alpha).unwrap().into();
        prop_assert!(small.subset_of(&p.into(), TOL).unwrap());
    }

    #[test]
    fn affine_image_of_hull_matches_lazy(h in hull(3), m in prop::collection::vec(-2.0f64..2.0, 6), dirs in prop::collection::vec(direction(2), 10)) {
        let m = DMatrix::from_vec(2, 3, m);
        let hs: ConvexSet = h.into();
        let mapped = sets::affine_image(&hs, &m).unwrap();
        let lazy = ConvexSet::Image { map: m.clone(), set: Box::new(hs.clone()) };
        for a in &dirs {
            prop_assert!((mapped.support(a).unwrap() - lazy.support(a).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn double_description_round_trips(p in polytope(3)) {
        let v1 = p.vertices(1e-9).unwrap();
        let back: ConvexSet = VPolytope::new(v1.clone(), 3).unwrap().into();
        let h = back.halfspaces().unwrap();
        let v2 = h.vertices(1e-9).unwrap();
        prop_assert_eq!(v1.len(), v2.len());
        for v in &v1 {
            prop_assert!(v2.iter().any(|w| (v - w).amax() < 1e-7));
        }
    }

    #[test]
    fn contains_agrees_with_subset_of_singletons(s in any_set(2), x in vec_strategy(2)) {
        let point: ConvexSet = BoxSet::new(x.clone(), x.clone()).unwrap().into();
        let inside = s.contains(&x, 1e-9).unwrap();
        let subset = point.subset_of(&s, 1e-9).unwrap();
        prop_assert_eq!(inside, subset);
    }
}

#[test]
fn identity_image_keeps_support() {
    let s: ConvexSet = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 1.5)
        .unwrap()
        .into();
    let img = sets::affine_image(&s, &DMatrix::identity(2, 2)).unwrap();
    for a in [[1.0, 0.0], [0.3, -0.7], [-1.0, 2.0]] {
        let a = DVector::from_row_slice(&a);
        assert!((img.support(&a).unwrap() - s.support(&a).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn origin_is_inside_centered_sets() {
    let sets: Vec<ConvexSet> = vec![
        BoxSet::symmetric(&[1.0, 2.0]).unwrap().into(),
        Ellipsoid::ball(2, 0.5).unwrap().into(),
        BoxSet::symmetric(&[1.0, 1.0]).unwrap().to_polytope().into(),
    ];
    for s in &sets {
        assert!(s.contains(&DVector::zeros(2), 0.0).unwrap());
    }
}

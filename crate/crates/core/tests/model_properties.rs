use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgov_core::model::{self, InputMode, PlantModel};
use rgov_core::numeric::{rank, spectral_radius};
use rgov_core::scenario::Scenario;

fn system(name: &str) -> (Scenario, rgov_core::scenario::System) {
    let sc = Scenario::bundled(name).unwrap();
    let sys = sc.build_system().unwrap();
    (sc, sys)
}

/// Single-output gain placing the eigenvalues of `A - L C` at `poles`.
fn ackermann(a: &DMatrix<f64>, c: &DMatrix<f64>, poles: &[f64]) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut obs = DMatrix::<f64>::zeros(n, n);
    let mut row = c.clone();
    for i in 0..n {
        obs.set_row(i, &row.row(0));
        row = &row * a;
    }
    let mut phi = DMatrix::<f64>::identity(n, n);
    for p in poles {
        phi = &phi * (a - DMatrix::identity(n, n) * *p);
    }
    let mut last = DVector::<f64>::zeros(n);
    last[n - 1] = 1.0;
    let l: DVector<f64> = phi * obs.try_inverse()? * last;
    Some(DMatrix::from_column_slice(n, 1, l.as_slice()))
}

#[test]
fn bundled_observers_are_schur() {
    for name in ["spring_damper", "short_period", "icing"] {
        let (_, sys) = system(name);
        assert!(spectral_radius(&sys.observer.a_bar) < 1.0, "{name}");
    }
}

#[test]
fn pole_placement_sets_observer_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.6..0.6));
        let b = DMatrix::from_row_slice(2, 1, &[rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let plant = PlantModel::new(a, b, c, None, None, 1.0).unwrap();
        let mut a_ext = DMatrix::zeros(3, 3);
        a_ext.view_mut((0, 0), (2, 2)).copy_from(&plant.a);
        a_ext.view_mut((0, 2), (2, 1)).copy_from(&plant.b);
        a_ext[(2, 2)] = 1.0;
        let c_ext = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let obs_rank = rank(&DMatrix::from_rows(&[
            c_ext.row(0).into_owned(),
            (&c_ext * &a_ext).row(0).into_owned(),
            (&c_ext * &a_ext * &a_ext).row(0).into_owned(),
        ]), 1e-9);
        if obs_rank < 3 {
            continue;
        }
        let l = ackermann(&a_ext, &c_ext, &[0.5, 0.3, -0.2]).unwrap();
        let observer = model::build_observer(&plant, &l).unwrap();
        let rho = spectral_radius(&observer.a_bar);
        assert!((rho - 0.5).abs() < 1e-9, "radius {rho}");
    }
}

#[test]
fn short_period_closed_loop_is_schur() {
    let (_, sys) = system("short_period");
    assert!(spectral_radius(&sys.prediction.a_cl) < 1.0);
}

#[test]
fn subtracting_disturbance_shrinks_input_slab() {
    let (mut sc, _) = system("short_period");
    sc.constraints.input_mode = InputMode::SubtractW;
    let sys = sc.build_system().unwrap();
    let y = &sys.prediction.y_cl;
    let n_x = sys.plant.n_x();
    let limit = 40f64.to_radians();
    let mut seen = 0;
    for i in 0..y.len() {
        let g = y.normals().row(i);
        let gu = g[n_x];
        if gu != 0.0 {
            assert!(g.columns(0, n_x).amax() == 0.0);
            assert!((y.offsets()[i] / gu.abs() - (limit - 0.45)).abs() < 1e-12);
            seen += 1;
        }
    }
    assert_eq!(seen, 2);
}

#[test]
fn icing_model_satisfies_range_condition() {
    let (_, sys) = system("icing");
    let plant = &sys.plant;
    let h = plant.h.as_ref().unwrap();
    let hb = h * &plant.b;
    assert_eq!(rank(&hb, 1e-9), hb.nrows());
    let pinv = sys.prediction.hb_pinv.as_ref().unwrap();
    assert!((&hb * pinv - DMatrix::identity(hb.nrows(), hb.nrows())).amax() < 1e-10);
}

#[test]
fn spring_damper_control_law() {
    let (_, sys) = system("spring_damper");
    let u = model::control_input(
        &sys.plant,
        &sys.gains,
        &sys.prediction,
        &DVector::from_row_slice(&[1.0, 0.0]),
        &DVector::from_row_slice(&[0.2]),
        &DVector::zeros(1),
    )
    .unwrap();
    assert!((u[0] + 0.5962).abs() < 1e-12, "{u}");
}

/// Runs plant and observer side by side and compares the estimation error
/// with its own recursion, relative to state and gain size.
fn error_recursion_gap(plant: &PlantModel, l: &DMatrix<f64>, steps: usize, seed: u64) -> f64 {
    let observer = model::build_observer(plant, l).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = plant.n_x();
    let n_w = plant.n_w();
    let mut x = DVector::from_fn(n_x, |_, _| rng.random_range(-1.0..1.0));
    let mut w = DVector::from_fn(n_w, |_, _| rng.random_range(-0.5..0.5));
    let mut x_hat = DVector::zeros(n_x + n_w);
    let mut e = DVector::from_iterator(n_x + n_w, x.iter().chain(w.iter()).copied()) - &x_hat;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let u = DVector::from_fn(plant.n_u(), |_, _| rng.random_range(-1.0..1.0));
        let y = plant.output(&x);
        x_hat = observer.step(&x_hat, &u, &y);
        x = plant.step(&x, &u, &w);
        let w_next = &w + DVector::from_fn(n_w, |_, _| rng.random_range(-0.05..0.05));
        e = observer.error_step(&e, &(&w_next - &w));
        w = w_next;
        let x_ext = DVector::from_iterator(n_x + n_w, x.iter().chain(w.iter()).copied());
        let truth = &x_ext - &x_hat;
        worst = worst.max((&truth - &e).amax() / ((1.0 + x_ext.amax()) * (1.0 + l.amax())));
    }
    worst
}

#[test]
fn error_follows_its_recursion_on_bundled_plant() {
    let (_, sys) = system("spring_damper");
    assert!(error_recursion_gap(&sys.plant, &sys.observer.l, 500, 1) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn error_follows_its_recursion(a in prop::collection::vec(-0.7f64..0.7, 4), b in prop::collection::vec(0.3f64..1.5, 2), seed in any::<u64>()) {
        let plant = PlantModel::new(
            DMatrix::from_row_slice(2, 2, &a),
            DMatrix::from_row_slice(2, 1, &b),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            None,
            None,
            1.0,
        ).unwrap();
        let mut a_ext = DMatrix::zeros(3, 3);
        a_ext.view_mut((0, 0), (2, 2)).copy_from(&plant.a);
        a_ext.view_mut((0, 2), (2, 1)).copy_from(&plant.b);
        a_ext[(2, 2)] = 1.0;
        let c_ext = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let l = ackermann(&a_ext, &c_ext, &[0.4, 0.1, -0.3]);
        prop_assume!(l.as_ref().is_some_and(|l| l.amax() < 1e3));
        let l = l.unwrap();
        prop_assume!(model::build_observer(&plant, &l).is_ok());
        let gap = error_recursion_gap(&plant, &l, 500, seed);
        prop_assert!(gap < 1e-12, "gap {gap}");
    }
}

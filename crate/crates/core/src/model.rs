//! Plant, extended observer and the closed-loop prediction model used by
//! the admissible-set construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::numeric::{self, check_len, check_shape, concat, hstack, vstack, NumericPolicy};
use crate::serde_mat;
use crate::sets::{pontryagin_diff, ConvexSet, Polytope};

/// Discrete-time plant `x⁺ = A x + B (u + w)`, or `x⁺ = A x + B u + B1 w`
/// when `b1` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(with = "serde_mat::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub c: DMatrix<f64>,
    #[serde(default, with = "serde_mat::opt_matrix")]
    pub b1: Option<DMatrix<f64>>,
    #[serde(default, with = "serde_mat::opt_matrix")]
    pub h: Option<DMatrix<f64>>,
    pub sample_period: f64,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        b1: Option<DMatrix<f64>>,
        h: Option<DMatrix<f64>>,
        sample_period: f64,
    ) -> Result<Self> {
        let plant = PlantModel {
            a,
            b,
            c,
            b1,
            h,
            sample_period,
        };
        plant.validate()?;
        Ok(plant)
    }

    /// Zero-order-hold discretization of a continuous-time model. `B` and
    /// `B1` are discretized together so both see the same hold.
    pub fn from_continuous(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: DMatrix<f64>,
        b1: Option<&DMatrix<f64>>,
        h: Option<DMatrix<f64>>,
        sample_period: f64,
    ) -> Result<Self> {
        let n_u = b.ncols();
        let inputs = match b1 {
            Some(b1) => {
                check_shape(b1, a.nrows(), b1.ncols(), "continuous B1")?;
                hstack(b, b1)
            }
            None => b.clone(),
        };
        let (ad, bd) = numeric::discretize_zoh(a, &inputs, sample_period)?;
        let b_d = bd.columns(0, n_u).into_owned();
        let b1_d = b1.map(|m| bd.columns(n_u, m.ncols()).into_owned());
        PlantModel::new(ad, b_d, c, b1_d, h, sample_period)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        check_shape(&self.a, n, n, "plant A")?;
        check_shape(&self.b, n, self.b.ncols(), "plant B")?;
        check_shape(&self.c, self.c.nrows(), n, "plant C")?;
        if let Some(b1) = &self.b1 {
            check_shape(b1, n, b1.ncols(), "plant B1")?;
        }
        if let Some(h) = &self.h {
            check_shape(h, h.nrows(), n, "plant H")?;
        }
        if self.sample_period.is_nan() || self.sample_period <= 0.0 {
            return Err(RgError::InvalidParameter {
                name: "sample_period",
                reason: format!("must be positive, got {}", self.sample_period),
            });
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b1.as_ref().map_or(self.n_u(), |b1| b1.ncols())
    }

    pub fn is_matched(&self) -> bool {
        self.b1.is_none()
    }

    /// Matrix through which the disturbance enters.
    pub fn disturbance_map(&self) -> &DMatrix<f64> {
        self.b1.as_ref().unwrap_or(&self.b)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        match &self.b1 {
            None => &self.a * x + &self.b * (u + w),
            Some(b1) => &self.a * x + &self.b * u + b1 * w,
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `u + w ∈ U ⊖ (−W)`, which guarantees `u ∈ U`.
    #[default]
    SubtractW,
    /// `u + w ∈ U`.
    PlainU,
}

/// Constraint and uncertainty sets. `x` holds `Z` in the unmatched case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub x: ConvexSet,
    pub u: ConvexSet,
    pub w: ConvexSet,
    pub w_tilde: ConvexSet,
    pub e0: ConvexSet,
    #[serde(default)]
    pub input_mode: InputMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    #[serde(with = "serde_mat::matrix")]
    pub k: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub gamma: DMatrix<f64>,
    #[serde(default, with = "serde_mat::opt_matrix")]
    pub lambda: Option<DMatrix<f64>>,
}

impl ControllerGains {
    pub fn n_v(&self) -> usize {
        self.gamma.ncols()
    }
}

/// Luenberger observer over the extended state `(x, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverModel {
    pub a_ext: DMatrix<f64>,
    pub b_ext: DMatrix<f64>,
    pub c_ext: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub n_x: usize,
    pub n_w: usize,
}

impl ObserverModel {
    pub fn n_e(&self) -> usize {
        self.n_x + self.n_w
    }

    pub fn l_x(&self) -> DMatrix<f64> {
        self.l.rows(0, self.n_x).into_owned()
    }

    pub fn l_w(&self) -> DMatrix<f64> {
        self.l.rows(self.n_x, self.n_w).into_owned()
    }

    /// One observer update from the current extended estimate.
    pub fn step(&self, x_hat_ext: &DVector<f64>, u: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let innovation = y - &self.c_ext * x_hat_ext;
        &self.a_ext * x_hat_ext + &self.b_ext * u + &self.l * innovation
    }

    /// Error update `e⁺ = Ā e + B̄ Δw`.
    pub fn error_step(&self, e: &DVector<f64>, dw: &DVector<f64>) -> DVector<f64> {
        &self.a_bar * e + &self.b_bar * dw
    }

    /// Splits an extended vector into its state and disturbance parts.
    pub fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            v.rows(0, self.n_x).into_owned(),
            v.rows(self.n_x, self.n_w).into_owned(),
        )
    }
}

pub fn build_observer(plant: &PlantModel, l: &DMatrix<f64>) -> Result<ObserverModel> {
    plant.validate()?;
    let n_x = plant.n_x();
    let n_w = plant.n_w();
    let n_e = n_x + n_w;
    check_shape(l, n_e, plant.n_y(), "observer gain L")?;

    let mut a_ext = DMatrix::zeros(n_e, n_e);
    a_ext.view_mut((0, 0), (n_x, n_x)).copy_from(&plant.a);
    a_ext
        .view_mut((0, n_x), (n_x, n_w))
        .copy_from(plant.disturbance_map());
    a_ext
        .view_mut((n_x, n_x), (n_w, n_w))
        .copy_from(&DMatrix::identity(n_w, n_w));
    let b_ext = vstack(&plant.b, &DMatrix::zeros(n_w, plant.n_u()));
    let c_ext = hstack(&plant.c, &DMatrix::zeros(plant.n_y(), n_w));
    let a_bar = &a_ext - l * &c_ext;
    let b_bar = vstack(&DMatrix::zeros(n_x, n_w), &DMatrix::identity(n_w, n_w));
    numeric::ensure_schur(&a_bar, "observer error matrix", NumericPolicy::DEFAULT.algebraic)?;
    Ok(ObserverModel {
        a_ext,
        b_ext,
        c_ext,
        l: l.clone(),
        a_bar,
        b_bar,
        n_x,
        n_w,
    })
}

/// Closed-loop prediction model `x⁺ = A x + B v + B_w e`,
/// `y = C x + D v + D_w e ∈ Y_cl`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionModel {
    pub a_cl: DMatrix<f64>,
    pub b_cl: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub c_cl: DMatrix<f64>,
    pub d_cl: DMatrix<f64>,
    pub d_w: DMatrix<f64>,
    pub y_cl: Polytope,
    /// `(HB)†` for the unmatched control law; `None` when matched.
    pub hb_pinv: Option<DMatrix<f64>>,
}

impl PredictionModel {
    pub fn n_state(&self) -> usize {
        self.a_cl.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.b_cl.ncols()
    }

    pub fn n_e(&self) -> usize {
        self.b_w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.c_cl.nrows()
    }

    pub fn is_matched(&self) -> bool {
        self.hb_pinv.is_none()
    }

    pub fn output(&self, state: &DVector<f64>, v: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        &self.c_cl * state + &self.d_cl * v + &self.d_w * e
    }

    pub fn step(&self, state: &DVector<f64>, v: &DVector<f64>, e: &DVector<f64>) -> DVector<f64> {
        &self.a_cl * state + &self.b_cl * v + &self.b_w * e
    }
}

fn check_set_dim(s: &ConvexSet, dim: usize, context: &'static str) -> Result<()> {
    if s.dim() != dim {
        return Err(RgError::DimensionMismatch {
            context,
            expected: dim,
            actual: s.dim(),
        });
    }
    Ok(())
}

fn check_uncertainty(plant: &PlantModel, cons: &ConstraintSpec) -> Result<()> {
    check_set_dim(&cons.w, plant.n_w(), "W")?;
    check_set_dim(&cons.w_tilde, plant.n_w(), "W_tilde")?;
    check_set_dim(&cons.e0, plant.n_x() + plant.n_w(), "E0")
}

fn block_diag(p: &Polytope, q: &Polytope) -> Result<Polytope> {
    let mut g = DMatrix::zeros(p.len() + q.len(), p.dim() + q.dim());
    g.view_mut((0, 0), (p.len(), p.dim())).copy_from(p.normals());
    g.view_mut((p.len(), p.dim()), (q.len(), q.dim()))
        .copy_from(q.normals());
    Polytope::new(g, concat(p.offsets(), q.offsets()))
}

fn ensure_nonempty(p: &Polytope, context: &str) -> Result<()> {
    if p.is_empty(NumericPolicy::DEFAULT.algebraic)? {
        return Err(RgError::EmptySet {
            context: context.into(),
        });
    }
    Ok(())
}

pub fn build_prediction(
    plant: &PlantModel,
    gains: &ControllerGains,
    observer: &ObserverModel,
    cons: &ConstraintSpec,
) -> Result<PredictionModel> {
    if !plant.is_matched() {
        return Err(RgError::InvalidParameter {
            name: "plant",
            reason: "unmatched plants use build_unmatched".into(),
        });
    }
    let n_x = plant.n_x();
    let n_u = plant.n_u();
    let n_v = gains.n_v();
    check_shape(&gains.k, n_u, n_x, "gain K")?;
    check_shape(&gains.gamma, n_u, n_v, "gain Gamma")?;
    check_set_dim(&cons.x, n_x, "X")?;
    check_set_dim(&cons.u, n_u, "U")?;
    check_uncertainty(plant, cons)?;

    let a_cl = &plant.a + &plant.b * &gains.k;
    numeric::ensure_schur(&a_cl, "A + B K", NumericPolicy::DEFAULT.algebraic)?;
    let b_cl = &plant.b * &gains.gamma;
    let b_w = observer.l_x() * &observer.c_ext;
    let c_cl = vstack(&DMatrix::identity(n_x, n_x), &gains.k);
    let d_cl = vstack(&DMatrix::zeros(n_x, n_v), &gains.gamma);
    let d_w = DMatrix::identity(n_x + n_u, n_x + n_u);

    let u_eff = match cons.input_mode {
        InputMode::PlainU => cons.u.halfspaces()?,
        InputMode::SubtractW => {
            let neg_w = crate::sets::affine_image(&cons.w, &(-DMatrix::identity(n_u, n_u)))?;
            pontryagin_diff(&cons.u, &neg_w)?
        }
    };
    ensure_nonempty(&u_eff, "input constraints after disturbance tightening")?;
    let y_cl = block_diag(&cons.x.halfspaces()?, &u_eff)?;
    ensure_nonempty(&y_cl, "Y_cl")?;

    Ok(PredictionModel {
        a_cl,
        b_cl,
        b_w,
        c_cl,
        d_cl,
        d_w,
        y_cl,
        hb_pinv: None,
    })
}

/// `M†` with `M M† = I`; needs full row rank.
fn right_pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = m * m.transpose();
    let inv = gram
        .try_inverse()
        .ok_or(RgError::RankDeficient { what: "H B (H B)ᵀ" })?;
    Ok(m.transpose() * inv)
}

pub fn build_unmatched(
    plant: &PlantModel,
    gains: &ControllerGains,
    observer: &ObserverModel,
    z: &ConvexSet,
    cons: &ConstraintSpec,
) -> Result<PredictionModel> {
    let (Some(b1), Some(h)) = (&plant.b1, &plant.h) else {
        return Err(RgError::InvalidParameter {
            name: "plant",
            reason: "unmatched prediction needs B1 and H".into(),
        });
    };
    let lambda = gains.lambda.as_ref().ok_or(RgError::InvalidParameter {
        name: "gains",
        reason: "unmatched prediction needs Lambda".into(),
    })?;
    let n_x = plant.n_x();
    let n_z = h.nrows();
    let n_v = gains.n_v();
    let n_w = plant.n_w();
    check_shape(lambda, n_z, n_z, "gain Lambda")?;
    check_shape(&gains.gamma, n_z, n_v, "gain Gamma")?;
    check_set_dim(z, n_z, "Z")?;
    check_uncertainty(plant, cons)?;
    numeric::ensure_schur(lambda, "Lambda", NumericPolicy::DEFAULT.algebraic)?;

    let tol = NumericPolicy::DEFAULT.algebraic;
    let hb = h * &plant.b;
    let rank_hb = numeric::rank(&hb, tol);
    if rank_hb < hb.ncols().min(n_z) || rank_hb == 0 {
        return Err(RgError::RankDeficient { what: "H B" });
    }
    if numeric::rank(&hstack(&hb, &(h * b1)), tol) != rank_hb {
        return Err(RgError::RangeCondition);
    }
    if rank_hb < n_z {
        return Err(RgError::RankDeficient { what: "H B (H B)ᵀ" });
    }
    let hb_pinv = right_pseudo_inverse(&hb)?;

    let hlc = h * observer.l_x() * &plant.c;
    let b_w = hstack(&hlc, &DMatrix::zeros(n_z, n_w));
    let d_w = hstack(h, &DMatrix::zeros(n_z, n_w));
    let y_cl = z.halfspaces()?;
    ensure_nonempty(&y_cl, "Z")?;
    debug_assert_eq!(b_w.ncols(), n_x + n_w);

    Ok(PredictionModel {
        a_cl: lambda.clone(),
        b_cl: gains.gamma.clone(),
        b_w,
        c_cl: DMatrix::identity(n_z, n_z),
        d_cl: DMatrix::zeros(n_z, n_v),
        d_w,
        y_cl,
        hb_pinv: Some(hb_pinv),
    })
}

/// Control law for either model, from the current estimates.
pub fn control_input(
    plant: &PlantModel,
    gains: &ControllerGains,
    prediction: &PredictionModel,
    x_hat: &DVector<f64>,
    w_hat: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(x_hat, plant.n_x(), "state estimate")?;
    check_len(w_hat, plant.n_w(), "disturbance estimate")?;
    check_len(v, gains.n_v(), "reference command")?;
    match (&prediction.hb_pinv, &plant.h, &plant.b1, &gains.lambda) {
        (None, ..) => Ok(&gains.k * x_hat + &gains.gamma * v - w_hat),
        (Some(pinv), Some(h), Some(b1), Some(lambda)) => {
            let z_hat = h * x_hat;
            let target = -(h * &plant.a) * x_hat - (h * b1) * w_hat + lambda * z_hat + &gains.gamma * v;
            Ok(pinv * target)
        }
        _ => Err(RgError::InvalidParameter {
            name: "prediction",
            reason: "unmatched model without H, B1 or Lambda".into(),
        }),
    }
}

pub fn observer_step(
    observer: &ObserverModel,
    x_hat_ext: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    observer.step(x_hat_ext, u, y)
}

/// Prediction-model state for a plant-state estimate: `x̂` itself, or
/// `H x̂` in the unmatched case.
pub fn prediction_state(plant: &PlantModel, prediction: &PredictionModel, x_hat: &DVector<f64>) -> DVector<f64> {
    match (&prediction.hb_pinv, &plant.h) {
        (Some(_), Some(h)) => h * x_hat,
        _ => x_hat.clone(),
    }
}

/// Feedforward gain making the steady state of `T x` equal to `v` under
/// `u = K x + Γ v`.
pub fn tracking_gamma(plant: &PlantModel, k: &DMatrix<f64>, tracked: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = plant.n_x();
    check_shape(k, plant.n_u(), n, "gain K")?;
    check_shape(tracked, tracked.nrows(), n, "tracked output map")?;
    let resolvent = (DMatrix::identity(n, n) - &plant.a - &plant.b * k)
        .try_inverse()
        .ok_or(RgError::RankDeficient { what: "I - A - B K" })?;
    let dc = tracked * resolvent * &plant.b;
    dc.try_inverse()
        .ok_or(RgError::RankDeficient { what: "static gain" })
}

//! Scenario documents and the assembly of a complete governed system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admissible::{self, AdmissibleSequence, TighteningParams};
use crate::bounding::{self, BoundingMethod, BoundingSequence, TerminalSpec};
use crate::error::{Result, RgError};
use crate::model::{self, ConstraintSpec, ControllerGains, ObserverModel, PlantModel, PredictionModel};
use crate::serde_mat;
use crate::sim::{DisturbanceProfile, ReferenceSignal};

pub const SPRING_DAMPER: &str = include_str!("../../../scenarios/spring_damper.toml");
pub const SHORT_PERIOD: &str = include_str!("../../../scenarios/short_period.toml");
pub const ICING: &str = include_str!("../../../scenarios/icing.toml");

/// `(name, document)` for every bundled scenario.
pub fn bundled() -> [(&'static str, &'static str); 3] {
    [
        ("spring_damper", SPRING_DAMPER),
        ("short_period", SHORT_PERIOD),
        ("icing", ICING),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub time: TimeDomain,
    pub sample_period: f64,
    #[serde(with = "serde_mat::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub c: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_mat::opt_matrix")]
    pub b1: Option<DMatrix<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_mat::opt_matrix")]
    pub h: Option<DMatrix<f64>>,
}

impl PlantSpec {
    pub fn to_model(&self) -> Result<PlantModel> {
        match self.time {
            TimeDomain::Continuous => PlantModel::from_continuous(
                &self.a,
                &self.b,
                self.c.clone(),
                self.b1.as_ref(),
                self.h.clone(),
                self.sample_period,
            ),
            TimeDomain::Discrete => PlantModel::new(
                self.a.clone(),
                self.b.clone(),
                self.c.clone(),
                self.b1.clone(),
                self.h.clone(),
                self.sample_period,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSpec {
    #[serde(with = "serde_mat::matrix")]
    pub l: DMatrix<f64>,
}

fn default_c() -> f64 {
    2.0
}

fn default_n_l() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingSpec {
    pub method: BoundingMethod,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_n_l")]
    pub n_l: usize,
    #[serde(default)]
    pub seed: u64,
    pub n_bar: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_window: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_to: Option<usize>,
    /// Adds the directions queried by the constraint tightening to the
    /// polyhedral direction set.
    #[serde(default = "default_true")]
    pub constraint_directions: bool,
}

fn default_true() -> bool {
    true
}

impl BoundingSpec {
    pub fn terminal(&self) -> TerminalSpec {
        let mut t = TerminalSpec::at(self.n_bar);
        if let Some([lo, hi]) = self.terminal_window {
            t.window = (lo, hi);
        }
        if let Some(v) = self.verify_to {
            t.verify_to = v;
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_mat::opt_vector")]
    pub x0: Option<DVector<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_mat::opt_vector")]
    pub w0: Option<DVector<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_mat::opt_vector")]
    pub v0: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSpec,
    pub gains: ControllerGains,
    pub observer: ObserverSpec,
    pub constraints: ConstraintSpec,
    pub bounding: BoundingSpec,
    pub tightening: TighteningParams,
    pub reference: ReferenceSignal,
    pub disturbance: DisturbanceProfile,
    pub simulation: SimulationSpec,
}

/// Plant, controller, observer and prediction model of one scenario.
#[derive(Debug, Clone)]
pub struct System {
    pub plant: PlantModel,
    pub gains: ControllerGains,
    pub observer: ObserverModel,
    pub prediction: PredictionModel,
    pub constraints: ConstraintSpec,
}

/// Everything computed ahead of time for one bounding method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precomputed {
    pub bounding: BoundingSequence,
    pub admissible: AdmissibleSequence,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| RgError::Scenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RgError::Scenario(e.to_string()))
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let doc = bundled()
            .into_iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| RgError::Scenario(format!("no bundled scenario named {name}")))?
            .1;
        Scenario::from_toml_str(doc)
    }

    /// Structural checks that need no numerics.
    pub fn validate(&self) -> Result<()> {
        if !(self.plant.sample_period > 0.0) {
            return Err(RgError::InvalidParameter {
                name: "sample_period",
                reason: "must be positive".into(),
            });
        }
        if self.tightening.horizon == 0 {
            return Err(RgError::InvalidParameter {
                name: "horizon",
                reason: "must be at least 1".into(),
            });
        }
        if self.bounding.method == BoundingMethod::Polyhedral && self.bounding.n_l == 0 && self.plant.a.nrows() == 0 {
            return Err(RgError::InvalidParameter {
                name: "n_l",
                reason: "no bounding directions".into(),
            });
        }
        let n_v = self.gains.n_v();
        if self.reference.dim() != n_v {
            return Err(RgError::DimensionMismatch {
                context: "reference",
                expected: n_v,
                actual: self.reference.dim(),
            });
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<System> {
        let plant = self.plant.to_model()?;
        let observer = model::build_observer(&plant, &self.observer.l)?;
        let prediction = if plant.is_matched() {
            model::build_prediction(&plant, &self.gains, &observer, &self.constraints)?
        } else {
            model::build_unmatched(&plant, &self.gains, &observer, &self.constraints.x, &self.constraints)?
        };
        let w_dim = self.constraints.w.dim();
        if w_dim != plant.n_w() {
            return Err(RgError::DimensionMismatch {
                context: "disturbance set",
                expected: plant.n_w(),
                actual: w_dim,
            });
        }
        Ok(System {
            plant,
            gains: self.gains.clone(),
            observer,
            prediction,
            constraints: self.constraints.clone(),
        })
    }

    pub fn bounding_sequence(&self, system: &System, method: BoundingMethod) -> Result<BoundingSequence> {
        let cons = &self.constraints;
        let b = &self.bounding;
        match method {
            BoundingMethod::Ellipsoidal => {
                bounding::ellipsoidal_sequence(&system.observer, &cons.e0, &cons.w_tilde, b.c, b.n_bar)
            }
            BoundingMethod::Polyhedral => {
                let mut dirs = bounding::directions(system.observer.n_e(), b.n_l, b.seed);
                if b.constraint_directions {
                    let extra = bounding::constraint_directions(&system.prediction, self.tightening.horizon, &dirs);
                    dirs.extend(extra);
                }
                let mut seq = bounding::polyhedral_sequence(
                    &system.observer,
                    &cons.e0,
                    &cons.w_tilde,
                    dirs,
                    b.n_bar,
                    b.terminal(),
                )?;
                seq.seed = Some(b.seed);
                Ok(seq)
            }
        }
    }

    /// Bounding and admissible sequences; `audit_samples` random triples
    /// are checked for invariance before returning.
    pub fn precompute(&self, system: &System, method: BoundingMethod, audit_samples: usize) -> Result<Precomputed> {
        let bounding = self.bounding_sequence(system, method)?;
        let admissible = admissible::build_sequence(
            &system.prediction,
            &bounding,
            &self.tightening,
            audit_samples,
            self.bounding.seed,
        )?;
        Ok(Precomputed { bounding, admissible })
    }
}

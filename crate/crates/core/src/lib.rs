//! Online risk control for prediction sets.
//!
//! A calibration parameter theta is moved after every labeled example by
//! `gamma * (loss - r)`, and sets are built from it through a monotone
//! constructor. With safeguards that announce the empty set or the full
//! space once theta leaves `[m, M]`, the running average loss stays
//! within `O(1 / T)` of `r` on every stream, adversarial or not.
//!
//! The math is generic over [`Scalar`] (`f32`, `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod aci;
pub mod engine;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod multi;
pub mod scalar;
pub mod sets;
pub mod stretch;

pub use engine::{
    run_stream, safeguarded_construct, update_theta, CalibratorState, Certificate, LossContract, RiskSpec,
    RollingController, StepRecord, StreamTrace, Verdict,
};
pub use error::{Error, Result};
pub use losses::RiskLoss;
pub use models::{ClassifierModel, ImageModel, OnlineModel, QuantileModel};
pub use multi::{Aggregation, MultiRiskController, MultiRiskSpec, MultiTrace};
pub use scalar::Scalar;
pub use sets::{Label, PredictionSet, SetConstructor};
pub use stretch::{Stretch, StretchKind};

pub type RiskSpec64 = RiskSpec<f64>;
pub type RiskSpec32 = RiskSpec<f32>;
pub type CalibratorState64 = CalibratorState<f64>;
pub type PredictionSet64 = PredictionSet<f64>;
pub type Stretch64 = Stretch<f64>;
pub type StepRecord64 = StepRecord<f64>;
pub type StreamTrace64 = StreamTrace<f64>;
pub type MultiRiskSpec64 = MultiRiskSpec<f64>;
pub type MultiTrace64 = MultiTrace<f64>;
pub type LinearPinball64 = models::LinearPinball<f64>;
pub type GaussianOracle64 = models::GaussianOracle<f64>;
pub type AciConfig64 = aci::AciConfig<f64>;

//! Meal-bolus decision engine: Gaussian-process models of postprandial glucose, an
//! asymmetric risk-sensitive trajectory cost estimated by Monte Carlo, and bolus
//! selection by one-dimensional Bayesian optimization with expected improvement.
//!
//! The numerical core is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the `*F64` aliases below name the double-precision instantiations
//! used by the simulator and the application layer.

pub mod advisor;
pub mod ars;
pub mod bo;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod optim;
pub mod pg;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TrainedGpF64 = gp::TrainedGp<f64>;
pub type TrainedGpF32 = gp::TrainedGp<f32>;
pub type KernelParamsF64 = gp::KernelParams<f64>;
pub type PgPredictorF64 = pg::PgPredictor<f64>;
pub type PredictedTrajectoryF64 = pg::PredictedTrajectory<f64>;
pub type CostConfigF64 = ars::CostConfig<f64>;
pub type AdvisorConfigF64 = advisor::AdvisorConfig<f64>;
pub type BolusRecommendationF64 = advisor::BolusRecommendation<f64>;
pub type ObservationF64 = bo::Observation<f64>;

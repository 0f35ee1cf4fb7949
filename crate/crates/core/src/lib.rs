//! Learning time-variant SIDARTHE epidemic parameters with a regularized
//! gradient flow and temporal momentum.
//!
//! The numerical core ([`model`], [`integrator`], [`objective`],
//! [`optimizer`]) is generic over the floating-point type through
//! [`Scalar`]; the aliases below fix it to `f64`, which is what the data,
//! evaluation and command-line layers use.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod integrator;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RateVector = model::RateVector<f64>;
pub type StateVector = model::StateVector<f64>;
pub type AugmentedState = model::AugmentedState<f64>;
pub type InitialCondition = model::InitialCondition<f64>;
pub type SidartheModel = model::SidartheModel<f64>;
pub type TimeGrid = integrator::TimeGrid<f64>;
pub type ParamTrajectory = integrator::ParamTrajectory<f64>;
pub type Trajectory = integrator::Trajectory<f64>;
pub type FlatParams = objective::FlatParams<f64>;
pub type Problem = objective::Problem<f64>;
pub type ObjectiveBreakdown = objective::ObjectiveBreakdown<f64>;
pub type FitConfig = optimizer::FitConfig<f64>;
pub type FitResult = optimizer::FitResult<f64>;

pub type RateVectorF32 = model::RateVector<f32>;
pub type ParamTrajectoryF32 = integrator::ParamTrajectory<f32>;
pub type TrajectoryF32 = integrator::Trajectory<f32>;

//! Closed-loop linear covariance analysis for a planar UAV guidance,
//! navigation and control stack.
//!
//! The crate propagates the joint covariance of truth, navigation and
//! controller dispersions along a noise-free nominal, checks it against a
//! nonlinear Monte Carlo ensemble, and uses it as the collision check of a
//! chance-constrained RRT planner.
//!
//! Numeric modules are generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix the double-precision instantiation used by the simulators and
//! the planner.

pub mod collision;
pub mod ekf;
pub mod error;
pub mod lincov;
pub mod montecarlo;
pub mod rrt;
pub mod scalar;
pub mod scenario;
pub mod sysmodel;
pub mod uav;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CoefficientSet = sysmodel::CoefficientSet<f64>;
pub type NoiseSpec = sysmodel::NoiseSpec<f64>;
pub type UavModel = uav::UavModel<f64>;
pub type UavModel32 = uav::UavModel<f32>;
pub type ClosedLoop = uav::ClosedLoop<f64>;
pub type TruthState = uav::TruthState<f64>;
pub type NavState = uav::NavState<f64>;
pub type AugmentedCovariance = lincov::AugmentedCovariance<f64>;
pub type AugmentedSystem = lincov::AugmentedSystem<f64>;
pub type NominalTrajectory = lincov::NominalTrajectory<f64>;
pub type LinCovSeries = lincov::LinCovSeries<f64>;
pub type Gaussian2D = collision::Gaussian2D<f64>;
pub type Gaussian2D32 = collision::Gaussian2D<f32>;
pub type ObstacleMap = collision::ObstacleMap<f64>;

use thiserror::Error;

/// Errors raised by the covariance engine, simulators and planner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value in {function} at perturbation of input component {component}")]
    NonFiniteJacobian { function: String, component: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("innovation covariance is singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error(
        "{which} inverse is ill-conditioned (condition estimate {condition:e}); \
         the closed-loop coupling has the potential to become ill-conditioned"
    )]
    IllConditioned { which: &'static str, condition: f64 },

    #[error("non-finite covariance at t = {time} s")]
    NonFiniteCovariance { time: f64 },

    #[error("simulation blow-up in run {run} at t = {time} s")]
    SimulationBlowUp { run: usize, time: f64 },

    #[error("time grids are misaligned: {0}")]
    MisalignedGrid(String),

    #[error("vertex set is empty")]
    EmptyVertexSet,

    #[error("steer direction is zero: sample coincides with nearest vertex")]
    ZeroDirection,

    #[error("edge simulation exceeded time cap of {cap} s")]
    EdgeTimeout { cap: f64 },

    #[error("no path found")]
    NoPath,

    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

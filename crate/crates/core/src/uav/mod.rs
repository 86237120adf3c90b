//! Planar UAV instance of the closed-loop framework.

pub mod closed_loop;
mod model;
pub mod params;
mod path;
mod states;

pub use closed_loop::{ClosedLoop, GpsCoverage, LoopState, Rect, StepNoise, StepRecord};
pub use model::{
    filter_design_noise, filter_measurement_matrix, filter_noise_input, mapping_matrix_padded,
    UavModel, UavNominalPoint, UavSystem,
};
pub use params::{ControlParams, DisturbanceParams, SensorParams, UavParams, VehicleParams};
pub use path::{PathSegment, WaypointTracker};
pub use states::{
    ControlInput, ControllerState, DesiredState, GpsMeasurement, ImuMeasurement, NavState,
    TruthState,
};

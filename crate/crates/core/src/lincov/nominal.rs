use nalgebra::{DMatrix, Matrix4, Matrix4x3};

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar};
use crate::sysmodel::{CoefficientSet, Dimensions};
use crate::uav::{ClosedLoop, LoopState, StepNoise, UavModel, UavNominalPoint, WaypointTracker};

/// When nominal generation stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCondition {
    /// exactly this many steps
    Steps(usize),
    /// until the last waypoint's half-plane is crossed; error after `max_steps`
    RouteComplete { max_steps: usize },
}

/// Nominal quantities at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalSample<T: Scalar> {
    pub step: usize,
    pub time: T,
    /// state after any update at this step, with the control/IMU output and
    /// segment used over the following step
    pub point: UavNominalPoint<T>,
    pub segment_index: usize,
    pub gps_available: bool,
    /// gain of the update applied at this step, if one was applied
    pub gain: Option<Matrix4x3<T>>,
    pub p_hat: Matrix4<T>,
}

/// Noise-free closed-loop trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalTrajectory<T: Scalar> {
    pub model: UavModel<T>,
    pub dt: T,
    pub samples: Vec<NominalSample<T>>,
}

/// Source of linearized nominal data for the covariance engine.
pub trait LinearizedNominal<T: Scalar> {
    fn dimensions(&self) -> Dimensions;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn time(&self, k: usize) -> T;
    fn coefficients(&self, k: usize) -> CoefficientSet<T>;
    /// Gain of the discrete update applied at grid point `k`, if any.
    fn update_gain(&self, k: usize) -> Option<DMatrix<T>>;
    fn filter_covariance(&self, k: usize) -> DMatrix<T>;
}

fn sample<T: Scalar>(
    lp: &ClosedLoop<T>,
    state: &LoopState<T>,
    tracker: &mut WaypointTracker<T>,
    gain: Option<Matrix4x3<T>>,
) -> NominalSample<T> {
    tracker.update(&state.x_hat.position());
    let seg = *tracker.segment();
    let (u, y) = lp.current_outputs(state, &seg);
    NominalSample {
        step: state.step,
        time: lp.time(state.step),
        point: UavNominalPoint {
            x: state.x,
            x_hat: state.x_hat,
            x_check: state.x_check,
            u,
            y,
            segment: seg,
        },
        segment_index: tracker.active_index(),
        gps_available: lp.gps.available_at(&state.x.position()),
        gain,
        p_hat: state.p_hat,
    }
}

impl<T: Scalar> NominalTrajectory<T> {
    /// Runs the closed loop with every noise source zeroed from `state`,
    /// which is advanced in place along with `tracker`.
    pub fn simulate(
        lp: &ClosedLoop<T>,
        state: &mut LoopState<T>,
        tracker: &mut WaypointTracker<T>,
        stop: StopCondition,
    ) -> Result<Self> {
        let mut samples = vec![sample(lp, state, tracker, None)];
        let zero = StepNoise::zero();
        let mut taken = 0usize;
        loop {
            match stop {
                StopCondition::Steps(n) if taken >= n => break,
                StopCondition::RouteComplete { .. } if tracker.finished(&state.x_hat.position()) => break,
                StopCondition::RouteComplete { max_steps } if taken >= max_steps => {
                    return Err(Error::EdgeTimeout {
                        cap: to_f64(lp.time(max_steps)),
                    })
                }
                _ => {}
            }
            let rec = lp.step(state, tracker, &zero)?;
            taken += 1;
            samples.push(sample(lp, state, tracker, rec.gain));
        }
        Ok(Self {
            model: lp.model,
            dt: lp.dt,
            samples,
        })
    }

    pub fn duration(&self) -> T {
        self.dt * crate::scalar::lit::<T>((self.samples.len().max(1) - 1) as f64)
    }
}

impl<T: Scalar> LinearizedNominal<T> for NominalTrajectory<T> {
    fn dimensions(&self) -> Dimensions {
        Dimensions::UAV
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn time(&self, k: usize) -> T {
        self.samples[k].time
    }

    fn coefficients(&self, k: usize) -> CoefficientSet<T> {
        self.model.coefficient_set(&self.samples[k].point)
    }

    fn update_gain(&self, k: usize) -> Option<DMatrix<T>> {
        self.samples[k]
            .gain
            .map(|g| DMatrix::from_column_slice(4, 3, g.as_slice()))
    }

    fn filter_covariance(&self, k: usize) -> DMatrix<T> {
        DMatrix::from_column_slice(4, 4, self.samples[k].p_hat.as_slice())
    }
}

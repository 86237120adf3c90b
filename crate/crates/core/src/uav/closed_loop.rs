//! Fixed-step closed-loop simulation of truth, navigation filter and
//! controller. With zero noise the same stepper produces the nominal.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix4, Matrix4x2, Matrix4x3, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{filter_design_noise, filter_measurement_matrix, filter_noise_input, UavModel};
use super::path::{PathSegment, WaypointTracker};
use super::states::{ControlInput, ControllerState, ImuMeasurement, NavState, TruthState};
use crate::ekf;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// Axis-aligned rectangle in the north/east plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub north_min: f64,
    pub north_max: f64,
    pub east_min: f64,
    pub east_max: f64,
}

impl Rect {
    pub fn contains(&self, north: f64, east: f64) -> bool {
        north >= self.north_min
            && north <= self.north_max
            && east >= self.east_min
            && east <= self.east_max
    }

    pub fn is_valid(&self) -> bool {
        self.north_min < self.north_max && self.east_min < self.east_max
    }
}

/// GPS availability: fixes every `period_steps` integration steps except
/// inside the denied rectangles.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GpsCoverage {
    pub period_steps: usize,
    pub denied: Vec<Rect>,
}

impl GpsCoverage {
    pub fn available_at<T: Scalar>(&self, position: &Vector2<T>) -> bool {
        let (n, e) = (to_f64(position[0]), to_f64(position[1]));
        !self.denied.iter().any(|r| r.contains(n, e))
    }

    pub fn is_update_step(&self, step: usize) -> bool {
        self.period_steps > 0 && step > 0 && step % self.period_steps == 0
    }
}

/// Noise realization for one integration step. `w` and `eta` are held
/// constant across the RK4 stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNoise<T: Scalar> {
    pub w: Vector2<T>,
    pub eta: Vector2<T>,
    pub nu: Vector3<T>,
}

impl<T: Scalar> StepNoise<T> {
    pub fn zero() -> Self {
        Self {
            w: Vector2::zeros(),
            eta: Vector2::zeros(),
            nu: Vector3::zeros(),
        }
    }
}

/// Complete continuation state of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopState<T: Scalar> {
    pub step: usize,
    pub x: TruthState<T>,
    pub x_hat: NavState<T>,
    pub x_check: ControllerState<T>,
    pub p_hat: Matrix4<T>,
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord<T: Scalar> {
    /// segment used over the step
    pub segment: PathSegment<T>,
    /// control and IMU output at the start of the step
    pub u: ControlInput<T>,
    pub y: ImuMeasurement<T>,
    /// Kalman gain of the update applied at the end of the step, if any
    pub gain: Option<Matrix4x3<T>>,
}

/// Closed-loop stepper for the UAV GNC stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop<T: Scalar> {
    pub model: UavModel<T>,
    pub dt: T,
    pub gps: GpsCoverage,
    q_hat: Matrix2<T>,
    r_hat: Matrix3<T>,
    b_hat: Matrix4x2<T>,
    h_hat: Matrix3x4<T>,
}

impl<T: Scalar> ClosedLoop<T> {
    pub fn new(model: UavModel<T>, dt: T, gps: GpsCoverage) -> Self {
        let (q_hat, r_hat) = filter_design_noise(&model.params);
        Self {
            model,
            dt,
            gps,
            q_hat,
            r_hat,
            b_hat: filter_noise_input(),
            h_hat: filter_measurement_matrix(),
        }
    }

    pub fn time(&self, step: usize) -> T {
        self.dt * lit::<T>(step as f64)
    }

    /// Guidance, IMU output and control at a combined state.
    fn outputs(
        &self,
        seg: &PathSegment<T>,
        x: &TruthState<T>,
        x_hat: &NavState<T>,
        x_check: &ControllerState<T>,
        eta: &Vector2<T>,
    ) -> (ControlInput<T>, ImuMeasurement<T>) {
        let m = &self.model;
        let x_star = m.guidance(x_hat, seg);
        // the control law reads only the gyro channel, which does not depend on u
        let gyro = x.omega + eta[1];
        let pre = ImuMeasurement { accel: T::zero(), gyro };
        let u = m.controller_output(x_check, x_hat, &x_star, &pre);
        let mut y = m.continuous_measurement(x, &u);
        y.accel += eta[0];
        y.gyro = gyro;
        (u, y)
    }

    fn derivative(
        &self,
        seg: &PathSegment<T>,
        s: &SVector<T, 13>,
        noise: &StepNoise<T>,
    ) -> Result<SVector<T, 13>> {
        let x = TruthState::from_vector(&s.fixed_rows::<7>(0).into_owned());
        let x_hat = NavState::from_vector(&s.fixed_rows::<4>(7).into_owned());
        let x_check = ControllerState::from_vector(&s.fixed_rows::<2>(11).into_owned());
        let (u, y) = self.outputs(seg, &x, &x_hat, &x_check, &noise.eta);
        let m = &self.model;
        let x_star = m.guidance(&x_hat, seg);
        let mut d = SVector::<T, 13>::zeros();
        d.fixed_rows_mut::<7>(0)
            .copy_from(&m.truth_dynamics(&x, &u, &noise.w)?);
        d.fixed_rows_mut::<4>(7)
            .copy_from(&m.nav_propagation(&x_hat, &y));
        d.fixed_rows_mut::<2>(11)
            .copy_from(&m.controller_dynamics(&x_hat, &x_star));
        Ok(d)
    }

    /// Control and IMU output at the current state (noise-free).
    pub fn current_outputs(
        &self,
        state: &LoopState<T>,
        seg: &PathSegment<T>,
    ) -> (ControlInput<T>, ImuMeasurement<T>) {
        self.outputs(seg, &state.x, &state.x_hat, &state.x_check, &Vector2::zeros())
    }

    /// Advances `state` by one step of length `dt` following `seg`.
    pub fn step_on_segment(
        &self,
        state: &mut LoopState<T>,
        seg: &PathSegment<T>,
        noise: &StepNoise<T>,
    ) -> Result<StepRecord<T>> {
        let (u, y) = self.outputs(seg, &state.x, &state.x_hat, &state.x_check, &noise.eta);
        let mut s = SVector::<T, 13>::zeros();
        s.fixed_rows_mut::<7>(0).copy_from(&state.x.to_vector());
        s.fixed_rows_mut::<4>(7).copy_from(&state.x_hat.to_vector());
        s.fixed_rows_mut::<2>(11).copy_from(&state.x_check.to_vector());

        let dt = self.dt;
        let half = lit::<T>(0.5) * dt;
        let k1 = self.derivative(seg, &s, noise)?;
        let k2 = self.derivative(seg, &(s + k1 * half), noise)?;
        let k3 = self.derivative(seg, &(s + k2 * half), noise)?;
        let k4 = self.derivative(seg, &(s + k3 * dt), noise)?;
        let next = s + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit::<T>(6.0));

        let f_hat = self.model.filter_f(&state.x_hat);
        state.p_hat = ekf::propagate_covariance(&state.p_hat, &f_hat, &self.b_hat, &self.q_hat, dt);

        state.step += 1;
        state.x = TruthState::from_vector(&next.fixed_rows::<7>(0).into_owned()).wrapped();
        state.x_hat = NavState::from_vector(&next.fixed_rows::<4>(7).into_owned()).wrapped();
        state.x_check = ControllerState::from_vector(&next.fixed_rows::<2>(11).into_owned());

        let finite = next.iter().all(|v| v.is_finite()) && state.p_hat.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::SimulationBlowUp {
                run: 0,
                time: to_f64(self.time(state.step)),
            });
        }

        let mut gain = None;
        if self.gps.is_update_step(state.step) && self.gps.available_at(&state.x.position()) {
            let k = ekf::kalman_gain(&state.p_hat, &self.h_hat, &self.r_hat)?;
            let z = self.model.discrete_measurement(&state.x) + noise.nu;
            let z_pred = self.model.predicted_measurement(&state.x_hat);
            let xh = ekf::state_update(&state.x_hat.to_vector(), &k, &z, &z_pred);
            state.x_hat = NavState::from_vector(&xh).wrapped();
            state.p_hat = ekf::joseph_update(&state.p_hat, &k, &self.h_hat, &self.r_hat);
            gain = Some(k);
        }

        Ok(StepRecord {
            segment: *seg,
            u,
            y,
            gain,
        })
    }

    /// Advances `state` by one step, first letting `tracker` switch segments
    /// on the estimated position.
    pub fn step(
        &self,
        state: &mut LoopState<T>,
        tracker: &mut WaypointTracker<T>,
        noise: &StepNoise<T>,
    ) -> Result<StepRecord<T>> {
        tracker.update(&state.x_hat.position());
        let seg = *tracker.segment();
        self.step_on_segment(state, &seg, noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uav::params::UavParams;

    fn lp() -> ClosedLoop<f64> {
        ClosedLoop::new(
            UavModel::new(UavParams::default()),
            0.01,
            GpsCoverage {
                period_steps: 100,
                denied: vec![],
            },
        )
    }

    fn start(lp: &ClosedLoop<f64>, psi: f64) -> LoopState<f64> {
        let (x, x_hat, x_check) = lp.model.trim(Vector2::zeros(), psi);
        LoopState {
            step: 0,
            x,
            x_hat,
            x_check,
            p_hat: Matrix4::identity(),
        }
    }

    #[test]
    fn trim_flight_is_an_equilibrium() {
        let lp = lp();
        let mut s = start(&lp, 0.0);
        let seg = PathSegment::new(Vector2::zeros(), Vector2::new(1000.0, 0.0)).unwrap();
        for _ in 0..500 {
            lp.step_on_segment(&mut s, &seg, &StepNoise::zero()).unwrap();
        }
        assert!((s.x.p_n - 175.0).abs() < 1e-9);
        assert!(s.x.p_e.abs() < 1e-12 && s.x.psi.abs() < 1e-12);
        assert!((s.x.v_g - 35.0).abs() < 1e-12);
        assert_eq!(s.x.p_n, s.x_hat.p_n);
    }

    #[test]
    fn converges_onto_offset_path() {
        let lp = lp();
        let mut s = start(&lp, 0.0);
        let seg = PathSegment::new(Vector2::new(0.0, 30.0), Vector2::new(5000.0, 30.0)).unwrap();
        for _ in 0..6000 {
            lp.step_on_segment(&mut s, &seg, &StepNoise::zero()).unwrap();
        }
        assert!((s.x.p_e - 30.0).abs() < 1e-3, "{}", s.x.p_e);
        assert!(s.x.psi.abs() < 1e-4);
    }

    #[test]
    fn gps_updates_follow_cadence_and_denial() {
        let mut lp = lp();
        lp.gps.denied.push(Rect {
            north_min: 100.0,
            north_max: 200.0,
            east_min: -10.0,
            east_max: 10.0,
        });
        let mut s = start(&lp, 0.0);
        let seg = PathSegment::new(Vector2::zeros(), Vector2::new(1000.0, 0.0)).unwrap();
        let mut updates = vec![];
        for _ in 0..1000 {
            let rec = lp.step_on_segment(&mut s, &seg, &StepNoise::zero()).unwrap();
            if rec.gain.is_some() {
                updates.push(s.step);
            }
        }
        // positions at 35 m/s: t = 3, 4, 5 s fall inside the denied band
        assert_eq!(updates, vec![100, 200, 600, 700, 800, 900, 1000]);
    }
}

use nalgebra::{DMatrix, DVector, Matrix2, SVector, Vector2, Vector3, Vector4};

use super::params::UavParams;
use super::path::PathSegment;
use super::states::{
    ControlInput, ControllerState, DesiredState, GpsMeasurement, ImuMeasurement, NavState,
    TruthState,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, wrap_angle, Scalar};
use crate::sysmodel::{CoefficientSet, Dimensions, NoiseSpec, OperatingPoint, SystemFunctions};

/// Planar UAV: truth dynamics, IMU/GPS models, model-replacement navigation,
/// straight-line guidance and PI/PID control, with parameters converted to `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavModel<T: Scalar> {
    pub params: UavParams,
    /// commanded ground speed, m/s
    pub v_cmd: T,
    rho: T,
    c_d0: T,
    s_p: T,
    mass: T,
    inertia: T,
    sigma_u: T,
    l_u: T,
    tau_t: T,
    p_f: T,
    i_f: T,
    p_t: T,
    i_t: T,
    d_t: T,
    psi_inf: T,
    k_path: T,
}

impl<T: Scalar> UavModel<T> {
    pub fn new(params: UavParams) -> Self {
        let v = params.vehicle;
        let d = params.disturbance;
        let c = params.control;
        Self {
            params,
            v_cmd: lit(v.v_bar),
            rho: lit(v.rho),
            c_d0: lit(v.c_d0),
            s_p: lit(v.s_p),
            mass: lit(v.mass),
            inertia: lit(v.inertia),
            sigma_u: lit(d.sigma_u),
            l_u: lit(d.l_u),
            tau_t: lit(d.tau_t),
            p_f: lit(c.p_f),
            i_f: lit(c.i_f),
            p_t: lit(c.p_t),
            i_t: lit(c.i_t),
            d_t: lit(c.d_t),
            psi_inf: lit(c.psi_inf),
            k_path: lit(c.k_path),
        }
    }

    /// ½ρC_D0 S_p.
    fn drag_factor(&self) -> T {
        lit::<T>(0.5) * self.rho * self.c_d0 * self.s_p
    }

    /// Drag force at airspeed `v_g − u_w`.
    pub fn drag(&self, v_g: T, u_w: T) -> T {
        let va = v_g - u_w;
        self.drag_factor() * va * va
    }

    /// Axial acceleration produced by `force` at the given state.
    pub fn acceleration(&self, x: &TruthState<T>, force: T) -> T {
        (force - self.drag(x.v_g, x.u_w)) / self.mass
    }

    /// Truth-state derivative for control `u` and process noise `w = [w_u, w_T]`.
    pub fn truth_dynamics(
        &self,
        x: &TruthState<T>,
        u: &ControlInput<T>,
        w: &Vector2<T>,
    ) -> Result<SVector<T, 7>> {
        if x.v_g < T::zero() {
            return Err(Error::Domain(
                "negative ground speed: gust driving gain sqrt(2 V_g / L_u) undefined".into(),
            ));
        }
        let (s, c) = x.psi.sin_cos();
        let gust_gain = self.sigma_u * (lit::<T>(2.0) * x.v_g / self.l_u).sqrt();
        Ok(SVector::<T, 7>::from([
            x.v_g * c,
            x.v_g * s,
            self.acceleration(x, u.force),
            x.omega,
            (u.torque + x.t_dist) / self.inertia,
            -(x.v_g / self.l_u) * x.u_w + gust_gain * w[0],
            -x.t_dist / self.tau_t + w[1],
        ]))
    }

    /// Noise-free accelerometer and gyro outputs.
    pub fn continuous_measurement(
        &self,
        x: &TruthState<T>,
        u: &ControlInput<T>,
    ) -> ImuMeasurement<T> {
        ImuMeasurement {
            accel: self.acceleration(x, u.force),
            gyro: x.omega,
        }
    }

    /// Noise-free position and ground-speed fix.
    pub fn discrete_measurement(&self, x: &TruthState<T>) -> GpsMeasurement<T> {
        Vector3::new(x.p_n, x.p_e, x.v_g)
    }

    /// Model-replacement navigation derivative driven by IMU output `y`.
    pub fn nav_propagation(&self, x_hat: &NavState<T>, y: &ImuMeasurement<T>) -> Vector4<T> {
        let (s, c) = x_hat.psi.sin_cos();
        Vector4::new(x_hat.v_g * c, x_hat.v_g * s, y.accel, y.gyro)
    }

    pub fn predicted_measurement(&self, x_hat: &NavState<T>) -> GpsMeasurement<T> {
        Vector3::new(x_hat.p_n, x_hat.p_e, x_hat.v_g)
    }

    /// Straight-line path guidance.
    pub fn guidance(&self, x_hat: &NavState<T>, seg: &PathSegment<T>) -> DesiredState<T> {
        let e_path = seg.cross_track(&x_hat.position());
        let psi_star =
            seg.psi_q - self.psi_inf * (lit::<T>(2.0) / T::pi()) * (self.k_path * e_path).atan();
        DesiredState {
            v_g_star: self.v_cmd,
            psi_star: wrap_angle(psi_star),
        }
    }

    /// Integrator derivatives `[V_g* − V̂_g, wrap(ψ* − ψ̂)]`.
    pub fn controller_dynamics(
        &self,
        x_hat: &NavState<T>,
        x_star: &DesiredState<T>,
    ) -> Vector2<T> {
        Vector2::new(
            x_star.v_g_star - x_hat.v_g,
            wrap_angle(x_star.psi_star - x_hat.psi),
        )
    }

    /// PI speed loop and PID heading loop with gyro rate feedback.
    pub fn controller_output(
        &self,
        x_check: &ControllerState<T>,
        x_hat: &NavState<T>,
        x_star: &DesiredState<T>,
        y: &ImuMeasurement<T>,
    ) -> ControlInput<T> {
        let heading_err = wrap_angle(x_star.psi_star - x_hat.psi);
        ControlInput {
            force: self.p_f * (x_star.v_g_star - x_hat.v_g) + self.i_f * x_check.sigma_f,
            torque: self.d_t * (self.p_t * heading_err + self.i_t * x_check.sigma_t - y.gyro),
        }
    }

    pub fn map_truth_to_nav(&self, x: &TruthState<T>) -> Vector4<T> {
        Vector4::new(x.p_n, x.p_e, x.v_g, x.psi)
    }

    /// Steady flight at `v_bar` with heading `psi`: force balances drag and the
    /// speed integrator holds the trim force.
    pub fn trim(
        &self,
        position: Vector2<T>,
        psi: T,
    ) -> (TruthState<T>, NavState<T>, ControllerState<T>) {
        let x = TruthState {
            p_n: position[0],
            p_e: position[1],
            v_g: self.v_cmd,
            psi: wrap_angle(psi),
            omega: T::zero(),
            u_w: T::zero(),
            t_dist: T::zero(),
        };
        let x_hat = NavState {
            p_n: x.p_n,
            p_e: x.p_e,
            v_g: x.v_g,
            psi: x.psi,
        };
        let x_check = ControllerState {
            sigma_f: self.drag(self.v_cmd, T::zero()) / self.i_f,
            sigma_t: T::zero(),
        };
        (x, x_hat, x_check)
    }

    /// Truth noise intensities: unit-PSD gust driver, FOGM torque driver,
    /// IMU white noise and GPS measurement noise.
    pub fn noise_spec(&self) -> NoiseSpec<T> {
        let d = &self.params.disturbance;
        let s = &self.params.sensor;
        NoiseSpec {
            s_w: DMatrix::from_diagonal(&DVector::from_vec(vec![
                T::one(),
                lit(d.torque_psd()),
            ])),
            s_eta: DMatrix::from_diagonal(&DVector::from_vec(vec![
                lit(s.accel_psd()),
                lit(s.gyro_psd()),
            ])),
            r_nu: DMatrix::from_diagonal(&DVector::from_vec(vec![
                lit(s.sigma_pos * s.sigma_pos),
                lit(s.sigma_pos * s.sigma_pos),
                lit(s.sigma_vel * s.sigma_vel),
            ])),
        }
    }

    /// Linearization at a nominal point: every coefficient matrix of the UAV
    /// closed loop.
    pub fn coefficient_set(&self, nominal: &UavNominalPoint<T>) -> CoefficientSet<T> {
        let x = &nominal.x;
        let xh = &nominal.x_hat;
        let seg = &nominal.segment;
        let dims = Dimensions::UAV;
        let mut cs = CoefficientSet::zeros(&dims);
        let one = T::one();

        let (sp, cp) = x.psi.sin_cos();
        let drag_slope = lit::<T>(2.0) * self.drag_factor() * (x.v_g - x.u_w) / self.mass;

        // F_x
        let f = &mut cs.f_x;
        f[(0, 2)] = cp;
        f[(0, 3)] = -x.v_g * sp;
        f[(1, 2)] = sp;
        f[(1, 3)] = x.v_g * cp;
        f[(2, 2)] = -drag_slope;
        f[(2, 5)] = drag_slope;
        f[(3, 4)] = one;
        f[(4, 6)] = one / self.inertia;
        f[(5, 2)] = -x.u_w / self.l_u;
        f[(5, 5)] = -x.v_g / self.l_u;
        f[(6, 6)] = -one / self.tau_t;

        cs.f_u[(2, 0)] = one / self.mass;
        cs.f_u[(4, 1)] = one / self.inertia;

        cs.b[(5, 0)] = self.sigma_u * (lit::<T>(2.0) * x.v_g / self.l_u).sqrt();
        cs.b[(6, 1)] = one;

        cs.g_y[(1, 1)] = -self.d_t;
        cs.g_xhat[(0, 2)] = -self.p_f;
        cs.g_xhat[(1, 3)] = -self.d_t * self.p_t;
        cs.g_xstar[(0, 0)] = self.p_f;
        cs.g_xstar[(1, 1)] = self.d_t * self.p_t;
        cs.g_xcheck[(0, 0)] = self.i_f;
        cs.g_xcheck[(1, 1)] = self.d_t * self.i_t;

        cs.c_x[(0, 2)] = -drag_slope;
        cs.c_x[(0, 5)] = drag_slope;
        cs.c_x[(1, 4)] = one;
        cs.c_u[(0, 0)] = one / self.mass;

        let (sq, cq) = seg.psi_q.sin_cos();
        let d = seg.cross_track(&xh.position());
        let two = lit::<T>(2.0);
        let n21 = two * self.psi_inf * self.k_path * sq;
        let n22 = -two * self.psi_inf * self.k_path * cq;
        let n_d = T::pi() + T::pi() * self.k_path * self.k_path * d * d;
        cs.n_xhat[(1, 0)] = n21 / n_d;
        cs.n_xhat[(1, 1)] = n22 / n_d;
        // N_y stays zero: guidance does not use the IMU.

        let (sh, ch) = xh.psi.sin_cos();
        let fh = &mut cs.f_hat_xhat;
        fh[(0, 2)] = ch;
        fh[(0, 3)] = -xh.v_g * sh;
        fh[(1, 2)] = sh;
        fh[(1, 3)] = xh.v_g * ch;
        cs.f_hat_y[(2, 0)] = one;
        cs.f_hat_y[(3, 1)] = one;

        cs.f_check_xhat[(0, 2)] = -one;
        cs.f_check_xhat[(1, 3)] = -one;
        cs.f_check_xstar[(0, 0)] = one;
        cs.f_check_xstar[(1, 1)] = one;

        for i in 0..3 {
            cs.h_x[(i, i)] = one;
            cs.h_hat_xhat[(i, i)] = one;
        }
        for i in 0..4 {
            cs.m_x[(i, i)] = one;
        }
        cs
    }

    /// Navigation filter propagation Jacobian F̂ at `x_hat`.
    pub fn filter_f(&self, x_hat: &NavState<T>) -> nalgebra::Matrix4<T> {
        let (s, c) = x_hat.psi.sin_cos();
        let z = T::zero();
        nalgebra::Matrix4::new(
            z, z, c, -x_hat.v_g * s, //
            z, z, s, x_hat.v_g * c, //
            z, z, z, z, //
            z, z, z, z,
        )
    }
}

/// Full 7×7 form of the truth → nav mapping Jacobian, `[I₄ 0; 0 0]`.
pub fn mapping_matrix_padded<T: Scalar>() -> DMatrix<T> {
    let mut m = DMatrix::zeros(7, 7);
    for i in 0..4 {
        m[(i, i)] = T::one();
    }
    m
}

/// Nominal quantities needed to linearize the UAV closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavNominalPoint<T: Scalar> {
    pub x: TruthState<T>,
    pub x_hat: NavState<T>,
    pub x_check: ControllerState<T>,
    pub u: ControlInput<T>,
    pub y: ImuMeasurement<T>,
    pub segment: PathSegment<T>,
}

impl<T: Scalar> UavNominalPoint<T> {
    pub fn operating_point(&self) -> OperatingPoint<T> {
        OperatingPoint {
            x: DVector::from_column_slice(self.x.to_vector().as_slice()),
            x_hat: DVector::from_column_slice(self.x_hat.to_vector().as_slice()),
            x_check: DVector::from_column_slice(self.x_check.to_vector().as_slice()),
            u: DVector::from_column_slice(self.u.to_vector().as_slice()),
            y: DVector::from_column_slice(self.y.to_vector().as_slice()),
        }
    }
}

/// UAV model bound to an active path segment, exposed through the generic
/// [`SystemFunctions`] contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavSystem<T: Scalar> {
    pub model: UavModel<T>,
    pub segment: PathSegment<T>,
}

fn v2<T: Scalar>(v: &DVector<T>) -> Vector2<T> {
    Vector2::new(v[0], v[1])
}

fn truth<T: Scalar>(v: &DVector<T>) -> TruthState<T> {
    TruthState::from_vector(&SVector::<T, 7>::from_column_slice(v.as_slice()))
}

fn nav<T: Scalar>(v: &DVector<T>) -> NavState<T> {
    NavState::from_vector(&Vector4::from_column_slice(v.as_slice()))
}

fn dyn_vec<T: Scalar>(s: &[T]) -> DVector<T> {
    DVector::from_column_slice(s)
}

impl<T: Scalar> SystemFunctions<T> for UavSystem<T> {
    fn dimensions(&self) -> Dimensions {
        Dimensions::UAV
    }

    fn truth_dynamics(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        match self.model.truth_dynamics(
            &truth(x),
            &ControlInput::from_vector(&v2(u)),
            &v2(w),
        ) {
            Ok(d) => dyn_vec(d.as_slice()),
            Err(_) => DVector::from_element(7, crate::scalar::lit::<T>(f64::NAN)),
        }
    }

    fn continuous_measurement(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let y = self
            .model
            .continuous_measurement(&truth(x), &ControlInput::from_vector(&v2(u)));
        dyn_vec(y.to_vector().as_slice())
    }

    fn discrete_measurement(&self, x: &DVector<T>) -> DVector<T> {
        dyn_vec(self.model.discrete_measurement(&truth(x)).as_slice())
    }

    fn nav_propagation(&self, x_hat: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let d = self
            .model
            .nav_propagation(&nav(x_hat), &ImuMeasurement::from_vector(&v2(y)));
        dyn_vec(d.as_slice())
    }

    fn predicted_measurement(&self, x_hat: &DVector<T>) -> DVector<T> {
        dyn_vec(self.model.predicted_measurement(&nav(x_hat)).as_slice())
    }

    fn guidance(&self, x_hat: &DVector<T>, _y: &DVector<T>) -> DVector<T> {
        let s = self.model.guidance(&nav(x_hat), &self.segment);
        dyn_vec(s.to_vector().as_slice())
    }

    fn controller_dynamics(&self, x_hat: &DVector<T>, x_star: &DVector<T>) -> DVector<T> {
        let d = self
            .model
            .controller_dynamics(&nav(x_hat), &DesiredState::from_vector(&v2(x_star)));
        dyn_vec(d.as_slice())
    }

    fn controller_output(
        &self,
        x_check: &DVector<T>,
        x_hat: &DVector<T>,
        x_star: &DVector<T>,
        y: &DVector<T>,
    ) -> DVector<T> {
        let u = self.model.controller_output(
            &ControllerState::from_vector(&v2(x_check)),
            &nav(x_hat),
            &DesiredState::from_vector(&v2(x_star)),
            &ImuMeasurement::from_vector(&v2(y)),
        );
        dyn_vec(u.to_vector().as_slice())
    }

    fn truth_to_nav(&self, x: &DVector<T>) -> DVector<T> {
        dyn_vec(self.model.map_truth_to_nav(&truth(x)).as_slice())
    }

    fn normalize_point(&self, point: &mut OperatingPoint<T>) {
        point.x[3] = wrap_angle(point.x[3]);
        point.x_hat[3] = wrap_angle(point.x_hat[3]);
    }
}

/// Filter design matrices: B̂ mapping IMU noise into `[V̂_g, ψ̂]`.
pub fn filter_noise_input<T: Scalar>() -> nalgebra::Matrix4x2<T> {
    let mut b = nalgebra::Matrix4x2::zeros();
    b[(2, 0)] = T::one();
    b[(3, 1)] = T::one();
    b
}

/// Measurement matrix Ĥ selecting `[p̂_n, p̂_e, V̂_g]`.
pub fn filter_measurement_matrix<T: Scalar>() -> nalgebra::Matrix3x4<T> {
    let mut h = nalgebra::Matrix3x4::zeros();
    for i in 0..3 {
        h[(i, i)] = T::one();
    }
    h
}

/// Filter design noise: Q̂ equal to the truth IMU PSDs, R̂ equal to the GPS noise.
pub fn filter_design_noise<T: Scalar>(params: &UavParams) -> (Matrix2<T>, nalgebra::Matrix3<T>) {
    let s = &params.sensor;
    let q = Matrix2::from_diagonal(&Vector2::new(lit(s.accel_psd()), lit(s.gyro_psd())));
    let r = nalgebra::Matrix3::from_diagonal(&Vector3::new(
        lit(s.sigma_pos * s.sigma_pos),
        lit(s.sigma_pos * s.sigma_pos),
        lit(s.sigma_vel * s.sigma_vel),
    ));
    (q, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{numeric_jacobian, validate_coefficient_set, JacobianTolerance};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn model() -> UavModel<f64> {
        UavModel::new(UavParams::default())
    }

    fn trim_force() -> f64 {
        0.5 * 1.2682 * 0.03 * 0.55 * 35.0 * 35.0
    }

    fn state(v: [f64; 7]) -> TruthState<f64> {
        TruthState::from_vector(&SVector::<f64, 7>::from(v))
    }

    #[test]
    fn drag_balance_trim() {
        let f = trim_force();
        assert!((f - 12.816_746_25).abs() < 1e-9);
        let m = model();
        let d = m
            .truth_dynamics(
                &state([0.0, 0.0, 35.0, 0.0, 0.0, 0.0, 0.0]),
                &ControlInput { force: f, torque: 0.0 },
                &Vector2::zeros(),
            )
            .unwrap();
        let expected = SVector::<f64, 7>::from([35.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((d - expected).abs().max() < 1e-12);
    }

    #[test]
    fn heading_geometry_and_gust_decay() {
        let m = model();
        let d = m
            .truth_dynamics(
                &state([0.0, 0.0, 35.0, FRAC_PI_2, 0.0, 0.0, 0.0]),
                &ControlInput::zero(),
                &Vector2::zeros(),
            )
            .unwrap();
        assert!(d[0].abs() < 1e-12);
        assert!((d[1] - 35.0).abs() < 1e-12);
        let d = m
            .truth_dynamics(
                &state([0.0, 0.0, 35.0, 0.0, 0.0, 1.0, 0.0]),
                &ControlInput::zero(),
                &Vector2::zeros(),
            )
            .unwrap();
        assert!((d[5] + 0.175).abs() < 1e-15);
    }

    #[test]
    fn negative_speed_is_domain_error() {
        let r = model().truth_dynamics(
            &state([0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]),
            &ControlInput::zero(),
            &Vector2::zeros(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn continuous_measurement_cases() {
        let m = model();
        let x = state([0.0, 0.0, 35.0, 0.0, 0.0, 0.0, 0.0]);
        let y = m.continuous_measurement(&x, &ControlInput { force: trim_force(), torque: 0.0 });
        assert!(y.accel.abs() < 1e-12 && y.gyro == 0.0);
        let y = m.continuous_measurement(
            &x,
            &ControlInput { force: 25.0 * 1.0 + trim_force(), torque: 0.0 },
        );
        assert!((y.accel - 1.0).abs() < 1e-12);
        let y = m.continuous_measurement(
            &state([0.0, 0.0, 35.0, 0.0, 0.3, 0.0, 0.0]),
            &ControlInput::zero(),
        );
        assert_eq!(y.gyro, 0.3);
    }

    #[test]
    fn measurement_projections() {
        let m = model();
        let x = state([1.0, 2.0, 35.0, 0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.discrete_measurement(&x), Vector3::new(1.0, 2.0, 35.0));
        assert_eq!(m.discrete_measurement(&state([0.0; 7])), Vector3::zeros());
        assert_eq!(m.map_truth_to_nav(&x), Vector4::new(1.0, 2.0, 35.0, 0.1));
        assert_eq!(m.map_truth_to_nav(&state([0.0; 7])), Vector4::zeros());
        let np = UavNominalPoint {
            x,
            x_hat: NavState::from_vector(&Vector4::new(1.0, 2.0, 35.0, 0.1)),
            x_check: ControllerState { sigma_f: 0.0, sigma_t: 0.0 },
            u: ControlInput::zero(),
            y: ImuMeasurement { accel: 0.0, gyro: 0.0 },
            segment: PathSegment::new(Vector2::zeros(), Vector2::new(1.0, 0.0)).unwrap(),
        };
        let cs = m.coefficient_set(&np);
        let hx = cs.h_x.fixed_view::<3, 7>(0, 0).into_owned();
        assert_eq!(hx * x.to_vector(), m.discrete_measurement(&x));
    }

    #[test]
    fn nav_propagation_cases() {
        let m = model();
        let xh = NavState { p_n: 0.0, p_e: 0.0, v_g: 35.0, psi: 0.0 };
        let zero = ImuMeasurement { accel: 0.0, gyro: 0.0 };
        assert_eq!(m.nav_propagation(&xh, &zero), Vector4::new(35.0, 0.0, 0.0, 0.0));
        let d = m.nav_propagation(&xh, &ImuMeasurement { accel: 1.0, gyro: 0.1 });
        assert_eq!((d[2], d[3]), (1.0, 0.1));
        let d = m.nav_propagation(
            &NavState { p_n: 0.0, p_e: 0.0, v_g: 10.0, psi: FRAC_PI_4 },
            &zero,
        );
        assert!((d[0] - 10.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((d[1] - 10.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn guidance_cases() {
        let m = model();
        let seg = PathSegment::new(Vector2::zeros(), Vector2::new(100.0, 0.0)).unwrap();
        let on_path = NavState { p_n: 40.0, p_e: 0.0, v_g: 35.0, psi: 0.0 };
        assert_eq!(m.guidance(&on_path, &seg).psi_star, 0.0);
        assert_eq!(m.guidance(&on_path, &seg).v_g_star, 35.0);
        let far = NavState { p_n: 0.0, p_e: 1e12, v_g: 35.0, psi: 0.0 };
        assert!((m.guidance(&far, &seg).psi_star + FRAC_PI_2).abs() < 1e-9);
        let off = NavState { p_n: 0.0, p_e: 20.0, v_g: 35.0, psi: 0.0 };
        assert!((m.guidance(&off, &seg).psi_star + FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn guidance_translation_invariance() {
        let m = model();
        let shift = Vector2::new(-321.0, 77.5);
        let a = Vector2::new(10.0, 20.0);
        let b = Vector2::new(200.0, -50.0);
        let seg = PathSegment::new(a, b).unwrap();
        let seg2 = PathSegment::new(a + shift, b + shift).unwrap();
        let xh = NavState { p_n: 55.0, p_e: 3.0, v_g: 35.0, psi: 0.2 };
        let mut xh2 = xh;
        xh2.p_n += shift[0];
        xh2.p_e += shift[1];
        let d = m.guidance(&xh, &seg).psi_star - m.guidance(&xh2, &seg2).psi_star;
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn controller_dynamics_cases() {
        let m = model();
        let xh = NavState { p_n: 0.0, p_e: 0.0, v_g: 35.0, psi: 0.4 };
        let star = DesiredState { v_g_star: 35.0, psi_star: 0.4 };
        assert_eq!(m.controller_dynamics(&xh, &star), Vector2::zeros());
        let xh34 = NavState { v_g: 34.0, ..xh };
        assert_eq!(m.controller_dynamics(&xh34, &star)[0], 1.0);
        let xh_wrap = NavState { psi: 3.1, ..xh };
        let star_wrap = DesiredState { v_g_star: 35.0, psi_star: -3.1 };
        let r = m.controller_dynamics(&xh_wrap, &star_wrap)[1];
        assert!((r - (2.0 * PI - 6.2)).abs() < 1e-12);
        assert!((r - 0.083_185_307).abs() < 1e-8);
    }

    #[test]
    fn controller_output_cases() {
        let m = model();
        let xc = ControllerState { sigma_f: 0.0, sigma_t: 0.0 };
        let xh = NavState { p_n: 0.0, p_e: 0.0, v_g: 35.0, psi: 0.0 };
        let star = DesiredState { v_g_star: 35.0, psi_star: 0.0 };
        let y0 = ImuMeasurement { accel: 0.0, gyro: 0.0 };
        assert_eq!(m.controller_output(&xc, &xh, &star, &y0), ControlInput::zero());
        let xh34 = NavState { v_g: 34.0, ..xh };
        assert_eq!(m.controller_output(&xc, &xh34, &star, &y0).force, 80.0);
        let u = m.controller_output(&xc, &xh, &star, &ImuMeasurement { accel: 0.0, gyro: 0.1 });
        assert!((u.torque + 11.1).abs() < 1e-12);
    }

    #[test]
    fn controller_output_is_linear_in_errors() {
        let m = model();
        let xc = ControllerState { sigma_f: 0.3, sigma_t: -0.02 };
        let xh = NavState { p_n: 0.0, p_e: 0.0, v_g: 34.5, psi: 0.1 };
        let star = DesiredState { v_g_star: 35.0, psi_star: 0.05 };
        let y = ImuMeasurement { accel: 0.0, gyro: 0.01 };
        let u1 = m.controller_output(&xc, &xh, &star, &y);
        let xc2 = ControllerState { sigma_f: 0.6, sigma_t: -0.04 };
        let xh2 = NavState { v_g: 34.0, psi: 0.15, ..xh };
        let y2 = ImuMeasurement { accel: 0.0, gyro: 0.02 };
        let u2 = m.controller_output(&xc2, &xh2, &star, &y2);
        assert!((u2.force - 2.0 * u1.force).abs() < 1e-12);
        assert!((u2.torque - 2.0 * u1.torque).abs() < 1e-12);
    }

    fn trim_nominal(psi_q: f64) -> UavNominalPoint<f64> {
        let m = model();
        let (x, x_hat, x_check) = m.trim(Vector2::zeros(), psi_q);
        let seg = PathSegment::new(
            Vector2::zeros(),
            Vector2::new(100.0 * psi_q.cos(), 100.0 * psi_q.sin()),
        )
        .unwrap();
        let x_star = m.guidance(&x_hat, &seg);
        let y = ImuMeasurement { accel: 0.0, gyro: 0.0 };
        let u = m.controller_output(&x_check, &x_hat, &x_star, &y);
        UavNominalPoint { x, x_hat, x_check, u, y, segment: seg }
    }

    #[test]
    fn trim_coefficients() {
        let m = model();
        let np = trim_nominal(0.0);
        assert!((np.u.force - trim_force()).abs() < 1e-12);
        let cs = m.coefficient_set(&np);
        assert!((cs.f_x[(2, 2)] + 1.2682 * 0.03 * 0.55 * 35.0 / 25.0).abs() < 1e-15);
        assert!((cs.f_x[(2, 2)] + 0.029_295_42).abs() < 1e-8);
        let row = cs.n_xhat.row(1);
        assert!(row[0].abs() < 1e-18);
        assert!((row[1] + 0.05).abs() < 1e-15);
        assert_eq!((row[2], row[3]), (0.0, 0.0));
        assert_eq!(cs.n_y, DMatrix::zeros(2, 2));
        let padded = mapping_matrix_padded::<f64>();
        assert_eq!(padded.view((0, 0), (4, 7)), cs.m_x);
        assert_eq!(padded.view((4, 0), (3, 7)), DMatrix::<f64>::zeros(3, 7));
    }

    #[test]
    fn truth_jacobian_matches_central_differences_at_trim() {
        let m = model();
        let np = trim_nominal(0.0);
        let sys = UavSystem { model: m, segment: np.segment };
        let op = np.operating_point();
        let w0 = DVector::zeros(2);
        let num = numeric_jacobian(|x| sys.truth_dynamics(x, &op.u, &w0), &op.x, 1e-6).unwrap();
        let ana = m.coefficient_set(&np).f_x;
        for (a, n) in ana.iter().zip(num.iter()) {
            assert!((a - n).abs() <= 1e-5 * n.abs().max(1e-2), "{a} vs {n}");
        }
    }

    #[test]
    fn full_set_validates_at_trim_and_off_path() {
        let m = model();
        for psi_q in [0.0, 0.7, -2.4, 3.0] {
            let mut np = trim_nominal(psi_q);
            np.x_hat.p_e += 12.0;
            np.x.u_w = 0.4;
            let sys = UavSystem { model: m, segment: np.segment };
            let report = validate_coefficient_set(
                &sys,
                &np.operating_point(),
                &m.coefficient_set(&np),
                JacobianTolerance::default(),
            )
            .unwrap();
            assert!(report.passed(), "{:?}", report.checks);
        }
    }

    #[test]
    fn single_precision_instantiation() {
        let m = UavModel::<f32>::new(UavParams::default());
        let seg = PathSegment::new(Vector2::new(0.0f32, 0.0), Vector2::new(100.0, 0.0)).unwrap();
        let xh = NavState { p_n: 0.0f32, p_e: 20.0, v_g: 35.0, psi: 0.0 };
        let s = m.guidance(&xh, &seg);
        assert!((s.psi_star + std::f32::consts::FRAC_PI_4).abs() < 1e-6);
    }
}

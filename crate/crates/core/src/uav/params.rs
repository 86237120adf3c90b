use serde::{Deserialize, Serialize};

/// Airframe parameters (Aerosonde-like).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// nominal ground speed, m/s
    pub v_bar: f64,
    /// air density, kg/m³
    pub rho: f64,
    /// parasitic drag coefficient
    pub c_d0: f64,
    /// planform area, m²
    pub s_p: f64,
    /// mass, kg
    pub mass: f64,
    /// yaw inertia, kg·m²
    pub inertia: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            v_bar: 35.0,
            rho: 1.2682,
            c_d0: 0.03,
            s_p: 0.55,
            mass: 25.0,
            inertia: 1.759,
        }
    }
}

/// Dryden axial gust and first-order Gauss-Markov disturbance torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceParams {
    /// gust stationary std, m/s
    pub sigma_u: f64,
    /// gust correlation distance, m
    pub l_u: f64,
    /// torque stationary std, N·m
    pub sigma_t: f64,
    /// torque correlation time, s
    pub tau_t: f64,
}

impl Default for DisturbanceParams {
    fn default() -> Self {
        Self {
            sigma_u: 1.06,
            l_u: 200.0,
            sigma_t: 0.0033,
            tau_t: 2.0,
        }
    }
}

impl DisturbanceParams {
    /// PSD of the torque driving noise giving stationary std `sigma_t`.
    pub fn torque_psd(&self) -> f64 {
        2.0 * self.sigma_t * self.sigma_t / self.tau_t
    }
}

/// IMU random walks and GPS-like measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorParams {
    /// velocity random walk, m/s/√hr
    pub vrw: f64,
    /// angular random walk, deg/√hr
    pub arw: f64,
    /// position measurement std, m
    pub sigma_pos: f64,
    /// ground-speed measurement std, m/s
    pub sigma_vel: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            vrw: 0.02,
            arw: 16.7,
            sigma_pos: 1.0,
            sigma_vel: 0.033,
        }
    }
}

impl SensorParams {
    /// Accelerometer white-noise PSD, (m/s²)²·s = (m/s)²/s.
    pub fn accel_psd(&self) -> f64 {
        self.vrw * self.vrw / 3600.0
    }

    /// Gyro white-noise PSD, rad²/s.
    pub fn gyro_psd(&self) -> f64 {
        let arw_rad = self.arw.to_radians();
        arw_rad * arw_rad / 3600.0
    }
}

/// Guidance and PI/PID gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// velocity proportional gain, kg/s
    pub p_f: f64,
    /// velocity integral gain, kg/s²
    pub i_f: f64,
    /// heading proportional gain, 1/s
    pub p_t: f64,
    /// heading integral gain, 1/s²
    pub i_t: f64,
    /// heading derivative gain, kg·m²/s
    pub d_t: f64,
    /// path approach angle, rad
    pub psi_inf: f64,
    /// path gain, 1/m
    pub k_path: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            p_f: 80.0,
            i_f: 50.0,
            p_t: 6.38,
            i_t: 10.0,
            d_t: 111.0,
            psi_inf: std::f64::consts::FRAC_PI_2,
            k_path: 0.05,
        }
    }
}

/// Complete parameter record of the UAV instance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UavParams {
    pub vehicle: VehicleParams,
    pub disturbance: DisturbanceParams,
    pub sensor: SensorParams,
    pub control: ControlParams,
}

impl UavParams {
    /// Returns the dotted path of the first invalid field. Noise intensities
    /// may be zero; every other parameter must be positive. All must be finite.
    pub fn first_invalid(&self) -> Option<&'static str> {
        let v = &self.vehicle;
        let d = &self.disturbance;
        let s = &self.sensor;
        let c = &self.control;
        let positive = [
            ("vehicle.v_bar", v.v_bar),
            ("vehicle.rho", v.rho),
            ("vehicle.c_d0", v.c_d0),
            ("vehicle.s_p", v.s_p),
            ("vehicle.mass", v.mass),
            ("vehicle.inertia", v.inertia),
            ("disturbance.l_u", d.l_u),
            ("disturbance.tau_t", d.tau_t),
            ("control.p_f", c.p_f),
            ("control.i_f", c.i_f),
            ("control.p_t", c.p_t),
            ("control.i_t", c.i_t),
            ("control.d_t", c.d_t),
            ("control.psi_inf", c.psi_inf),
            ("control.k_path", c.k_path),
        ];
        let non_negative = [
            ("disturbance.sigma_u", d.sigma_u),
            ("disturbance.sigma_t", d.sigma_t),
            ("sensor.vrw", s.vrw),
            ("sensor.arw", s.arw),
            ("sensor.sigma_pos", s.sigma_pos),
            ("sensor.sigma_vel", s.sigma_vel),
        ];
        positive
            .iter()
            .find(|(_, v)| !(v.is_finite() && *v > 0.0))
            .or_else(|| non_negative.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)))
            .map(|(name, _)| *name)
    }
}

use nalgebra::{SVector, Vector2, Vector3, Vector4};

use crate::scalar::{wrap_angle, Scalar};

/// Truth state `[p_n, p_e, V_g, ψ, ω, u_w, T_dist]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthState<T: Scalar> {
    /// north position, m
    pub p_n: T,
    /// east position, m
    pub p_e: T,
    /// ground speed, m/s
    pub v_g: T,
    /// heading, rad
    pub psi: T,
    /// yaw rate, rad/s
    pub omega: T,
    /// axial gust, m/s
    pub u_w: T,
    /// disturbance torque, N·m
    pub t_dist: T,
}

impl<T: Scalar> TruthState<T> {
    pub fn from_vector(v: &SVector<T, 7>) -> Self {
        Self {
            p_n: v[0],
            p_e: v[1],
            v_g: v[2],
            psi: v[3],
            omega: v[4],
            u_w: v[5],
            t_dist: v[6],
        }
    }

    pub fn to_vector(&self) -> SVector<T, 7> {
        SVector::<T, 7>::from([
            self.p_n, self.p_e, self.v_g, self.psi, self.omega, self.u_w, self.t_dist,
        ])
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.p_n, self.p_e)
    }

    /// Copy with heading wrapped to (−π, π].
    pub fn wrapped(mut self) -> Self {
        self.psi = wrap_angle(self.psi);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Navigation state `[p̂_n, p̂_e, V̂_g, ψ̂]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState<T: Scalar> {
    pub p_n: T,
    pub p_e: T,
    pub v_g: T,
    pub psi: T,
}

impl<T: Scalar> NavState<T> {
    pub fn from_vector(v: &Vector4<T>) -> Self {
        Self {
            p_n: v[0],
            p_e: v[1],
            v_g: v[2],
            psi: v[3],
        }
    }

    pub fn to_vector(&self) -> Vector4<T> {
        Vector4::new(self.p_n, self.p_e, self.v_g, self.psi)
    }

    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.p_n, self.p_e)
    }

    pub fn wrapped(mut self) -> Self {
        self.psi = wrap_angle(self.psi);
        self
    }
}

/// Integrator states of the speed and heading loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState<T: Scalar> {
    /// velocity-error integral, m
    pub sigma_f: T,
    /// heading-error integral, rad·s
    pub sigma_t: T,
}

impl<T: Scalar> ControllerState<T> {
    pub fn from_vector(v: &Vector2<T>) -> Self {
        Self {
            sigma_f: v[0],
            sigma_t: v[1],
        }
    }

    pub fn to_vector(&self) -> Vector2<T> {
        Vector2::new(self.sigma_f, self.sigma_t)
    }
}

/// Commanded force and torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput<T: Scalar> {
    /// F_c, N
    pub force: T,
    /// T_c, N·m
    pub torque: T,
}

impl<T: Scalar> ControlInput<T> {
    pub fn zero() -> Self {
        Self {
            force: T::zero(),
            torque: T::zero(),
        }
    }

    pub fn to_vector(&self) -> Vector2<T> {
        Vector2::new(self.force, self.torque)
    }

    pub fn from_vector(v: &Vector2<T>) -> Self {
        Self {
            force: v[0],
            torque: v[1],
        }
    }
}

/// Guidance output `[V_g*, ψ*]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredState<T: Scalar> {
    pub v_g_star: T,
    pub psi_star: T,
}

impl<T: Scalar> DesiredState<T> {
    pub fn to_vector(&self) -> Vector2<T> {
        Vector2::new(self.v_g_star, self.psi_star)
    }

    pub fn from_vector(v: &Vector2<T>) -> Self {
        Self {
            v_g_star: v[0],
            psi_star: v[1],
        }
    }
}

/// Continuous IMU measurement `[ã_x, ω̃]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuMeasurement<T: Scalar> {
    pub accel: T,
    pub gyro: T,
}

impl<T: Scalar> ImuMeasurement<T> {
    pub fn to_vector(&self) -> Vector2<T> {
        Vector2::new(self.accel, self.gyro)
    }

    pub fn from_vector(v: &Vector2<T>) -> Self {
        Self {
            accel: v[0],
            gyro: v[1],
        }
    }
}

/// Discrete GPS-like measurement `[p_n, p_e, V_g]`.
pub type GpsMeasurement<T> = Vector3<T>;

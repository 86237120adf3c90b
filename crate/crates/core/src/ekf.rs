//! Navigation filter: Riccati propagation, Kalman gain, Joseph-form update.
//!
//! Functions are generic over the state (`N`), measurement (`M`) and noise
//! (`W`) dimensions; the UAV filter uses `N = 4`, `M = 3`, `W = 2`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// Condition number above which the innovation covariance is treated as singular.
pub const INNOVATION_CONDITION_LIMIT: f64 = 1e12;

/// Navigation estimate and its filter covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState<T: Scalar, const N: usize> {
    pub x_hat: SVector<T, N>,
    pub p_hat: SMatrix<T, N, N>,
}

pub fn symmetrize<T: Scalar, const N: usize>(m: &SMatrix<T, N, N>) -> SMatrix<T, N, N> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// `F̂P + PF̂ᵀ + B̂Q̂B̂ᵀ`, symmetrized.
pub fn riccati_rhs<T: Scalar, const N: usize, const W: usize>(
    p: &SMatrix<T, N, N>,
    f_hat: &SMatrix<T, N, N>,
    b_hat: &SMatrix<T, N, W>,
    q_hat: &SMatrix<T, W, W>,
) -> SMatrix<T, N, N> {
    let fp = f_hat * p;
    symmetrize(&(fp + fp.transpose() + b_hat * q_hat * b_hat.transpose()))
}

/// One RK4 step of the Riccati equation with `F̂` held over the step.
pub fn propagate_covariance<T: Scalar, const N: usize, const W: usize>(
    p: &SMatrix<T, N, N>,
    f_hat: &SMatrix<T, N, N>,
    b_hat: &SMatrix<T, N, W>,
    q_hat: &SMatrix<T, W, W>,
    dt: T,
) -> SMatrix<T, N, N> {
    let half = lit::<T>(0.5) * dt;
    let k1 = riccati_rhs(p, f_hat, b_hat, q_hat);
    let k2 = riccati_rhs(&(p + k1 * half), f_hat, b_hat, q_hat);
    let k3 = riccati_rhs(&(p + k2 * half), f_hat, b_hat, q_hat);
    let k4 = riccati_rhs(&(p + k3 * dt), f_hat, b_hat, q_hat);
    symmetrize(&(p + (k1 + (k2 + k3) * lit::<T>(2.0) + k4) * (dt / lit::<T>(6.0))))
}

/// `K = P⁻Ĥᵀ(ĤP⁻Ĥᵀ + R̂)⁻¹`, solved through a Cholesky factorization of the
/// innovation covariance.
pub fn kalman_gain<T: Scalar, const N: usize, const M: usize>(
    p_minus: &SMatrix<T, N, N>,
    h_hat: &SMatrix<T, M, N>,
    r_hat: &SMatrix<T, M, M>,
) -> Result<SMatrix<T, N, M>> {
    let innovation = symmetrize(&(h_hat * p_minus * h_hat.transpose() + r_hat));
    let eig = nalgebra::DMatrix::from_column_slice(M, M, innovation.as_slice()).symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > T::zero() {
        to_f64(hi / lo)
    } else {
        f64::INFINITY
    };
    if !(condition < INNOVATION_CONDITION_LIMIT) {
        return Err(Error::SingularInnovation { condition });
    }
    let chol = innovation
        .cholesky()
        .ok_or(Error::SingularInnovation { condition })?;
    // K Sᵀ = P Hᵀ with S symmetric  ⇒  S Kᵀ = H P
    let kt = chol.solve(&(h_hat * p_minus));
    Ok(kt.transpose())
}

/// `(I − KĤ)P⁻(I − KĤ)ᵀ + KR̂Kᵀ`, symmetrized.
pub fn joseph_update<T: Scalar, const N: usize, const M: usize>(
    p_minus: &SMatrix<T, N, N>,
    k: &SMatrix<T, N, M>,
    h_hat: &SMatrix<T, M, N>,
    r_hat: &SMatrix<T, M, M>,
) -> SMatrix<T, N, N> {
    let a = SMatrix::<T, N, N>::identity() - k * h_hat;
    symmetrize(&(a * p_minus * a.transpose() + k * r_hat * k.transpose()))
}

/// `x̂⁺ = x̂⁻ + K(z − ẑ)`.
pub fn state_update<T: Scalar, const N: usize, const M: usize>(
    x_hat_minus: &SVector<T, N>,
    k: &SMatrix<T, N, M>,
    z: &SVector<T, M>,
    z_pred: &SVector<T, M>,
) -> SVector<T, N> {
    x_hat_minus + k * (z - z_pred)
}

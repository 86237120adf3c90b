use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar};
use crate::sysmodel::{check_shape, CoefficientSet, Dimensions};

/// Condition number above which S or T is rejected.
pub const COUPLING_CONDITION_LIMIT: f64 = 1e12;

/// Augmented linear system over `X = [δx; δx̂; δx̌]`:
///
/// ```text
/// Ẋ   = 𝓕 X + 𝓖 η + 𝓦 w
/// X⁺  = 𝓐ₖ X⁻ + 𝓑ₖ νₖ
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem<T: Scalar> {
    pub f_cal: DMatrix<T>,
    pub g_cal: DMatrix<T>,
    pub w_cal: DMatrix<T>,
    pub a_k: DMatrix<T>,
    pub b_k: DMatrix<T>,
    pub s: DMatrix<T>,
    pub t: DMatrix<T>,
}

impl<T: Scalar> AugmentedSystem<T> {
    /// Assembles the propagation matrices and, when `gain` is given, the
    /// update matrices (identity/zero otherwise).
    pub fn from_coefficients(
        dims: &Dimensions,
        coeffs: &CoefficientSet<T>,
        gain: Option<&DMatrix<T>>,
    ) -> Result<Self> {
        coeffs.validate(dims)?;
        let (s, t) = coupling_matrices(coeffs)?;
        let (f_cal, g_cal, w_cal) = assemble_continuous(dims, coeffs, &s, &t);
        let (a_k, b_k) = match gain {
            Some(k) => assemble_update(dims, k, &coeffs.h_x, &coeffs.h_hat_xhat)?,
            None => {
                let na = dims.augmented();
                (DMatrix::identity(na, na), DMatrix::zeros(na, dims.n_z))
            }
        };
        Ok(Self {
            f_cal,
            g_cal,
            w_cal,
            a_k,
            b_k,
            s,
            t,
        })
    }
}

fn inverse_checked<T: Scalar>(which: &'static str, m: DMatrix<T>) -> Result<DMatrix<T>> {
    let sv = m.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    let condition = if lo > T::zero() {
        to_f64(hi / lo)
    } else {
        f64::INFINITY
    };
    if !(condition < COUPLING_CONDITION_LIMIT) {
        return Err(Error::IllConditioned { which, condition });
    }
    m.try_inverse()
        .ok_or(Error::IllConditioned { which, condition })
}

/// `S = (I − G_x̂* N_ỹ C_u − G_ỹ C_u)⁻¹` and
/// `T = (I − C_u G_x̂* N_ỹ − C_u G_ỹ)⁻¹`, resolving the algebraic loop
/// between control and continuous measurements.
pub fn coupling_matrices<T: Scalar>(
    coeffs: &CoefficientSet<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let c = coeffs;
    let n_u = c.f_u.ncols();
    let n_y = c.c_x.nrows();
    let loop_u = &c.g_xstar * &c.n_y * &c.c_u + &c.g_y * &c.c_u;
    let loop_y = &c.c_u * &c.g_xstar * &c.n_y + &c.c_u * &c.g_y;
    let s = inverse_checked("S", DMatrix::identity(n_u, n_u) - loop_u)?;
    let t = inverse_checked("T", DMatrix::identity(n_y, n_y) - loop_y)?;
    Ok((s, t))
}

/// Builds `𝓕` from its nine blocks together with `𝓖` and `𝓦`.
pub fn assemble_continuous<T: Scalar>(
    dims: &Dimensions,
    coeffs: &CoefficientSet<T>,
    s: &DMatrix<T>,
    t: &DMatrix<T>,
) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
    let c = coeffs;
    let (n, nh, nc) = (dims.n, dims.n_hat, dims.n_check);
    let na = dims.augmented();

    let fu_s = &c.f_u * s;
    let fhy_t = &c.f_hat_y * t;
    let fcs_ny_t = &c.f_check_xstar * &c.n_y * t;
    // control sensitivity to nav dispersions through control law and guidance
    let g_nav = &c.g_xhat + &c.g_xstar * &c.n_xhat;

    let f_xx = &c.f_x + &fu_s * (&c.g_xstar * &c.n_y * &c.c_x + &c.g_y * &c.c_x);
    let f_xxh = &fu_s * &g_nav;
    let f_xxc = &fu_s * &c.g_xcheck;

    let f_xhx = &fhy_t * &c.c_x;
    let f_xhxh = &c.f_hat_xhat + &fhy_t * &c.c_u * &c.g_xhat + &fhy_t * &c.c_u * &c.g_xstar * &c.n_xhat;
    let f_xhxc = &fhy_t * &c.c_u * &c.g_xcheck;

    let f_xcx = &fcs_ny_t * &c.c_x;
    let f_xcxh = &c.f_check_xhat
        + &c.f_check_xstar * &c.n_xhat
        + &fcs_ny_t * (&c.c_u * &c.g_xhat + &c.c_u * &c.g_xstar * &c.n_xhat);
    let f_xcxc = &fcs_ny_t * &c.c_u * &c.g_xcheck;

    let mut f = DMatrix::zeros(na, na);
    f.view_mut((0, 0), (n, n)).copy_from(&f_xx);
    f.view_mut((0, n), (n, nh)).copy_from(&f_xxh);
    f.view_mut((0, n + nh), (n, nc)).copy_from(&f_xxc);
    f.view_mut((n, 0), (nh, n)).copy_from(&f_xhx);
    f.view_mut((n, n), (nh, nh)).copy_from(&f_xhxh);
    f.view_mut((n, n + nh), (nh, nc)).copy_from(&f_xhxc);
    f.view_mut((n + nh, 0), (nc, n)).copy_from(&f_xcx);
    f.view_mut((n + nh, n), (nc, nh)).copy_from(&f_xcxh);
    f.view_mut((n + nh, n + nh), (nc, nc)).copy_from(&f_xcxc);

    let mut g = DMatrix::zeros(na, dims.n_y);
    g.view_mut((0, 0), (n, dims.n_y))
        .copy_from(&(&fu_s * (&c.g_xstar * &c.n_y + &c.g_y)));
    g.view_mut((n, 0), (nh, dims.n_y)).copy_from(&fhy_t);
    g.view_mut((n + nh, 0), (nc, dims.n_y)).copy_from(&fcs_ny_t);

    let mut w = DMatrix::zeros(na, dims.n_w);
    w.view_mut((0, 0), (n, dims.n_w)).copy_from(&c.b);

    (f, g, w)
}

/// Update matrices for a discrete measurement processed with gain `K`:
/// truth and controller dispersions pass through unchanged.
pub fn assemble_update<T: Scalar>(
    dims: &Dimensions,
    gain: &DMatrix<T>,
    h_x: &DMatrix<T>,
    h_hat_xhat: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (n, nh) = (dims.n, dims.n_hat);
    check_shape("K", gain, nh, dims.n_z)?;
    check_shape("H_x", h_x, dims.n_z, n)?;
    check_shape("H_hat_xhat", h_hat_xhat, dims.n_z, nh)?;
    let na = dims.augmented();
    let mut a = DMatrix::identity(na, na);
    a.view_mut((n, 0), (nh, n)).copy_from(&(gain * h_x));
    a.view_mut((n, n), (nh, nh))
        .copy_from(&(DMatrix::identity(nh, nh) - gain * h_hat_xhat));
    let mut b = DMatrix::zeros(na, dims.n_z);
    b.view_mut((n, 0), (nh, dims.n_z)).copy_from(gain);
    Ok((a, b))
}

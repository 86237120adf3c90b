//! System-function contracts of the closed-loop GNC framework and a
//! central-difference Jacobian oracle for checking analytic linearizations.
//!
//! A closed-loop system is described by nine functions:
//!
//! ```text
//! truth dynamics        ẋ  = f(x, u, w)
//! continuous meas.      ỹ  = c(x, u) + η
//! discrete meas.        z̃  = h(x) + ν
//! nav propagation       x̂̇  = f̂(x̂, ỹ)
//! predicted meas.       ẑ  = ĥ(x̂)
//! guidance              x̂* = n(x̂, ỹ)
//! controller dynamics   x̌̇  = f̌(x̂, x̂*)
//! controller output     u  = g(x̌, x̂, x̂*, ỹ)
//! truth → nav mapping   xₙ = m(x)
//! ```
//!
//! Their partial derivatives along a nominal form a [`CoefficientSet`], which
//! the `lincov` module assembles into the augmented dispersion system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};

/// State, measurement and noise counts of a closed-loop system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    /// truth states
    pub n: usize,
    /// navigation states
    pub n_hat: usize,
    /// controller states
    pub n_check: usize,
    /// guidance outputs (desired states)
    pub n_star: usize,
    /// control inputs
    pub n_u: usize,
    /// continuous measurements
    pub n_y: usize,
    /// discrete measurements
    pub n_z: usize,
    /// process-noise inputs
    pub n_w: usize,
}

impl Dimensions {
    /// Planar UAV instance.
    pub const UAV: Dimensions = Dimensions {
        n: 7,
        n_hat: 4,
        n_check: 2,
        n_star: 2,
        n_u: 2,
        n_y: 2,
        n_z: 3,
        n_w: 2,
    };

    /// Size of the augmented dispersion vector `[δx; δx̂; δx̌]`.
    pub fn augmented(&self) -> usize {
        self.n + self.n_hat + self.n_check
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.n,
            self.n_hat,
            self.n_check,
            self.n_star,
            self.n_u,
            self.n_y,
            self.n_z,
            self.n_w,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(Error::Domain(format!(
                "all dimensions must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Noise intensities: process-noise PSD, continuous measurement-noise PSD and
/// discrete measurement-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec<T: Scalar> {
    pub s_w: DMatrix<T>,
    pub s_eta: DMatrix<T>,
    pub r_nu: DMatrix<T>,
}

impl<T: Scalar> NoiseSpec<T> {
    pub fn zeros(dims: &Dimensions) -> Self {
        Self {
            s_w: DMatrix::zeros(dims.n_w, dims.n_w),
            s_eta: DMatrix::zeros(dims.n_y, dims.n_y),
            r_nu: DMatrix::zeros(dims.n_z, dims.n_z),
        }
    }

    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        check_shape("S_w", &self.s_w, dims.n_w, dims.n_w)?;
        check_shape("S_eta", &self.s_eta, dims.n_y, dims.n_y)?;
        check_shape("R_nu", &self.r_nu, dims.n_z, dims.n_z)?;
        for (name, m) in [("S_w", &self.s_w), ("S_eta", &self.s_eta), ("R_nu", &self.r_nu)] {
            let asym = (m - m.transpose()).abs().max();
            if asym > lit(1e-12) {
                return Err(Error::Domain(format!("{name} is not symmetric")));
            }
            let min_eig = m.clone().symmetric_eigenvalues().min();
            if min_eig < lit(-1e-12) {
                return Err(Error::Domain(format!("{name} is not positive semidefinite")));
            }
        }
        Ok(())
    }
}

/// The nine functions of a closed-loop GNC system.
///
/// Implementations must be deterministic and return vectors whose lengths
/// agree with [`SystemFunctions::dimensions`].
pub trait SystemFunctions<T: Scalar> {
    fn dimensions(&self) -> Dimensions;
    fn truth_dynamics(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T>;
    fn continuous_measurement(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T>;
    fn discrete_measurement(&self, x: &DVector<T>) -> DVector<T>;
    fn nav_propagation(&self, x_hat: &DVector<T>, y: &DVector<T>) -> DVector<T>;
    fn predicted_measurement(&self, x_hat: &DVector<T>) -> DVector<T>;
    fn guidance(&self, x_hat: &DVector<T>, y: &DVector<T>) -> DVector<T>;
    fn controller_dynamics(&self, x_hat: &DVector<T>, x_star: &DVector<T>) -> DVector<T>;
    fn controller_output(
        &self,
        x_check: &DVector<T>,
        x_hat: &DVector<T>,
        x_star: &DVector<T>,
        y: &DVector<T>,
    ) -> DVector<T>;
    fn truth_to_nav(&self, x: &DVector<T>) -> DVector<T>;

    /// Brings angle components of an operating point into their canonical
    /// range before differencing.
    fn normalize_point(&self, _point: &mut OperatingPoint<T>) {}
}

/// A single point of a nominal trajectory at which the system is linearized.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint<T: Scalar> {
    pub x: DVector<T>,
    pub x_hat: DVector<T>,
    pub x_check: DVector<T>,
    pub u: DVector<T>,
    pub y: DVector<T>,
}

impl<T: Scalar> OperatingPoint<T> {
    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        for (what, len, expected) in [
            ("x", self.x.len(), dims.n),
            ("x_hat", self.x_hat.len(), dims.n_hat),
            ("x_check", self.x_check.len(), dims.n_check),
            ("u", self.u.len(), dims.n_u),
            ("y", self.y.len(), dims.n_y),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch {
                    what: format!("operating point {what}"),
                    expected: expected.to_string(),
                    found: len.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Partial derivatives of the system functions evaluated along a nominal.
///
/// `m_x` is the `n_hat × n` Jacobian of the truth → nav mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T: Scalar> {
    pub f_x: DMatrix<T>,
    pub f_u: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c_x: DMatrix<T>,
    pub c_u: DMatrix<T>,
    pub h_x: DMatrix<T>,
    pub h_hat_xhat: DMatrix<T>,
    pub f_hat_xhat: DMatrix<T>,
    pub f_hat_y: DMatrix<T>,
    pub n_xhat: DMatrix<T>,
    pub n_y: DMatrix<T>,
    pub f_check_xhat: DMatrix<T>,
    pub f_check_xstar: DMatrix<T>,
    pub g_xcheck: DMatrix<T>,
    pub g_xhat: DMatrix<T>,
    pub g_xstar: DMatrix<T>,
    pub g_y: DMatrix<T>,
    pub m_x: DMatrix<T>,
}

impl<T: Scalar> CoefficientSet<T> {
    /// All-zero set with the shapes implied by `dims`.
    pub fn zeros(dims: &Dimensions) -> Self {
        let d = dims;
        Self {
            f_x: DMatrix::zeros(d.n, d.n),
            f_u: DMatrix::zeros(d.n, d.n_u),
            b: DMatrix::zeros(d.n, d.n_w),
            c_x: DMatrix::zeros(d.n_y, d.n),
            c_u: DMatrix::zeros(d.n_y, d.n_u),
            h_x: DMatrix::zeros(d.n_z, d.n),
            h_hat_xhat: DMatrix::zeros(d.n_z, d.n_hat),
            f_hat_xhat: DMatrix::zeros(d.n_hat, d.n_hat),
            f_hat_y: DMatrix::zeros(d.n_hat, d.n_y),
            n_xhat: DMatrix::zeros(d.n_star, d.n_hat),
            n_y: DMatrix::zeros(d.n_star, d.n_y),
            f_check_xhat: DMatrix::zeros(d.n_check, d.n_hat),
            f_check_xstar: DMatrix::zeros(d.n_check, d.n_star),
            g_xcheck: DMatrix::zeros(d.n_u, d.n_check),
            g_xhat: DMatrix::zeros(d.n_u, d.n_hat),
            g_xstar: DMatrix::zeros(d.n_u, d.n_star),
            g_y: DMatrix::zeros(d.n_u, d.n_y),
            m_x: DMatrix::zeros(d.n_hat, d.n),
        }
    }

    /// `(name, matrix)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, &DMatrix<T>); 18] {
        [
            ("F_x", &self.f_x),
            ("F_u", &self.f_u),
            ("B", &self.b),
            ("C_x", &self.c_x),
            ("C_u", &self.c_u),
            ("H_x", &self.h_x),
            ("H_hat_xhat", &self.h_hat_xhat),
            ("F_hat_xhat", &self.f_hat_xhat),
            ("F_hat_y", &self.f_hat_y),
            ("N_xhat", &self.n_xhat),
            ("N_y", &self.n_y),
            ("F_check_xhat", &self.f_check_xhat),
            ("F_check_xstar", &self.f_check_xstar),
            ("G_xcheck", &self.g_xcheck),
            ("G_xhat", &self.g_xhat),
            ("G_xstar", &self.g_xstar),
            ("G_y", &self.g_y),
            ("M_x", &self.m_x),
        ]
    }

    /// Checks every matrix against the shape implied by `dims`.
    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        let reference = Self::zeros(dims);
        for ((name, m), (_, r)) in self.named().iter().zip(reference.named().iter()) {
            check_shape(name, m, r.nrows(), r.ncols())?;
        }
        Ok(())
    }
}

pub(crate) fn check_shape<T: Scalar>(
    what: &str,
    m: &DMatrix<T>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: format!("{rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

/// Default base step for [`numeric_jacobian`]: `1e-6` in double precision,
/// the cube root of machine epsilon for narrower types.
pub fn default_jacobian_step<T: Scalar>() -> T {
    let eps = T::default_epsilon();
    if eps < lit(1e-12) {
        lit(1e-6)
    } else {
        eps.cbrt()
    }
}

/// Central-difference Jacobian of `f` at `at`.
///
/// The step for component `j` is `eps · max(1, |at_j|)`.
pub fn numeric_jacobian<T, F>(f: F, at: &DVector<T>, eps: T) -> Result<DMatrix<T>>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> DVector<T>,
{
    numeric_jacobian_named("function", f, at, eps)
}

fn numeric_jacobian_named<T, F>(
    name: &str,
    f: F,
    at: &DVector<T>,
    eps: T,
) -> Result<DMatrix<T>>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> DVector<T>,
{
    if eps <= T::zero() {
        return Err(Error::Domain("jacobian step must be positive".into()));
    }
    let base = f(at);
    let mut jac = DMatrix::zeros(base.len(), at.len());
    let mut probe = at.clone();
    for j in 0..at.len() {
        let h = eps * T::one().max(at[j].abs());
        probe[j] = at[j] + h;
        let plus = f(&probe);
        probe[j] = at[j] - h;
        let minus = f(&probe);
        probe[j] = at[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteJacobian {
                function: name.to_string(),
                component: j,
            });
        }
        let col = (plus - minus) / (h + h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Computes every coefficient matrix of `system` at `point` by central
/// differences.
pub fn numeric_coefficient_set<T, S>(
    system: &S,
    point: &OperatingPoint<T>,
    eps: T,
) -> Result<CoefficientSet<T>>
where
    T: Scalar,
    S: SystemFunctions<T> + ?Sized,
{
    let dims = system.dimensions();
    dims.validate()?;
    let mut p = point.clone();
    system.normalize_point(&mut p);
    p.validate(&dims)?;
    let w0 = DVector::zeros(dims.n_w);
    let x_star = system.guidance(&p.x_hat, &p.y);

    Ok(CoefficientSet {
        f_x: numeric_jacobian_named("f", |x| system.truth_dynamics(x, &p.u, &w0), &p.x, eps)?,
        f_u: numeric_jacobian_named("f", |u| system.truth_dynamics(&p.x, u, &w0), &p.u, eps)?,
        b: numeric_jacobian_named("f", |w| system.truth_dynamics(&p.x, &p.u, w), &w0, eps)?,
        c_x: numeric_jacobian_named("c", |x| system.continuous_measurement(x, &p.u), &p.x, eps)?,
        c_u: numeric_jacobian_named("c", |u| system.continuous_measurement(&p.x, u), &p.u, eps)?,
        h_x: numeric_jacobian_named("h", |x| system.discrete_measurement(x), &p.x, eps)?,
        h_hat_xhat: numeric_jacobian_named(
            "h_hat",
            |xh| system.predicted_measurement(xh),
            &p.x_hat,
            eps,
        )?,
        f_hat_xhat: numeric_jacobian_named(
            "f_hat",
            |xh| system.nav_propagation(xh, &p.y),
            &p.x_hat,
            eps,
        )?,
        f_hat_y: numeric_jacobian_named("f_hat", |y| system.nav_propagation(&p.x_hat, y), &p.y, eps)?,
        n_xhat: numeric_jacobian_named("n", |xh| system.guidance(xh, &p.y), &p.x_hat, eps)?,
        n_y: numeric_jacobian_named("n", |y| system.guidance(&p.x_hat, y), &p.y, eps)?,
        f_check_xhat: numeric_jacobian_named(
            "f_check",
            |xh| system.controller_dynamics(xh, &x_star),
            &p.x_hat,
            eps,
        )?,
        f_check_xstar: numeric_jacobian_named(
            "f_check",
            |xs| system.controller_dynamics(&p.x_hat, xs),
            &x_star,
            eps,
        )?,
        g_xcheck: numeric_jacobian_named(
            "g",
            |xc| system.controller_output(xc, &p.x_hat, &x_star, &p.y),
            &p.x_check,
            eps,
        )?,
        g_xhat: numeric_jacobian_named(
            "g",
            |xh| system.controller_output(&p.x_check, xh, &x_star, &p.y),
            &p.x_hat,
            eps,
        )?,
        g_xstar: numeric_jacobian_named(
            "g",
            |xs| system.controller_output(&p.x_check, &p.x_hat, xs, &p.y),
            &x_star,
            eps,
        )?,
        g_y: numeric_jacobian_named(
            "g",
            |y| system.controller_output(&p.x_check, &p.x_hat, &x_star, y),
            &p.y,
            eps,
        )?,
        m_x: numeric_jacobian_named("m", |x| system.truth_to_nav(x), &p.x, eps)?,
    })
}

/// Entry-wise tolerance: an entry passes when
/// `|analytic − numeric| ≤ max(rel · |numeric|, abs_floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianTolerance {
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for JacobianTolerance {
    fn default() -> Self {
        Self {
            rel: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

/// Agreement of one analytic matrix with its numeric counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCheck {
    pub name: &'static str,
    pub max_abs_error: f64,
    /// `|a − n| / max(|n|, abs_floor / rel)`, maximized over entries.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport {
    pub checks: Vec<MatrixCheck>,
}

impl CoefficientReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }
}

/// Compares an analytic coefficient set against the numeric oracle.
pub fn validate_coefficient_set<T, S>(
    system: &S,
    point: &OperatingPoint<T>,
    coeffs: &CoefficientSet<T>,
    tol: JacobianTolerance,
) -> Result<CoefficientReport>
where
    T: Scalar,
    S: SystemFunctions<T> + ?Sized,
{
    let dims = system.dimensions();
    coeffs.validate(&dims)?;
    let numeric = numeric_coefficient_set(system, point, default_jacobian_step())?;
    let checks = coeffs
        .named()
        .iter()
        .zip(numeric.named().iter())
        .map(|((name, a), (_, n))| compare_matrix(name, a, n, tol))
        .collect();
    Ok(CoefficientReport { checks })
}

fn compare_matrix<T: Scalar>(
    name: &'static str,
    analytic: &DMatrix<T>,
    numeric: &DMatrix<T>,
    tol: JacobianTolerance,
) -> MatrixCheck {
    let denom_floor = tol.abs_floor / tol.rel;
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut passed = true;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let (a, n) = (to_f64(*a), to_f64(*n));
        let err = (a - n).abs();
        if !err.is_finite() || err > (tol.rel * n.abs()).max(tol.abs_floor) {
            passed = false;
        }
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / n.abs().max(denom_floor));
    }
    MatrixCheck {
        name,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        passed,
    }
}

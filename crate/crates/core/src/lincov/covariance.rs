use nalgebra::DMatrix;

use super::augmented::AugmentedSystem;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Scalar};
use crate::sysmodel::{check_shape, Dimensions, NoiseSpec};

/// Covariance of the augmented dispersion state `[δx; δx̂; δx̌]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCovariance<T: Scalar> {
    pub c_a: DMatrix<T>,
}

/// Symmetry and definiteness diagnostics of an augmented covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Health {
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

impl Health {
    /// Symmetric within `1e-10` and minimum eigenvalue above `−1e-8·trace`.
    pub fn ok(&self) -> bool {
        self.max_asymmetry <= 1e-10 && self.min_eigenvalue >= -1e-8 * self.trace.max(0.0)
    }
}

impl<T: Scalar> AugmentedCovariance<T> {
    pub fn zeros(dims: &Dimensions) -> Self {
        let na = dims.augmented();
        Self {
            c_a: DMatrix::zeros(na, na),
        }
    }

    /// Initial covariance for `δx ~ N(0, D₀)`, `δx̂ = M̃_x δx + e₀` with
    /// `e₀ ~ N(0, P₀)` independent of `δx`, and zero controller dispersion.
    pub fn initial(dims: &Dimensions, d0: &DMatrix<T>, p0: &DMatrix<T>, m_x: &DMatrix<T>) -> Result<Self> {
        let (n, nh) = (dims.n, dims.n_hat);
        check_shape("D0", d0, n, n)?;
        check_shape("P0", p0, nh, nh)?;
        check_shape("M_x", m_x, nh, n)?;
        let mut c = Self::zeros(dims);
        let cross = m_x * d0;
        c.c_a.view_mut((0, 0), (n, n)).copy_from(d0);
        c.c_a.view_mut((n, 0), (nh, n)).copy_from(&cross);
        c.c_a.view_mut((0, n), (n, nh)).copy_from(&cross.transpose());
        c.c_a
            .view_mut((n, n), (nh, nh))
            .copy_from(&(&cross * m_x.transpose() + p0));
        c.c_a = symmetrize(&c.c_a);
        Ok(c)
    }

    pub fn health(&self) -> Health {
        let asym = (&self.c_a - self.c_a.transpose()).abs().max();
        let eig = symmetrize(&self.c_a).symmetric_eigenvalues();
        Health {
            max_asymmetry: to_f64(asym),
            min_eigenvalue: to_f64(eig.min()),
            trace: to_f64(self.c_a.trace()),
        }
    }
}

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

fn check_finite<T: Scalar>(c: &DMatrix<T>, time: f64) -> Result<()> {
    if c.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteCovariance { time })
    }
}

/// One RK4 step of `Ċ = 𝓕C + C𝓕ᵀ + 𝓖S_η𝓖ᵀ + 𝓦S_w𝓦ᵀ` with the system held
/// over the step. `time` only labels a non-finite result.
///
/// For this linear ODE the RK4 step is `T(hℒ)C + h·Ψ(hℒ)Q` with `ℒC = 𝓕C + C𝓕ᵀ`.
/// The homogeneous part is applied as `ΦCΦᵀ`, `Φ` the RK4 transition matrix of
/// `𝓕`, which agrees with `T(hℒ)C` through fourth order and keeps `C` PSD when
/// fast closed-loop modes make `hℒ` large.
pub fn propagate<T: Scalar>(
    c: &AugmentedCovariance<T>,
    sys: &AugmentedSystem<T>,
    noise: &NoiseSpec<T>,
    dt: T,
    time: f64,
) -> Result<AugmentedCovariance<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Domain("propagation step must be positive".into()));
    }
    let f = &sys.f_cal;
    let q = &sys.g_cal * &noise.s_eta * sys.g_cal.transpose()
        + &sys.w_cal * &noise.s_w * sys.w_cal.transpose();
    let lyap = |p: &DMatrix<T>| {
        let fp = f * p;
        &fp + fp.transpose()
    };
    let n = f.nrows();
    let id = DMatrix::<T>::identity(n, n);
    let hf = f * dt;
    let mut phi = id.clone();
    let mut forced = q.clone();
    for j in [4.0, 3.0, 2.0] {
        phi = &id + &hf * &phi * lit::<T>(1.0 / j);
        forced = &q + lyap(&forced) * (dt / lit::<T>(j));
    }
    let phi = &id + &hf * &phi;
    let next = &phi * &c.c_a * phi.transpose() + forced * dt;
    let next = symmetrize(&next);
    check_finite(&next, time)?;
    Ok(AugmentedCovariance { c_a: next })
}

/// `C⁺ = 𝓐C⁻𝓐ᵀ + 𝓑R_ν𝓑ᵀ`.
pub fn update<T: Scalar>(
    c: &AugmentedCovariance<T>,
    a_k: &DMatrix<T>,
    b_k: &DMatrix<T>,
    r_nu: &DMatrix<T>,
    time: f64,
) -> Result<AugmentedCovariance<T>> {
    let next = symmetrize(&(a_k * &c.c_a * a_k.transpose() + b_k * r_nu * b_k.transpose()));
    check_finite(&next, time)?;
    Ok(AugmentedCovariance { c_a: next })
}

/// Truth dispersion covariance: the top-left `n × n` block.
pub fn extract_dispersion<T: Scalar>(c: &AugmentedCovariance<T>, dims: &Dimensions) -> DMatrix<T> {
    c.c_a.view((0, 0), (dims.n, dims.n)).into_owned()
}

/// True estimation-error covariance `[−M_x I 0] C [−M_x I 0]ᵀ`.
pub fn extract_estimation_error<T: Scalar>(
    c: &AugmentedCovariance<T>,
    m_x: &DMatrix<T>,
    dims: &Dimensions,
) -> DMatrix<T> {
    let (n, nh) = (dims.n, dims.n_hat);
    let mut sel = DMatrix::zeros(nh, dims.augmented());
    sel.view_mut((0, 0), (nh, n)).copy_from(&(-m_x));
    sel.view_mut((0, n), (nh, nh)).fill_with_identity();
    symmetrize(&(&sel * &c.c_a * sel.transpose()))
}

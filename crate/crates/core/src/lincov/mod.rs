//! Linear covariance engine: augmented dispersion system, covariance
//! propagation/update, and extraction of truth dispersions and true
//! estimation errors along a nominal trajectory.

mod augmented;
mod covariance;
mod nominal;

pub use augmented::{
    assemble_continuous, assemble_update, coupling_matrices, AugmentedSystem,
    COUPLING_CONDITION_LIMIT,
};
pub use covariance::{
    extract_dispersion, extract_estimation_error, propagate, symmetrize, update,
    AugmentedCovariance, Health,
};
pub use nominal::{LinearizedNominal, NominalSample, NominalTrajectory, StopCondition};

use nalgebra::DMatrix;

use crate::error::Result;
use crate::scalar::{to_f64, Scalar};
use crate::sysmodel::NoiseSpec;

/// Covariance state at one output grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinCovSample<T: Scalar> {
    pub step: usize,
    pub time: T,
    pub c_a: AugmentedCovariance<T>,
    pub d_true: DMatrix<T>,
    pub p_true: DMatrix<T>,
    pub p_hat: DMatrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinCovSeries<T: Scalar> {
    pub samples: Vec<LinCovSample<T>>,
    /// covariance at the last grid point, whatever the stride
    pub terminal: AugmentedCovariance<T>,
}

/// Walks the covariance along a linearized nominal one grid point at a time.
pub struct Propagator<'a, T: Scalar, N: LinearizedNominal<T>> {
    nominal: &'a N,
    noise: &'a NoiseSpec<T>,
    k: usize,
    c: AugmentedCovariance<T>,
}

impl<'a, T: Scalar, N: LinearizedNominal<T>> Propagator<'a, T, N> {
    pub fn new(nominal: &'a N, noise: &'a NoiseSpec<T>, initial: AugmentedCovariance<T>) -> Result<Self> {
        let dims = nominal.dimensions();
        noise.validate(&dims)?;
        crate::sysmodel::check_shape("C_A", &initial.c_a, dims.augmented(), dims.augmented())?;
        Ok(Self {
            nominal,
            noise,
            k: 0,
            c: initial,
        })
    }

    pub fn index(&self) -> usize {
        self.k
    }

    pub fn covariance(&self) -> &AugmentedCovariance<T> {
        &self.c
    }

    pub fn into_covariance(self) -> AugmentedCovariance<T> {
        self.c
    }

    pub fn finished(&self) -> bool {
        self.k + 1 >= self.nominal.len()
    }

    /// Propagates to the next grid point and applies its update, if any.
    /// Returns false when already at the last point.
    pub fn advance(&mut self) -> Result<bool> {
        if self.finished() {
            return Ok(false);
        }
        let dims = self.nominal.dimensions();
        let k = self.k;
        let coeffs = self.nominal.coefficients(k);
        let sys = AugmentedSystem::from_coefficients(&dims, &coeffs, None)?;
        let dt = self.nominal.time(k + 1) - self.nominal.time(k);
        let t_next = to_f64(self.nominal.time(k + 1));
        self.c = propagate(&self.c, &sys, self.noise, dt, t_next)?;
        if let Some(gain) = self.nominal.update_gain(k + 1) {
            // measurement geometry at the update instant
            let coeffs = self.nominal.coefficients(k + 1);
            let (a, b) = assemble_update(&dims, &gain, &coeffs.h_x, &coeffs.h_hat_xhat)?;
            self.c = update(&self.c, &a, &b, &self.noise.r_nu, t_next)?;
        }
        self.k += 1;
        Ok(true)
    }

    /// Output record at the current grid point.
    pub fn sample(&self) -> LinCovSample<T> {
        let dims = self.nominal.dimensions();
        let m_x = self.nominal.coefficients(self.k).m_x;
        LinCovSample {
            step: self.k,
            time: self.nominal.time(self.k),
            d_true: extract_dispersion(&self.c, &dims),
            p_true: extract_estimation_error(&self.c, &m_x, &dims),
            p_hat: self.nominal.filter_covariance(self.k),
            c_a: self.c.clone(),
        }
    }
}

/// Propagates `initial` along the whole nominal, recording every
/// `stride`-th grid point and always the last one.
pub fn run<T: Scalar, N: LinearizedNominal<T>>(
    nominal: &N,
    noise: &NoiseSpec<T>,
    initial: AugmentedCovariance<T>,
    stride: usize,
) -> Result<LinCovSeries<T>> {
    let stride = stride.max(1);
    let mut p = Propagator::new(nominal, noise, initial)?;
    let mut samples = Vec::new();
    if nominal.is_empty() {
        return Ok(LinCovSeries {
            samples,
            terminal: p.into_covariance(),
        });
    }
    samples.push(p.sample());
    while p.advance()? {
        if p.index() % stride == 0 || p.finished() {
            samples.push(p.sample());
        }
    }
    Ok(LinCovSeries {
        samples,
        terminal: p.into_covariance(),
    })
}

/// Largest relative difference, per navigation state, between the true
/// estimation-error σ and the filter's own σ over a series. Points where
/// both σ are at or below `floor` count as agreeing.
pub fn filter_consistency<T: Scalar>(series: &LinCovSeries<T>, floor: f64) -> Vec<f64> {
    let n = series.samples.first().map_or(0, |s| s.p_hat.nrows());
    let mut worst = vec![0.0f64; n];
    for s in &series.samples {
        for (i, w) in worst.iter_mut().enumerate() {
            let truth = to_f64(s.p_true[(i, i)]).max(0.0).sqrt();
            let filter = to_f64(s.p_hat[(i, i)]).max(0.0).sqrt();
            let dev = if filter > floor {
                (truth / filter - 1.0).abs()
            } else if truth <= floor {
                0.0
            } else {
                f64::INFINITY
            };
            *w = w.max(dev);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::Dimensions;
    use crate::uav::params::UavParams;
    use crate::uav::{ClosedLoop, GpsCoverage, LoopState, UavModel, WaypointTracker};
    use nalgebra::{Matrix4, Vector2};

    fn nominal(period: usize, steps: usize) -> NominalTrajectory<f64> {
        let lp = ClosedLoop::new(
            UavModel::new(UavParams::default()),
            0.01,
            GpsCoverage {
                period_steps: period,
                denied: vec![],
            },
        );
        let (x, x_hat, x_check) = lp.model.trim(Vector2::zeros(), 0.3);
        let mut s = LoopState {
            step: 0,
            x,
            x_hat,
            x_check,
            p_hat: Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 0.01, 1e-3)),
        };
        let mut tr = WaypointTracker::new(vec![
            Vector2::zeros(),
            Vector2::new(3000.0 * 0.3f64.cos(), 3000.0 * 0.3f64.sin()),
        ])
        .unwrap();
        NominalTrajectory::simulate(&lp, &mut s, &mut tr, StopCondition::Steps(steps)).unwrap()
    }

    #[test]
    fn zero_noise_zero_initial_gives_zero_series() {
        let nom = nominal(100, 300);
        let d = Dimensions::UAV;
        let out = run(&nom, &NoiseSpec::zeros(&d), AugmentedCovariance::zeros(&d), 50).unwrap();
        assert_eq!(out.samples.len(), 7);
        for s in &out.samples {
            assert_eq!(s.c_a.c_a, DMatrix::zeros(13, 13));
        }
    }

    #[test]
    fn stride_keeps_last_point() {
        let nom = nominal(100, 205);
        let d = Dimensions::UAV;
        let noise = nom.model.noise_spec();
        let out = run(&nom, &noise, AugmentedCovariance::zeros(&d), 100).unwrap();
        let steps: Vec<usize> = out.samples.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 100, 200, 205]);
        assert_eq!(out.samples.last().unwrap().c_a, out.terminal);
    }

    #[test]
    fn imu_only_position_dispersion_grows() {
        let nom = nominal(0, 3000);
        let d = Dimensions::UAV;
        let noise = nom.model.noise_spec();
        let out = run(&nom, &noise, AugmentedCovariance::zeros(&d), 10).unwrap();
        for w in out.samples.windows(2) {
            for i in 0..2 {
                assert!(w[1].d_true[(i, i)] >= w[0].d_true[(i, i)] - 1e-12);
            }
        }
        assert!(out.terminal.c_a[(0, 0)] + out.terminal.c_a[(1, 1)] > 0.0);
    }

    #[test]
    fn gps_update_shrinks_estimation_error() {
        let nom = nominal(100, 1000);
        let d = Dimensions::UAV;
        let noise = nom.model.noise_spec();
        let m_x = nom.coefficients(0).m_x;
        let p0 = nom.filter_covariance(0);
        let c0 = AugmentedCovariance::initial(&d, &(DMatrix::identity(7, 7) * 1e-4), &p0, &m_x).unwrap();
        let out = run(&nom, &noise, c0, 1).unwrap();
        for k in (100..=1000).step_by(100) {
            let before = &out.samples[k - 1].p_true;
            let after = &out.samples[k].p_true;
            assert!(after.trace() < before.trace(), "step {k}");
        }
        for s in &out.samples {
            assert!(s.c_a.health().ok(), "step {}", s.step);
        }
        // the filter's design model is the truth model here
        let worst = filter_consistency(&out, 1e-12);
        assert!(worst.iter().all(|w| *w < 0.15), "{worst:?}");
    }

    #[test]
    fn filter_consistency_flags_mismatch() {
        let nom = nominal(100, 50);
        let d = Dimensions::UAV;
        let mut out = run(&nom, &NoiseSpec::zeros(&d), AugmentedCovariance::zeros(&d), 10).unwrap();
        // zero true error against a nonzero filter σ: full relative deviation
        assert_eq!(filter_consistency(&out, 1e-12), vec![1.0; 4]);
        for s in &mut out.samples {
            s.p_hat = DMatrix::zeros(4, 4);
        }
        assert_eq!(filter_consistency(&out, 1e-12), vec![0.0; 4]);
    }
}

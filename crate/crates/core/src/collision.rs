//! Gaussian collision probability between the vehicle and uncertain static
//! obstacles, evaluated pointwise along a trajectory.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, normal_cdf, to_f64, Scalar};

const MIN_ORDER: usize = 8;
const MAX_ORDER: usize = 256;
const CONVERGENCE: f64 = 1e-9;
/// Standard deviations beyond which the density is treated as zero.
const TAIL_SIGMAS: f64 = 12.0;
/// Relative eigenvalue below which a covariance direction counts as null.
const RANK_TOL: f64 = 1e-12;

fn rule(order: usize) -> &'static [(f64, f64)] {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        let mut v = Vec::new();
        let mut n = MIN_ORDER;
        while n <= MAX_ORDER {
            v.push(GaussLegendre::new(NonZeroUsize::new(n).unwrap()));
            n *= 2;
        }
        v
    });
    let idx = (order / MIN_ORDER).trailing_zeros() as usize;
    rules[idx].as_node_weight_pairs()
}

/// Two-dimensional Gaussian in the north/east plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D<T: Scalar> {
    pub mean: Vector2<T>,
    pub cov: Matrix2<T>,
}

impl<T: Scalar> Gaussian2D<T> {
    pub fn new(mean: Vector2<T>, cov: Matrix2<T>) -> Result<Self> {
        let g = Self { mean, cov };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().chain(self.cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::Domain("Gaussian has non-finite entries".into()));
        }
        let asym = (self.cov[(0, 1)] - self.cov[(1, 0)]).abs();
        let scale = self.cov[(0, 0)].abs() + self.cov[(1, 1)].abs();
        if asym > lit::<T>(1e-10) * (T::one() + scale) {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        let lo = self.cov.symmetric_eigenvalues().min();
        if lo < -lit::<T>(1e-12) * (T::one() + scale) {
            return Err(Error::Domain("covariance is not positive semidefinite".into()));
        }
        Ok(())
    }
}

/// Uncertain static obstacles sharing one box half-extent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMap<T: Scalar> {
    pub obstacles: Vec<Gaussian2D<T>>,
    /// half-widths of the collision box along north and east, m
    pub half_extent: Vector2<T>,
}

impl<T: Scalar> ObstacleMap<T> {
    pub fn new(obstacles: Vec<Gaussian2D<T>>, half_extent: Vector2<T>) -> Result<Self> {
        if !(half_extent[0] > T::zero() && half_extent[1] > T::zero()) {
            return Err(Error::Domain("box half-extent must be positive".into()));
        }
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self {
            obstacles,
            half_extent,
        })
    }

    pub fn empty(half_extent: Vector2<T>) -> Self {
        Self {
            obstacles: Vec::new(),
            half_extent,
        }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }
}

/// Serializable obstacle description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub mean: [f64; 2],
    /// row-major 2×2 covariance, m²
    pub cov: [[f64; 2]; 2],
}

impl ObstacleSpec {
    pub fn to_gaussian<T: Scalar>(&self) -> Result<Gaussian2D<T>> {
        Gaussian2D::new(
            Vector2::new(lit(self.mean[0]), lit(self.mean[1])),
            Matrix2::new(
                lit(self.cov[0][0]),
                lit(self.cov[0][1]),
                lit(self.cov[1][0]),
                lit(self.cov[1][1]),
            ),
        )
    }
}

/// Stacked mean and block-diagonal covariance of `[p_uav; p_1; …; p_N]`.
pub fn joint_distribution<T: Scalar>(
    vehicle: &Gaussian2D<T>,
    obstacles: &[Gaussian2D<T>],
) -> (DVector<T>, DMatrix<T>) {
    let dim = 2 * (obstacles.len() + 1);
    let mut m = DVector::zeros(dim);
    let mut p = DMatrix::zeros(dim, dim);
    for (i, g) in std::iter::once(vehicle).chain(obstacles).enumerate() {
        m.fixed_rows_mut::<2>(2 * i).copy_from(&g.mean);
        p.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(&g.cov);
    }
    (m, p)
}

/// `A_i = [I 0 … −I … 0]` selecting vehicle minus obstacle `i` (zero-based)
/// from the stacked joint vector.
pub fn relative_transform<T: Scalar>(n_obstacles: usize, i: usize) -> DMatrix<T> {
    assert!(i < n_obstacles, "obstacle index out of range");
    let mut a = DMatrix::zeros(2, 2 * (n_obstacles + 1));
    a.fixed_view_mut::<2, 2>(0, 0).fill_with_identity();
    a.fixed_view_mut::<2, 2>(0, 2 * (i + 1))
        .copy_from(&(-Matrix2::<T>::identity()));
    a
}

/// Vehicle-minus-obstacle position distribution for independent Gaussians.
pub fn relative_distribution<T: Scalar>(
    vehicle: &Gaussian2D<T>,
    obstacle: &Gaussian2D<T>,
) -> Gaussian2D<T> {
    Gaussian2D {
        mean: vehicle.mean - obstacle.mean,
        cov: vehicle.cov + obstacle.cov,
    }
}

fn interval_mass<T: Scalar>(mean: T, sd: T, lo: T, hi: T) -> T {
    if hi <= lo {
        return T::zero();
    }
    if sd <= T::zero() {
        return if mean >= lo && mean <= hi { T::one() } else { T::zero() };
    }
    // evaluate in the tail that keeps precision
    let diff = if mean > (lo + hi) * lit(0.5) {
        normal_cdf((mean - lo) / sd) - normal_cdf((mean - hi) / sd)
    } else {
        normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd)
    };
    diff.max(T::zero())
}

/// Probability mass of `d` inside the box `|λ₁| ≤ l₁, |λ₂| ≤ l₂`.
///
/// The first coordinate is integrated by Gauss–Legendre quadrature on
/// panels placed around the edges of the conditional band; the second is
/// integrated in closed form through the conditional normal. Rank-deficient
/// covariances reduce to a line integral or a point-mass check.
pub fn box_probability<T: Scalar>(d: &Gaussian2D<T>, l: &Vector2<T>) -> T {
    let m = d.mean;
    let c = d.cov;
    let eig = c.symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    let tol = lit::<T>(RANK_TOL) * scale;
    let rank = eig.eigenvalues.iter().filter(|&&e| e > tol).count();

    let p = match rank {
        0 => {
            if m[0].abs() <= l[0] && m[1].abs() <= l[1] {
                T::one()
            } else {
                T::zero()
            }
        }
        1 => {
            let j = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
            line_probability(&m, &eig.eigenvectors.column(j).into_owned(), eig.eigenvalues[j].sqrt(), l)
        }
        _ => full_rank_probability(&m, &c, l),
    };
    p.max(T::zero()).min(T::one())
}

/// Mass of `m + v ξ`, `ξ ~ N(0, s²)`, inside the box.
fn line_probability<T: Scalar>(m: &Vector2<T>, v: &Vector2<T>, s: T, l: &Vector2<T>) -> T {
    let mut lo = lit::<T>(f64::NEG_INFINITY);
    let mut hi = lit::<T>(f64::INFINITY);
    for i in 0..2 {
        if v[i].abs() <= lit::<T>(1e-15) {
            if m[i].abs() > l[i] {
                return T::zero();
            }
            continue;
        }
        let a = (-l[i] - m[i]) / v[i];
        let b = (l[i] - m[i]) / v[i];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    interval_mass(T::zero(), s, lo, hi)
}

fn full_rank_probability<T: Scalar>(m: &Vector2<T>, c: &Matrix2<T>, l: &Vector2<T>) -> T {
    let s1 = c[(0, 0)].sqrt();
    let beta = c[(0, 1)] / c[(0, 0)];
    let s_cond = (c[(1, 1)] - c[(0, 1)] * beta).max(T::zero()).sqrt();

    let tail = lit::<T>(TAIL_SIGMAS);
    let a = (-l[0]).max(m[0] - tail * s1);
    let b = l[0].min(m[0] + tail * s1);
    if b <= a {
        return T::zero();
    }

    // conditional mean of λ₂ is m₂ + β(λ₁ − m₁); it crosses ±l₂ where the
    // inner mass changes fastest
    let mut breaks = vec![a, b, m[0]];
    if beta.abs() > T::zero() {
        let width = s_cond / beta.abs();
        for edge in [-l[1], l[1]] {
            let center = m[0] + (edge - m[1]) / beta;
            for k in [-8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0] {
                breaks.push(center + width * lit::<T>(k));
            }
        }
    }
    for k in [-6.0, -3.0, -1.0, 1.0, 3.0, 6.0] {
        breaks.push(m[0] + s1 * lit::<T>(k));
    }
    let mut pts: Vec<T> = breaks.into_iter().filter(|x| *x >= a && *x <= b).collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup_by(|x, y| (*x - *y).abs() <= lit::<T>(1e-12) * (T::one() + y.abs()));

    let density = |x: T| {
        let z = (x - m[0]) / s1;
        let pdf = (-(z * z) * lit(0.5)).exp() / (s1 * lit::<T>(std::f64::consts::TAU).sqrt());
        let mu = m[1] + beta * (x - m[0]);
        pdf * interval_mass(mu, s_cond, -l[1], l[1])
    };

    let integrate = |order: usize| -> T {
        let nodes = rule(order);
        let mut total = T::zero();
        for w in pts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let half = (hi - lo) * lit(0.5);
            let mid = (hi + lo) * lit(0.5);
            let mut s = T::zero();
            for &(x, wt) in nodes {
                s += density(mid + half * lit::<T>(x)) * lit::<T>(wt);
            }
            total += s * half;
        }
        total
    };

    let mut order = MIN_ORDER;
    let mut prev = integrate(order);
    while order < MAX_ORDER {
        order *= 2;
        let next = integrate(order);
        let done = to_f64((next - prev).abs()) < CONVERGENCE;
        prev = next;
        if done {
            break;
        }
    }
    prev
}

/// Per-obstacle collision probabilities along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionSeries<T: Scalar> {
    /// `series[i][k]`: obstacle `i` at time index `k`
    pub series: Vec<Vec<T>>,
    /// running maximum over the whole trajectory, per obstacle
    pub max: Vec<T>,
}

/// Vehicle position distribution from a truth-dispersion covariance:
/// `m = [I 0] x̄`, `P = [I 0] D [I 0]ᵀ`.
pub fn vehicle_position<T: Scalar>(nominal_position: Vector2<T>, d_true: &DMatrix<T>) -> Gaussian2D<T> {
    Gaussian2D {
        mean: nominal_position,
        cov: d_true.fixed_view::<2, 2>(0, 0).into_owned(),
    }
}

/// Collision probability with every obstacle at one instant.
pub fn instant_probabilities<T: Scalar>(vehicle: &Gaussian2D<T>, obstacles: &ObstacleMap<T>) -> Vec<T> {
    obstacles
        .obstacles
        .iter()
        .map(|o| box_probability(&relative_distribution(vehicle, o), &obstacles.half_extent))
        .collect()
}

pub fn path_collision_probabilities<T: Scalar>(
    positions: &[Vector2<T>],
    d_true: &[DMatrix<T>],
    obstacles: &ObstacleMap<T>,
) -> Result<CollisionSeries<T>> {
    if positions.len() != d_true.len() {
        return Err(Error::MisalignedGrid(format!(
            "{} positions but {} covariances",
            positions.len(),
            d_true.len()
        )));
    }
    let mut series = vec![Vec::with_capacity(positions.len()); obstacles.len()];
    let mut max = vec![T::zero(); obstacles.len()];
    for (p, d) in positions.iter().zip(d_true) {
        let v = vehicle_position(*p, d);
        for (i, prob) in instant_probabilities(&v, obstacles).into_iter().enumerate() {
            series[i].push(prob);
            max[i] = max[i].max(prob);
        }
    }
    Ok(CollisionSeries { series, max })
}

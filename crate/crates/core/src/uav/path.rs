use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Straight-line path from `r` along unit direction `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSegment<T: Scalar> {
    /// origin waypoint (north, east), m
    pub r: Vector2<T>,
    /// unit direction (north, east)
    pub q: Vector2<T>,
    /// path heading atan2(q_e, q_n), rad
    pub psi_q: T,
    /// terminal waypoint, m
    pub end: Vector2<T>,
}

impl<T: Scalar> PathSegment<T> {
    pub fn new(start: Vector2<T>, end: Vector2<T>) -> Result<Self> {
        let delta = end - start;
        let len = delta.norm();
        if !(len > T::zero()) || !len.is_finite() {
            return Err(Error::Domain("path segment has zero length".into()));
        }
        let q = delta / len;
        Ok(Self {
            r: start,
            q,
            psi_q: q[1].atan2(q[0]),
            end,
        })
    }

    pub fn length(&self) -> T {
        (self.end - self.r).norm()
    }

    /// Signed cross-track error of `p`, positive to the right of the path.
    pub fn cross_track(&self, p: &Vector2<T>) -> T {
        let (s, c) = self.psi_q.sin_cos();
        -s * (p[0] - self.r[0]) + c * (p[1] - self.r[1])
    }

    /// Distance travelled along the path direction from `r`.
    pub fn along_track(&self, p: &Vector2<T>) -> T {
        (p - self.r).dot(&self.q)
    }
}

/// Active-segment bookkeeping for waypoint following.
///
/// The segment from `w_i` to `w_{i+1}` is left once the position crosses the
/// half-plane through `w_{i+1}` whose normal bisects the incoming and outgoing
/// directions. The last segment is never left.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointTracker<T: Scalar> {
    waypoints: Vec<Vector2<T>>,
    segments: Vec<PathSegment<T>>,
    active: usize,
}

impl<T: Scalar> WaypointTracker<T> {
    pub fn new(waypoints: Vec<Vector2<T>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Domain("at least two waypoints are required".into()));
        }
        let segments = waypoints
            .windows(2)
            .map(|w| PathSegment::new(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            waypoints,
            segments,
            active: 0,
        })
    }

    pub fn waypoints(&self) -> &[Vector2<T>] {
        &self.waypoints
    }

    pub fn segments(&self) -> &[PathSegment<T>] {
        &self.segments
    }

    pub fn active_index(&self) -> usize {
        self.active
    }

    pub fn set_active_index(&mut self, index: usize) {
        self.active = index.min(self.segments.len() - 1);
    }

    pub fn segment(&self) -> &PathSegment<T> {
        &self.segments[self.active]
    }

    pub fn is_last(&self) -> bool {
        self.active + 1 == self.segments.len()
    }

    /// Normal of the switching half-plane at the end of segment `i`.
    fn switch_normal(&self, i: usize) -> Vector2<T> {
        let q_in = self.segments[i].q;
        match self.segments.get(i + 1) {
            Some(next) => {
                let sum = q_in + next.q;
                let norm = sum.norm();
                if norm > lit(1e-9) {
                    sum / norm
                } else {
                    q_in
                }
            }
            None => q_in,
        }
    }

    /// True once `p` lies in the half-plane ending segment `i`.
    pub fn crossed_end(&self, i: usize, p: &Vector2<T>) -> bool {
        let n = self.switch_normal(i);
        (p - self.segments[i].end).dot(&n) >= T::zero()
    }

    /// Advances the active segment for the position `p`. Returns true when the
    /// active segment changed.
    pub fn update(&mut self, p: &Vector2<T>) -> bool {
        let mut changed = false;
        while !self.is_last() && self.crossed_end(self.active, p) {
            self.active += 1;
            changed = true;
        }
        changed
    }

    /// True once `p` has crossed the perpendicular half-plane at the final waypoint.
    pub fn finished(&self, p: &Vector2<T>) -> bool {
        self.is_last() && self.crossed_end(self.active, p)
    }
}

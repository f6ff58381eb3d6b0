//! Reference trajectories `(q_r, qd_r, qdd_r)` for the two joints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefSample {
    pub q: [f64; 2],
    pub qd: [f64; 2],
    pub qdd: [f64; 2],
}

/// A reference motion with analytically consistent derivatives.
pub trait ReferenceTrajectory {
    fn eval(&self, t: f64) -> RefSample;
    /// Observation window length (s).
    fn duration(&self) -> f64;
}

/// Point-to-point quintic segments with zero velocity and acceleration at each waypoint.
///
/// Outside `[0, duration]` the reference holds the first/last waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuinticSpec", into = "QuinticSpec")]
pub struct QuinticReference {
    waypoints: Vec<[f64; 2]>,
    durations: Vec<f64>,
    starts: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuinticSpec {
    waypoints: Vec<[f64; 2]>,
    durations: Vec<f64>,
}

impl TryFrom<QuinticSpec> for QuinticReference {
    type Error = Error;
    fn try_from(s: QuinticSpec) -> Result<Self> {
        QuinticReference::new(s.waypoints, s.durations)
    }
}

impl From<QuinticReference> for QuinticSpec {
    fn from(r: QuinticReference) -> Self {
        QuinticSpec { waypoints: r.waypoints, durations: r.durations }
    }
}

impl QuinticReference {
    pub fn new(waypoints: Vec<[f64; 2]>, durations: Vec<f64>) -> Result<Self> {
        if waypoints.len() < 2 || durations.len() + 1 != waypoints.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} waypoints need {} segment durations, got {}",
                waypoints.len(),
                waypoints.len().saturating_sub(1),
                durations.len()
            )));
        }
        if let Some(d) = durations.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(format!("segment durations must be > 0, got {d}")));
        }
        if waypoints.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("waypoints must be finite".into()));
        }
        let mut starts = Vec::with_capacity(durations.len());
        let mut acc = 0.0;
        for d in &durations {
            starts.push(acc);
            acc += d;
        }
        Ok(Self { waypoints, durations, starts })
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.waypoints
    }

    pub fn segment_durations(&self) -> &[f64] {
        &self.durations
    }

    /// The default exciting trajectory: two joints moving through waypoints
    /// spanning roughly ±π over 20 s, with irregular segment lengths so that
    /// coarse sampling grids do not lock onto the rest points.
    pub fn exciting_default() -> Self {
        let waypoints = vec![
            [0.0, 0.0],
            [1.9, -2.3],
            [-1.2, 1.6],
            [2.6, 2.9],
            [-2.4, -0.7],
            [0.9, -2.9],
            [-2.8, 2.2],
            [1.4, 0.8],
            [0.0, 0.0],
        ];
        let durations = vec![2.3, 2.7, 2.1, 2.9, 2.2, 2.6, 2.8, 2.4];
        Self::new(waypoints, durations).expect("valid built-in trajectory")
    }
}

impl ReferenceTrajectory for QuinticReference {
    fn eval(&self, t: f64) -> RefSample {
        let last = self.waypoints.len() - 1;
        if !(t > 0.0) {
            return RefSample { q: self.waypoints[0], ..Default::default() };
        }
        if t >= self.duration() {
            return RefSample { q: self.waypoints[last], ..Default::default() };
        }
        let seg = self.starts.partition_point(|&s| s <= t) - 1;
        let len = self.durations[seg];
        let s = (t - self.starts[seg]) / len;
        let (s2, s3) = (s * s, s * s * s);
        let pos = s3 * (10.0 - 15.0 * s + 6.0 * s2);
        let vel = s2 * (30.0 - 60.0 * s + 30.0 * s2) / len;
        let acc = s * (60.0 - 180.0 * s + 120.0 * s2) / (len * len);
        let a = self.waypoints[seg];
        let b = self.waypoints[seg + 1];
        let d = [b[0] - a[0], b[1] - a[1]];
        RefSample {
            q: [a[0] + d[0] * pos, a[1] + d[1] * pos],
            qd: [d[0] * vel, d[1] * vel],
            qdd: [d[0] * acc, d[1] * acc],
        }
    }

    fn duration(&self) -> f64 {
        self.durations.iter().sum()
    }
}

//! Trajectory derivatives, spatio-temporal curvature and the embedding
//! confidence weight derived from it.
//!
//! Derivatives are backward differences. The first samples, where a backward
//! difference is undefined, replicate the first defined value so that
//! sequence ends never look like sharp turns.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Stabiliser in the curvature denominator.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Decay of the confidence weight.
pub const DEFAULT_TAU: f64 = 1.0;

const NORMALIZE_STD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    positions: Vec<Vec3>,
    dt: f64,
}

impl Trajectory {
    pub fn new(positions: Vec<Vec3>, dt: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", format!("must be positive and finite, got {dt}")));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::param("positions", "all coordinates must be finite"));
        }
        Ok(Self { positions, dt })
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicProfile {
    pub velocity: Vec<Vec3>,
    pub acceleration: Vec<Vec3>,
    pub curvature: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Backward-difference velocity and acceleration, both of length `T`.
pub fn finite_differences(traj: &Trajectory) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let x = traj.positions();
    let n = x.len();
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let dt = traj.dt();
    let mut v = vec![Vec3::zeros(); n];
    let mut a = vec![Vec3::zeros(); n];
    for t in 1..n {
        v[t] = (x[t] - x[t - 1]) / dt;
    }
    if n >= 2 {
        v[0] = v[1];
    }
    if n >= 3 {
        for t in 2..n {
            a[t] = (v[t] - v[t - 1]) / dt;
        }
        a[0] = a[2];
        a[1] = a[2];
    }
    Ok((v, a))
}

/// `|v x a| / (|v|^3 + eps)`.
pub fn spatio_temporal_curvature(v: &Vec3, a: &Vec3, eps: f64) -> f64 {
    let num = v.cross(a).norm();
    if num == 0.0 {
        return 0.0;
    }
    let speed = v.norm();
    let k = num / (speed * speed * speed + eps);
    if k.is_finite() {
        k
    } else {
        f64::MAX
    }
}

/// `exp(-kappa / tau)`.
pub fn confidence_weight(kappa: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    Ok((-kappa / tau).exp())
}

/// Batch z-score followed by the logistic function. Monotone, so the
/// ordering of the batch is preserved; a constant batch maps to 0.5.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::param("weights", "all weights must be finite"));
    }
    let n = weights.len() as f64;
    // Shifted mean: exact for constant batches, which must map to 0.5.
    let pivot = weights[0];
    let mean = pivot + weights.iter().map(|w| w - pivot).sum::<f64>() / n;
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + NORMALIZE_STD_EPS;
    Ok(weights
        .iter()
        .map(|w| logistic((w - mean) / denom))
        .collect())
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full kinematic profile of one trajectory. Weights here are raw
/// (unnormalised); normalisation happens over a whole batch.
pub fn profile(traj: &Trajectory, eps: f64, tau: f64) -> Result<KinematicProfile> {
    if !(eps >= 0.0) {
        return Err(Error::param("eps", format!("must be non-negative, got {eps}")));
    }
    let (velocity, acceleration) = finite_differences(traj)?;
    let curvature: Vec<f64> = if traj.len() < 3 {
        vec![0.0; traj.len()]
    } else {
        velocity
            .iter()
            .zip(&acceleration)
            .map(|(v, a)| spatio_temporal_curvature(v, a, eps))
            .collect()
    };
    let weight = curvature
        .iter()
        .map(|&k| confidence_weight(k, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(KinematicProfile {
        velocity,
        acceleration,
        curvature,
        weight,
    })
}

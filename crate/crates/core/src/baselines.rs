//! Constant-velocity Kalman filter and last-value predictor.
//!
//! Every scalar channel (4 box coordinates, or speed and steering) gets its
//! own filter with state `[position, velocity]`, one frame per step,
//! `Q = q·I` and scalar observation noise `r`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::odometry::OdometryState;

type Mat2 = [[f64; 2]; 2];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

const F: Mat2 = [[1.0, 1.0], [0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Process noise, added as `q·I` each step.
    pub q: f64,
    /// Observation noise variance.
    pub r: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self { q: 1e-4, r: 1e-2 }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q.is_finite() && self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!(
                "Kalman noise must be positive, got q = {}, r = {}",
                self.q, self.r
            )));
        }
        Ok(())
    }
}

/// One scalar channel.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanChannel {
    pub x: [f64; 2],
    pub p: Mat2,
    params: KalmanParams,
}

impl KalmanChannel {
    /// Two-point initialisation: position `z1`, velocity `z1 − z0`, with
    /// the covariance of that estimator under observation noise `r`.
    pub fn init(z0: f64, z1: f64, params: KalmanParams) -> Result<Self> {
        params.validate()?;
        let r = params.r;
        Ok(Self {
            x: [z1, z1 - z0],
            p: [[r, r], [r, 2.0 * r]],
            params,
        })
    }

    pub fn predict(&mut self) {
        self.x = [self.x[0] + self.x[1], self.x[1]];
        let mut p = matmul(&matmul(&F, &self.p), &transpose(&F));
        p[0][0] += self.params.q;
        p[1][1] += self.params.q;
        self.p = p;
    }

    pub fn update(&mut self, z: f64) {
        let s = self.p[0][0] + self.params.r;
        let k = [self.p[0][0] / s, self.p[1][0] / s];
        let innovation = z - self.x[0];
        self.x = [self.x[0] + k[0] * innovation, self.x[1] + k[1] * innovation];
        let ikh = [[1.0 - k[0], 0.0], [-k[1], 1.0]];
        let p = matmul(&ikh, &self.p);
        let off = 0.5 * (p[0][1] + p[1][0]);
        self.p = [[p[0][0], off], [off, p[1][1]]];
    }

    pub fn covariance(&self) -> Mat2 {
        self.p
    }
}

/// Filters `obs` and rolls the dynamics `n` steps further without updates.
pub fn kalman_predict<const C: usize>(
    obs: &[[f64; C]],
    n: usize,
    params: KalmanParams,
) -> Result<Vec<[f64; C]>> {
    if obs.len() < 2 {
        return Err(Error::Contract(format!(
            "Kalman filter needs at least 2 observations, got {}",
            obs.len()
        )));
    }
    let mut out = alloc::vec![[0.0; C]; n];
    for c in 0..C {
        let mut f = KalmanChannel::init(obs[0][c], obs[1][c], params)?;
        for z in &obs[2..] {
            f.predict();
            f.update(z[c]);
        }
        for row in out.iter_mut() {
            f.predict();
            row[c] = f.x[0];
        }
    }
    Ok(out)
}

pub fn kalman_predict_boxes(
    past: &[BoundingBox],
    n: usize,
    params: KalmanParams,
) -> Result<Vec<BoundingBox>> {
    let obs: Vec<_> = past.iter().map(|b| b.to_array()).collect();
    Ok(kalman_predict(&obs, n, params)?.into_iter().map(BoundingBox::from_array).collect())
}

pub fn kalman_predict_odometry(
    past: &[OdometryState],
    n: usize,
    params: KalmanParams,
) -> Result<Vec<OdometryState>> {
    let obs: Vec<_> = past.iter().map(|o| [o.speed, o.steering]).collect();
    Ok(kalman_predict(&obs, n, params)?
        .into_iter()
        .map(|[s, a]| OdometryState::new(s, a))
        .collect())
}

/// Repeats the last observed odometry `n` times.
pub fn constant_odometry(past: &[OdometryState], n: usize) -> Result<Vec<OdometryState>> {
    let last = past
        .last()
        .ok_or_else(|| Error::Contract("constant predictor needs one observation".into()))?;
    Ok(alloc::vec![*last; n])
}

/// `lo, lo·10^(1/per_decade), …, hi`.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && per_decade > 0) {
        return Err(Error::Config(format!("bad log grid [{lo}, {hi}] / {per_decade}")));
    }
    let decades = libm::log10(hi / lo);
    let steps = libm::round(decades * per_decade as f64) as usize;
    Ok((0..=steps)
        .map(|i| lo * libm::pow(10.0, i as f64 / per_decade as f64))
        .collect())
}

/// Picks `(q, r)` from `grid × grid` minimising `score` (lower is better).
/// Ties keep the first candidate in `(q, r)` order.
pub fn grid_search(grid: &[f64], mut score: impl FnMut(KalmanParams) -> Result<f64>) -> Result<(KalmanParams, f64)> {
    let mut best: Option<(KalmanParams, f64)> = None;
    for &q in grid {
        for &r in grid {
            let p = KalmanParams { q, r };
            let s = score(p)?;
            if s.is_finite() && best.map_or(true, |(_, b)| s < b) {
                best = Some((p, s));
            }
        }
    }
    best.ok_or_else(|| Error::Numerical("no finite score on the Kalman grid".into()))
}

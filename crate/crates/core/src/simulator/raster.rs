//! Top-down occupancy raster of the area ahead of the vehicle.
//!
//! Row 0 is the far edge, column 0 the left edge. Road cells are 255
//! (1.0), off-road 0, pedestrians 128 (≈ 0.5).

use alloc::format;

use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::{Error, Result};
use crate::odometry::SceneRaster;

pub const ROAD: u8 = 255;
pub const OBSTACLE: u8 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterSpec {
    pub resolution: usize,
    /// Metres covered ahead of the vehicle.
    pub forward: f64,
    /// Metres covered to each side.
    pub half_width: f64,
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec {
            resolution: 32,
            forward: 32.0,
            half_width: 16.0,
        }
    }
}

impl RasterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !(self.forward > 0.0 && self.half_width > 0.0) {
            return Err(Error::Config(format!("invalid raster spec {self:?}")));
        }
        Ok(())
    }

    fn cell(&self) -> (f64, f64) {
        let r = self.resolution as f64;
        (self.forward / r, 2.0 * self.half_width / r)
    }

    /// Local (forward, left) of the centre of cell `(row, col)`.
    pub fn cell_centre(&self, row: usize, col: usize) -> (f64, f64) {
        let (cf, cw) = self.cell();
        (
            self.forward - (row as f64 + 0.5) * cf,
            self.half_width - (col as f64 + 0.5) * cw,
        )
    }

    /// Cell containing local point `(forward, left)`.
    pub fn cell_of(&self, forward: f64, left: f64) -> Option<(usize, usize)> {
        let (cf, cw) = self.cell();
        let r = libm::floor((self.forward - forward) / cf);
        let c = libm::floor((self.half_width - left) / cw);
        let n = self.resolution as f64;
        (r >= 0.0 && r < n && c >= 0.0 && c < n).then(|| (r as usize, c as usize))
    }
}

pub fn render_road_raster(scene: &Scene, frame: usize, spec: &RasterSpec) -> Result<SceneRaster> {
    spec.validate()?;
    if frame >= scene.frames() {
        return Err(Error::Contract(format!("frame {frame} outside 0..{}", scene.frames())));
    }
    let pose = &scene.poses[frame];
    let n = spec.resolution;
    let (cf, cw) = spec.cell();
    let half = 0.5 * scene.road.width;
    let half_sq = half * half;
    let mut raster = SceneRaster::filled(n, n, 0);

    let local: alloc::vec::Vec<[f64; 2]> = scene.road.centerline.iter().map(|p| pose.to_local(*p)).collect();
    for w in local.windows(2) {
        let (a, b) = (w[0], w[1]);
        let fmin = a[0].min(b[0]) - half;
        let fmax = a[0].max(b[0]) + half;
        let lmin = a[1].min(b[1]) - half;
        let lmax = a[1].max(b[1]) + half;
        if fmax < 0.0 || fmin > spec.forward || lmax < -spec.half_width || lmin > spec.half_width {
            continue;
        }
        let row_of = |f: f64| ((spec.forward - f) / cf).clamp(0.0, n as f64 - 1.0);
        let col_of = |l: f64| ((spec.half_width - l) / cw).clamp(0.0, n as f64 - 1.0);
        let (r0, r1) = (libm::floor(row_of(fmax)) as usize, libm::ceil(row_of(fmin)) as usize);
        let (c0, c1) = (libm::floor(col_of(lmax)) as usize, libm::ceil(col_of(lmin)) as usize);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        for row in r0..=r1.min(n - 1) {
            for col in c0..=c1.min(n - 1) {
                let idx = row * n + col;
                if raster.cells[idx] == ROAD {
                    continue;
                }
                let (f, l) = spec.cell_centre(row, col);
                let ap = [f - a[0], l - a[1]];
                let t = if len2 > 0.0 {
                    ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
                if d[0] * d[0] + d[1] * d[1] <= half_sq {
                    raster.cells[idx] = ROAD;
                }
            }
        }
    }

    for i in 0..scene.pedestrians.len() {
        let [f, l] = pose.to_local(scene.pedestrian_position(i, frame));
        if let Some((r, c)) = spec.cell_of(f, l) {
            raster.cells[r * n + c] = OBSTACLE;
        }
    }
    Ok(raster)
}

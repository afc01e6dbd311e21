//! Pinhole projection of pedestrians and detector-style box noise.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Pose, Scene};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};

/// Points closer than this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 0.5;

/// Forward-looking camera at the vehicle origin. Camera axes: `X` right,
/// `Y` down, `Z` forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Height of the optical centre above the ground.
    pub mount_height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        // A 1.7 m pedestrian at 10 m is 40 px tall.
        Camera {
            focal: 40.0 * 10.0 / 1.7,
            cx: 256.0,
            cy: 128.0,
            width: 512.0,
            height: 256.0,
            mount_height: 1.5,
        }
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0 && self.width > 0.0 && self.height > 0.0 && self.mount_height > 0.0) {
            return Err(Error::Config("camera focal length, image size and mount height must be positive".into()));
        }
        Ok(())
    }

    /// Camera-frame point to pixels.
    pub fn pixel(&self, x: f64, y: f64, z: f64) -> (f64, f64) {
        (self.focal * x / z + self.cx, self.focal * y / z + self.cy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Clipped to the image.
    pub clean: BoundingBox,
    /// False when clipping changed the box.
    pub fully_visible: bool,
    pub depth: f64,
}

/// Upright `width × height` rectangle facing the camera, standing on the
/// ground at world point `ground`. `None` when behind the camera or
/// entirely outside the image.
pub fn project_pedestrian(
    camera: &Camera,
    pose: &Pose,
    ground: [f64; 2],
    height: f64,
    width: f64,
) -> Option<Projection> {
    let [forward, left] = pose.to_local(ground);
    if forward <= MIN_DEPTH {
        return None;
    }
    let xc = -left;
    let (u0, v0) = camera.pixel(xc - 0.5 * width, camera.mount_height - height, forward);
    let (u1, v1) = camera.pixel(xc + 0.5 * width, camera.mount_height, forward);
    let clipped = BoundingBox::new(
        u0.clamp(0.0, camera.width),
        v0.clamp(0.0, camera.height),
        u1.clamp(0.0, camera.width),
        v1.clamp(0.0, camera.height),
    );
    if !(clipped.x_br > clipped.x_tl && clipped.y_br > clipped.y_tl) {
        return None;
    }
    let fully_visible = clipped == BoundingBox::new(u0, v0, u1, v1);
    Some(Projection {
        clean: clipped,
        fully_visible,
        depth: forward,
    })
}

/// Boxes of every pedestrian at `frame`.
pub fn project_to_boxes(scene: &Scene, frame: usize) -> Result<Vec<Option<Projection>>> {
    if frame >= scene.frames() {
        return Err(Error::Contract(format!("frame {frame} outside 0..{}", scene.frames())));
    }
    let pose = &scene.poses[frame];
    Ok((0..scene.pedestrians.len())
        .map(|i| {
            let p = &scene.pedestrians[i];
            project_pedestrian(&scene.camera, pose, scene.pedestrian_position(i, frame), p.height, p.width)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-corner jitter std, pixels.
    pub sigma: f64,
    /// Fraction of frames replaced by a gross error.
    pub outlier_rate: f64,
    /// Outlier std as a multiple of `sigma`.
    pub outlier_scale: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma: 2.0,
            outlier_rate: 0.01,
            outlier_scale: 10.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && (0.0..=1.0).contains(&self.outlier_rate) && self.outlier_scale >= 0.0) {
            return Err(Error::Config(format!("invalid detection noise {self:?}")));
        }
        Ok(())
    }
}

/// I.i.d. Gaussian jitter per corner coordinate. Returns the noisy boxes
/// and which frames received the outlier-scale jitter.
pub fn add_detection_noise(
    boxes: &[BoundingBox],
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<(Vec<BoundingBox>, Vec<bool>)> {
    noise.validate()?;
    if noise.sigma == 0.0 {
        return Ok((boxes.to_vec(), alloc::vec![false; boxes.len()]));
    }
    let mut flags = Vec::with_capacity(boxes.len());
    let out = boxes
        .iter()
        .map(|b| {
            let outlier = rng.random::<f64>() < noise.outlier_rate;
            flags.push(outlier);
            let s = if outlier { noise.sigma * noise.outlier_scale } else { noise.sigma };
            BoundingBox::from_array(b.to_array().map(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + s * z
            }))
        })
        .collect();
    Ok((out, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn optical_axis_is_centred() {
        let cam = Camera::default();
        let p = project_pedestrian(&cam, &Pose::default(), [12.0, 0.0], 1.7, 0.5).unwrap();
        assert!((0.5 * (p.clean.x_tl + p.clean.x_br) - cam.cx).abs() < 1e-9);
        assert!(p.fully_visible);
        assert!((p.clean.height() - 40.0 * 10.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn doubling_depth_halves_height() {
        let cam = Camera::default();
        let pose = Pose { x: 3.0, y: -2.0, heading: 0.3 };
        let near = pose.to_world(8.0, 1.2);
        let far = pose.to_world(16.0, 2.4);
        let a = project_pedestrian(&cam, &pose, near, 1.7, 0.5).unwrap();
        let b = project_pedestrian(&cam, &pose, far, 1.7, 0.5).unwrap();
        assert!(a.fully_visible && b.fully_visible);
        assert!((a.clean.height() - 2.0 * b.clean.height()).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_not_detected() {
        let cam = Camera::default();
        assert!(project_pedestrian(&cam, &Pose::default(), [0.3, 0.0], 1.7, 0.5).is_none());
        assert!(project_pedestrian(&cam, &Pose::default(), [-5.0, 0.0], 1.7, 0.5).is_none());
        // Far to the side: entirely outside the image.
        assert!(project_pedestrian(&cam, &Pose::default(), [2.0, 30.0], 1.7, 0.5).is_none());
    }

    #[test]
    fn partially_outside_is_clipped() {
        let cam = Camera::default();
        let p = project_pedestrian(&cam, &Pose::default(), [3.0, -3.2], 1.7, 0.5).unwrap();
        assert!(!p.fully_visible);
        assert_eq!(p.clean.x_br, cam.width);
    }

    // K [R | t] applied to homogeneous world corners.
    fn homogeneous_oracle(cam: &Camera, pose: &Pose, ground: [f64; 2], h: f64, w: f64) -> [f64; 4] {
        let k = [[cam.focal, 0.0, cam.cx], [0.0, cam.focal, cam.cy], [0.0, 0.0, 1.0]];
        let (s, c) = (pose.heading.sin(), pose.heading.cos());
        // World (x, y, z-up) → camera (right, down, forward).
        let r = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
        let pos = [pose.x, pose.y, cam.mount_height];
        let mut t = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i] -= r[i][j] * pos[j];
            }
        }
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    p[i][j] += k[i][l] * r[l][j];
                }
            }
            for l in 0..3 {
                p[i][3] += k[i][l] * t[l];
            }
        }
        let project = |x: [f64; 4]| {
            let y: Vec<f64> = (0..3).map(|i| (0..4).map(|j| p[i][j] * x[j]).sum()).collect();
            (y[0] / y[2], y[1] / y[2])
        };
        // The rectangle is perpendicular to the optical axis: offset the
        // ground point along the camera's right vector.
        let right = [s, -c];
        let corner = |side: f64, z: f64| [ground[0] + side * 0.5 * w * right[0], ground[1] + side * 0.5 * w * right[1], z, 1.0];
        let (u0, v0) = project(corner(-1.0, h));
        let (u1, v1) = project(corner(1.0, 0.0));
        [u0, v0, u1, v1]
    }

    #[test]
    fn matches_homogeneous_projection() {
        let cam = Camera::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 200 {
            let pose = Pose {
                x: rng.random_range(-20.0..20.0),
                y: rng.random_range(-20.0..20.0),
                heading: rng.random_range(-3.0..3.0),
            };
            let ground = pose.to_world(rng.random_range(2.0..40.0), rng.random_range(-5.0..5.0));
            let Some(p) = project_pedestrian(&cam, &pose, ground, 1.7, 0.5) else { continue };
            if !p.fully_visible {
                continue;
            }
            let o = homogeneous_oracle(&cam, &pose, ground, 1.7, 0.5);
            for (a, b) in p.clean.to_array().iter().zip(o) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            checked += 1;
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let boxes = [BoundingBox::new(1.5, 2.25, 30.0, 80.125), BoundingBox::new(-0.0, 0.0, 1.0, 1.0)];
        let (out, flags) = add_detection_noise(&boxes, &NoiseModel { sigma: 0.0, ..NoiseModel::default() }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in out.iter().zip(&boxes) {
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(flags.iter().all(|f| !f));
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let boxes = alloc::vec![BoundingBox::new(0.0, 0.0, 0.0, 0.0); 25_000];
        let noise = NoiseModel::default();
        let (out, flags) = add_detection_noise(&boxes, &noise, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let draws: Vec<f64> = out
            .iter()
            .zip(&flags)
            .filter(|(_, f)| !**f)
            .flat_map(|(b, _)| b.to_array())
            .collect();
        assert!(draws.len() >= 90_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let sd = (draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / noise.sigma - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn outlier_fraction_is_binomial() {
        let n = 100_000;
        let boxes = alloc::vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0); n];
        let (_, flags) = add_detection_noise(&boxes, &NoiseModel::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let k = flags.iter().filter(|f| **f).count() as f64;
        let (p, nf) = (0.01, n as f64);
        let band = 3.0 * (nf * p * (1.0 - p)).sqrt();
        assert!((k - nf * p).abs() <= band, "{k}");
    }
}

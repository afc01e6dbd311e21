//! Synthetic on-board scenes: a road, a vehicle driving it, pedestrians
//! around it and a pinhole camera on the vehicle.
//!
//! World frame is planar metres, `x` east, `y` north, heading counter-
//! clockwise. Positive curvature and positive steering turn left.

mod camera;
mod dataset;
mod raster;

pub use camera::{add_detection_noise, project_pedestrian, project_to_boxes, Camera, NoiseModel, Projection};
pub use dataset::{
    extract_tracks, generate_dataset, scene_splits, scene_tracks, split_counts, Dataset, Split, Track,
    TrackFrame, PAPER_SPLIT,
};
pub use raster::{render_road_raster, RasterSpec};

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odometry::OdometryState;

pub const DEFAULT_FRAMES: usize = 30;
/// 1.8 s over 30 frames.
pub const DEFAULT_DT: f64 = 0.06;
pub const PEDESTRIAN_HEIGHT: f64 = 1.7;
pub const PEDESTRIAN_WIDTH: f64 = 0.5;
/// Road polyline sampling step in metres.
const ROAD_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    Straight,
    Arc,
    TurnAtIntersection,
    DecelerateStop,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Straight,
        Archetype::Arc,
        Archetype::TurnAtIntersection,
        Archetype::DecelerateStop,
    ];

    /// Archetypes whose ego-motion is more than straight cruising.
    pub fn non_trivial(self) -> bool {
        !matches!(self, Archetype::Straight)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub frames: usize,
    pub dt: f64,
    pub camera: Camera,
    /// Initial vehicle speed range, m/s.
    pub speed_range: (f64, f64),
    /// Largest |curvature| of arcs, 1/m.
    pub max_curvature: f64,
    /// Inclusive pedestrian count range.
    pub pedestrians: (usize, usize),
    pub noise: NoiseModel,
    pub raster: RasterSpec,
    pub road_width: f64,
    pub wheelbase: f64,
    /// Forces every scene to one archetype.
    pub archetype: Option<Archetype>,
    /// Tracks shorter than this many frames are dropped.
    pub min_track_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frames: DEFAULT_FRAMES,
            dt: DEFAULT_DT,
            camera: Camera::default(),
            speed_range: (3.0, 10.0),
            max_curvature: 0.06,
            pedestrians: (1, 6),
            noise: NoiseModel::default(),
            raster: RasterSpec::default(),
            road_width: 7.0,
            wheelbase: 2.7,
            archetype: None,
            min_track_len: 9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.frames < 2 {
            return bad("need at least 2 frames");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid speed range [{lo}, {hi}]")));
        }
        if !(self.max_curvature >= 0.0 && self.max_curvature < 1.0) {
            return Err(Error::Config(format!("invalid curvature bound {}", self.max_curvature)));
        }
        let (a, b) = self.pedestrians;
        if !(1 <= a && a <= b && b <= 6) {
            return Err(Error::Config(format!("pedestrian count range [{a}, {b}] outside 1–6")));
        }
        if !(self.road_width > 0.0 && self.wheelbase > 0.0) {
            return bad("road width and wheelbase must be positive");
        }
        if self.min_track_len < 2 {
            return bad("min_track_len must be at least 2");
        }
        self.camera.validate()?;
        self.noise.validate()?;
        self.raster.validate()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.frames as f64
    }
}

/// Straight and constant-curvature pieces laid end to end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub length: f64,
    pub curvature: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub segments: Vec<RoadSegment>,
    /// Centerline samples every `ROAD_STEP` metres from the origin.
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
}

impl Road {
    /// Lays the segments out from the origin heading east.
    pub fn new(segments: Vec<RoadSegment>, width: f64) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|s| !(s.length > 0.0) || !s.curvature.is_finite()) {
            return Err(Error::Config("road needs positive-length segments".into()));
        }
        let total: f64 = segments.iter().map(|s| s.length).sum();
        let steps = libm::ceil(total / ROAD_STEP) as usize;
        let mut centerline = Vec::with_capacity(steps + 1);
        let mut pose = Pose::default();
        centerline.push([0.0, 0.0]);
        let mut travelled = 0.0;
        let road = Road {
            segments,
            centerline: Vec::new(),
            width,
        };
        for _ in 0..steps {
            let ds = ROAD_STEP.min(total - travelled);
            pose = pose.advance(ds, road.curvature_at(travelled + 0.5 * ds));
            travelled += ds;
            centerline.push([pose.x, pose.y]);
        }
        Ok(Road { centerline, ..road })
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Curvature at arc length `s`; the last segment extends forever.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for seg in &self.segments {
            acc += seg.length;
            if s < acc {
                return seg.curvature;
            }
        }
        self.segments.last().map_or(0.0, |s| s.curvature)
    }

    /// Point and unit tangent at arc length `s` (clamped to the sampled
    /// range, linear between samples).
    pub fn point_at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let last = self.centerline.len() - 1;
        let f = (s / ROAD_STEP).clamp(0.0, last as f64);
        let i = (libm::floor(f) as usize).min(last.saturating_sub(1));
        let a = self.centerline[i];
        let b = self.centerline[(i + 1).min(last)];
        let t = f - i as f64;
        let d = [b[0] - a[0], b[1] - a[1]];
        let n = libm::hypot(d[0], d[1]).max(1e-12);
        ([a[0] + t * d[0], a[1] + t * d[1]], [d[0] / n, d[1] / n])
    }

    /// Distance from `p` to the centerline polyline.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.centerline.windows(2) {
            best = best.min(point_segment_distance(p, w[0], w[1]));
        }
        best
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    libm::hypot(ap[0] - t * ab[0], ap[1] - t * ab[1])
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Moves `ds` metres along an arc of curvature `k`: the chord is taken
    /// at the midpoint heading with its exact length, so piecewise-constant
    /// controls integrate without error.
    pub fn advance(&self, ds: f64, k: f64) -> Pose {
        let dh = ds * k;
        let chord = if libm::fabs(dh) < 1e-9 {
            ds * (1.0 - dh * dh / 24.0)
        } else {
            2.0 * libm::sin(0.5 * dh) / k
        };
        let mid = self.heading + 0.5 * dh;
        Pose {
            x: self.x + chord * libm::cos(mid),
            y: self.y + chord * libm::sin(mid),
            heading: self.heading + dh,
        }
    }

    /// World point to (forward, left) in this pose's frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = libm::sincos(self.heading);
        let d = [p[0] - self.x, p[1] - self.y];
        [c * d[0] + s * d[1], -s * d[0] + c * d[1]]
    }

    pub fn to_world(&self, forward: f64, left: f64) -> [f64; 2] {
        let (s, c) = libm::sincos(self.heading);
        [self.x + c * forward - s * left, self.y + s * forward + c * left]
    }
}

/// Steering angle (degrees) of a bicycle model following curvature `k`.
pub fn steering_for_curvature(k: f64, wheelbase: f64) -> f64 {
    libm::atan(wheelbase * k) * 180.0 / PI
}

pub fn curvature_for_steering(deg: f64, wheelbase: f64) -> f64 {
    libm::tan(deg * PI / 180.0) / wheelbase
}

/// Poses at frames `0..=odo.len()`, starting from `start`; `odo[k]` acts
/// over frame interval `k`.
pub fn integrate_odometry(start: Pose, odo: &[OdometryState], dt: f64, wheelbase: f64) -> Vec<Pose> {
    let mut out = Vec::with_capacity(odo.len() + 1);
    out.push(start);
    let mut p = start;
    for o in odo {
        p = p.advance(o.speed * dt, curvature_for_steering(o.steering, wheelbase));
        out.push(p);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    Stand,
    Walk,
    Cross,
    StopStart,
    Turn,
}

impl Motion {
    pub fn constant_velocity(self) -> bool {
        matches!(self, Motion::Stand | Motion::Walk | Motion::Cross)
    }
}

/// Velocity knots `(t, [vx, vy])`, linearly interpolated and held constant
/// outside the knot range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub start: [f64; 2],
    pub knots: Vec<(f64, [f64; 2])>,
    pub motion: Motion,
    pub height: f64,
    pub width: f64,
}

impl Pedestrian {
    pub fn standing(at: [f64; 2]) -> Self {
        Pedestrian {
            start: at,
            knots: alloc::vec![(0.0, [0.0, 0.0])],
            motion: Motion::Stand,
            height: PEDESTRIAN_HEIGHT,
            width: PEDESTRIAN_WIDTH,
        }
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return [v0[0] + a * (v1[0] - v0[0]), v0[1] + a * (v1[1] - v0[1])];
            }
        }
        k[k.len() - 1].1
    }

    /// Exact integral of the piecewise-linear velocity from 0 to `t`.
    pub fn position(&self, t: f64) -> [f64; 2] {
        let mut breaks: Vec<f64> = self.knots.iter().map(|k| k.0).filter(|&b| b > 0.0 && b < t).collect();
        breaks.insert(0, 0.0);
        breaks.push(t);
        let mut p = self.start;
        for w in breaks.windows(2) {
            let (v0, v1) = (self.velocity(w[0]), self.velocity(w[1]));
            let h = w[1] - w[0];
            p[0] += 0.5 * h * (v0[0] + v1[0]);
            p[1] += 0.5 * h * (v0[1] + v1[1]);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub archetype: Archetype,
    pub road: Road,
    pub odometry: Vec<OdometryState>,
    /// `frames` poses; pose `k` is the vehicle at frame `k`.
    pub poses: Vec<Pose>,
    pub pedestrians: Vec<Pedestrian>,
    pub camera: Camera,
    pub dt: f64,
    pub wheelbase: f64,
}

impl Scene {
    pub fn frames(&self) -> usize {
        self.poses.len()
    }

    /// Builds the vehicle path by following the road's curvature with the
    /// given per-frame speeds.
    pub fn drive(
        archetype: Archetype,
        road: Road,
        speeds: &[f64],
        pedestrians: Vec<Pedestrian>,
        config: &SimConfig,
    ) -> Result<Scene> {
        if speeds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("vehicle speed must be non-negative".into()));
        }
        let mut travelled = 0.0;
        let odometry: Vec<_> = speeds
            .iter()
            .map(|&s| {
                let ds = s * config.dt;
                let k = road.curvature_at(travelled + 0.5 * ds);
                travelled += ds;
                OdometryState::new(s, steering_for_curvature(k, config.wheelbase))
            })
            .collect();
        let mut poses = integrate_odometry(Pose::default(), &odometry, config.dt, config.wheelbase);
        poses.pop();
        Ok(Scene {
            archetype,
            road,
            odometry,
            poses,
            pedestrians,
            camera: config.camera.clone(),
            dt: config.dt,
            wheelbase: config.wheelbase,
        })
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 * self.dt
    }

    pub fn pedestrian_position(&self, ped: usize, frame: usize) -> [f64; 2] {
        self.pedestrians[ped].position(self.time(frame))
    }
}

fn signed(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let v = if hi > lo { rng.random_range(lo..hi) } else { lo };
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Constant-curvature pieces approximating each spiral transition.
const TRANSITION_STEPS: usize = 8;

/// `speed` is the initial vehicle speed: turns start within the clip.
fn build_road(archetype: Archetype, config: &SimConfig, speed: f64, rng: &mut impl Rng) -> Result<Road> {
    let reach = config.speed_range.1 * config.duration() + config.raster.forward + 40.0;
    let kmax = config.max_curvature;
    let segs = match archetype {
        Archetype::Straight => alloc::vec![RoadSegment { length: reach, curvature: 0.0 }],
        Archetype::Arc => alloc::vec![RoadSegment {
            length: reach,
            curvature: signed(rng, 0.25 * kmax, kmax),
        }],
        Archetype::TurnAtIntersection => {
            let lead = 1.0 + speed * uniform(rng, 0.0, 0.6 * config.duration());
            let radius = uniform(rng, 10.0, 20.0);
            let k = if rng.random_bool(0.5) { 1.0 } else { -1.0 } / radius;
            // Spiral transitions in and out of the arc, each turning by k·ramp/2.
            let ramp = uniform(rng, 3.0, 8.0);
            let step = ramp / TRANSITION_STEPS as f64;
            let curve = |i: usize| k * (i as f64 + 0.5) / TRANSITION_STEPS as f64;
            let mut segs = alloc::vec![RoadSegment { length: lead, curvature: 0.0 }];
            segs.extend((0..TRANSITION_STEPS).map(|i| RoadSegment { length: step, curvature: curve(i) }));
            segs.push(RoadSegment { length: 0.5 * PI * radius - ramp, curvature: k });
            segs.extend((0..TRANSITION_STEPS).rev().map(|i| RoadSegment { length: step, curvature: curve(i) }));
            segs.push(RoadSegment { length: reach, curvature: 0.0 });
            segs
        }
        Archetype::DecelerateStop => {
            let k = if rng.random_bool(0.5) { 0.0 } else { signed(rng, 0.0, 0.3 * kmax) };
            alloc::vec![RoadSegment { length: reach, curvature: k }]
        }
    };
    Road::new(segs, config.road_width)
}

fn speed_profile(archetype: Archetype, config: &SimConfig, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = config.speed_range;
    let s0 = uniform(rng, lo, hi);
    let t_end = config.duration();
    let (accel, onset) = match archetype {
        Archetype::DecelerateStop => (-uniform(rng, 2.0, 5.0), uniform(rng, 0.0, 0.5 * t_end)),
        _ => (uniform(rng, -0.6, 0.6), 0.0),
    };
    (0..config.frames)
        .map(|k| {
            let t = (k as f64 + 0.5) * config.dt;
            (s0 + accel * (t - onset).max(0.0)).clamp(0.0, hi.max(s0) + 2.0)
        })
        .collect()
}

fn place_pedestrian(road: &Road, config: &SimConfig, rng: &mut impl Rng) -> Pedestrian {
    let along = uniform(rng, 12.0, 50.0).min(road.length());
    let (c, t) = road.point_at(along);
    let normal = [-t[1], t[0]];
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let offset = side * (0.5 * config.road_width + uniform(rng, 0.5, 3.5));
    let start = [c[0] + offset * normal[0], c[1] + offset * normal[1]];
    let speed = uniform(rng, 0.8, 1.8);
    let along_dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let walk = [along_dir * speed * t[0], along_dir * speed * t[1]];
    let cross = [-side * speed * normal[0], -side * speed * normal[1]];
    let t_end = config.duration();
    let r = rng.random::<f64>();
    let (motion, knots) = if r < 0.15 {
        (Motion::Stand, alloc::vec![(0.0, [0.0, 0.0])])
    } else if r < 0.40 {
        (Motion::Walk, alloc::vec![(0.0, walk)])
    } else if r < 0.60 {
        (Motion::Cross, alloc::vec![(0.0, cross)])
    } else if r < 0.80 {
        let base = if rng.random_bool(0.5) { walk } else { cross };
        let stop = uniform(rng, 0.1, 0.6) * t_end;
        let go = stop + uniform(rng, 0.2, 0.6);
        let ramp = 0.25;
        (
            Motion::StopStart,
            alloc::vec![(stop, base), (stop + ramp, [0.0, 0.0]), (go, [0.0, 0.0]), (go + ramp, base)],
        )
    } else {
        let base = if rng.random_bool(0.5) { walk } else { cross };
        let turn = uniform(rng, 0.15, 0.7) * t_end;
        let a = signed(rng, PI / 3.0, 2.0 * PI / 3.0);
        let (s, c) = libm::sincos(a);
        let new = [c * base[0] - s * base[1], s * base[0] + c * base[1]];
        (Motion::Turn, alloc::vec![(turn, base), (turn + 0.3, new)])
    };
    Pedestrian {
        start,
        knots,
        motion,
        height: PEDESTRIAN_HEIGHT,
        width: PEDESTRIAN_WIDTH,
    }
}

/// One random scene; deterministic given the RNG state.
pub fn generate_scene(config: &SimConfig, rng: &mut impl Rng) -> Result<Scene> {
    config.validate()?;
    let archetype = match config.archetype {
        Some(a) => a,
        None => Archetype::ALL[rng.random_range(0..Archetype::ALL.len())],
    };
    let speeds = speed_profile(archetype, config, rng);
    let road = build_road(archetype, config, speeds[0], rng)?;
    let (a, b) = config.pedestrians;
    let count = rng.random_range(a..=b);
    let peds = (0..count).map(|_| place_pedestrian(&road, config, rng)).collect();
    Scene::drive(archetype, road, &speeds, peds, config)
}

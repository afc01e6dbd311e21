//! Tracks extracted from scenes and the train/val/test scene split.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_detection_noise, generate_scene, project_to_boxes, render_road_raster, Archetype, Scene, SimConfig};
use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::odometry::{OdometryState, SceneRaster};

/// Scene counts of the original train/val/test sequences.
pub const PAPER_SPLIT: [usize; 3] = [2975, 500, 1525];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// `PAPER_SPLIT / scale`, rounded down.
pub fn split_counts(scale: usize) -> Result<[usize; 3]> {
    if scale == 0 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    Ok(PAPER_SPLIT.map(|c| c / scale))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    /// Frame index within the scene.
    pub t: usize,
    pub box_clean: BoundingBox,
    pub box_noisy: BoundingBox,
    pub speed: f64,
    pub steering: f64,
}

impl TrackFrame {
    pub fn odometry(&self) -> OdometryState {
        OdometryState::new(self.speed, self.steering)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub scene_id: u64,
    pub ped_id: usize,
    pub split: Split,
    pub archetype: Archetype,
    pub frames: Vec<TrackFrame>,
    /// Raster at every frame of the track.
    pub rasters: Vec<SceneRaster>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Contract(format!("track {}/{} is empty", self.scene_id, self.ped_id)));
        }
        if !self.rasters.is_empty() && self.rasters.len() != self.frames.len() {
            return Err(Error::Contract(format!(
                "track {}/{}: {} rasters for {} frames",
                self.scene_id,
                self.ped_id,
                self.rasters.len(),
                self.frames.len()
            )));
        }
        if self.frames.windows(2).any(|w| w[1].t != w[0].t + 1) {
            return Err(Error::Contract(format!("track {}/{} is not contiguous", self.scene_id, self.ped_id)));
        }
        Ok(())
    }
}

/// Longest run of consecutive `true` (first one on ties).
fn longest_run(visible: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, &v) in visible.iter().chain(core::iter::once(&false)).enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.map_or(true, |(a, b)| i - s > b - a) {
                    best = Some((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Tracks of every pedestrian whose longest fully visible run reaches
/// `min_track_len`; returns them with the number dropped.
pub fn extract_tracks(
    scene: &Scene,
    scene_id: u64,
    split: Split,
    config: &SimConfig,
    rng: &mut impl rand::Rng,
) -> Result<(Vec<Track>, usize)> {
    let per_frame: Vec<_> = (0..scene.frames()).map(|f| project_to_boxes(scene, f)).collect::<Result<_>>()?;
    let mut rasters: Vec<Option<SceneRaster>> = alloc::vec![None; scene.frames()];
    let mut tracks = Vec::new();
    let mut dropped = 0;
    for ped in 0..scene.pedestrians.len() {
        let visible: Vec<bool> = per_frame
            .iter()
            .map(|f| f[ped].is_some_and(|p| p.fully_visible))
            .collect();
        let Some((a, b)) = longest_run(&visible).filter(|(a, b)| b - a >= config.min_track_len) else {
            dropped += 1;
            continue;
        };
        let clean: Vec<BoundingBox> = (a..b).map(|f| per_frame[f][ped].unwrap().clean).collect();
        let (noisy, _) = add_detection_noise(&clean, &config.noise, rng)?;
        let mut track_rasters = Vec::with_capacity(b - a);
        for f in a..b {
            if rasters[f].is_none() {
                rasters[f] = Some(render_road_raster(scene, f, &config.raster)?);
            }
            track_rasters.push(rasters[f].clone().unwrap());
        }
        let frames = (a..b)
            .zip(clean.iter().zip(&noisy))
            .map(|(f, (c, n))| TrackFrame {
                t: f,
                box_clean: *c,
                box_noisy: *n,
                speed: scene.odometry[f].speed,
                steering: scene.odometry[f].steering,
            })
            .collect();
        tracks.push(Track {
            scene_id,
            ped_id: ped,
            split,
            archetype: scene.archetype,
            frames,
            rasters: track_rasters,
        });
    }
    Ok((tracks, dropped))
}

/// Scene `scene_id` of the dataset seeded with `seed`: its RNG is stream
/// `scene_id` of the master seed, so scenes can be built in any order.
pub fn scene_tracks(config: &SimConfig, seed: u64, scene_id: u64, split: Split) -> Result<(Vec<Track>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_id);
    let scene = generate_scene(config, &mut rng)?;
    extract_tracks(&scene, scene_id, split, config, &mut rng)
}

/// Split of each scene id for the given counts: train first, then val, then test.
pub fn scene_splits(counts: [usize; 3]) -> Vec<Split> {
    Split::ALL
        .iter()
        .zip(counts)
        .flat_map(|(s, c)| core::iter::repeat_n(*s, c))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tracks: Vec<Track>,
    pub scenes: [usize; 3],
    pub dropped: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(move |t| t.split == split)
    }
}

pub fn generate_dataset(config: &SimConfig, seed: u64, scale: usize) -> Result<Dataset> {
    config.validate()?;
    let counts = split_counts(scale)?;
    let mut tracks = Vec::new();
    let mut dropped = 0;
    for (id, split) in scene_splits(counts).into_iter().enumerate() {
        let (t, d) = scene_tracks(config, seed, id as u64, split)?;
        tracks.extend(t);
        dropped += d;
    }
    Ok(Dataset {
        tracks,
        scenes: counts,
        dropped,
    })
}

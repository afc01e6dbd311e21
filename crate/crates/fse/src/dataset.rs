//! Dataset directory: `manifest.json` plus one JSON line per track.
//!
//! Rasters are stored as base64 of the per-frame cells stacked in frame
//! order.

use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use fse_core::odometry::SceneRaster;
use fse_core::simulator::{generate_dataset, Archetype, Dataset, SimConfig, Split, Track, TrackFrame};

use crate::error::{FseError, Result};
use crate::fsutil::{config_hash, read, write_atomic};

pub const DATASET_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACKS_FILE: &str = "tracks.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub scale: usize,
    pub config: SimConfig,
    /// Hash of (config, seed, scale).
    pub config_hash: String,
    /// Scenes per split, train/val/test.
    pub scenes: [usize; 3],
    /// Tracks per split.
    pub tracks: [usize; 3],
    pub dropped: usize,
}

#[derive(Serialize)]
struct HashInput<'a> {
    config: &'a SimConfig,
    seed: u64,
    scale: usize,
}

pub fn dataset_hash(config: &SimConfig, seed: u64, scale: usize) -> String {
    config_hash(&HashInput { config, seed, scale })
}

impl DatasetManifest {
    pub fn new(dataset: &Dataset, config: &SimConfig, seed: u64, scale: usize) -> Self {
        DatasetManifest {
            format_version: DATASET_FORMAT,
            seed,
            scale,
            config: config.clone(),
            config_hash: dataset_hash(config, seed, scale),
            scenes: dataset.scenes,
            tracks: Split::ALL.map(|s| dataset.split(s).count()),
            dropped: dataset.dropped,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed {} scale {} hash {}", self.seed, self.scale, &self.config_hash[..16]);
        for (i, split) in Split::ALL.iter().enumerate() {
            let _ = writeln!(s, "{:5}: {:5} scenes {:6} tracks", split.name(), self.scenes[i], self.tracks[i]);
        }
        let _ = write!(s, "dropped pedestrians: {}", self.dropped);
        s
    }
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    scene_id: u64,
    ped_id: usize,
    split: Split,
    archetype: Archetype,
    frames: Vec<TrackFrame>,
    raster_width: usize,
    raster_height: usize,
    /// Base64 of every frame's raster cells, concatenated.
    rasters: String,
}

impl TrackRecord {
    fn from_track(t: &Track) -> Self {
        let (w, h) = t.rasters.first().map_or((0, 0), |r| (r.width, r.height));
        let cells: Vec<u8> = t.rasters.iter().flat_map(|r| r.cells.iter().copied()).collect();
        TrackRecord {
            scene_id: t.scene_id,
            ped_id: t.ped_id,
            split: t.split,
            archetype: t.archetype,
            frames: t.frames.clone(),
            raster_width: w,
            raster_height: h,
            rasters: B64.encode(cells),
        }
    }

    fn into_track(self, path: &Path, line: usize) -> Result<Track> {
        let bad = |r: String| FseError::corrupt(path, format!("line {line}: {r}"));
        let cells = B64.decode(&self.rasters).map_err(|e| bad(format!("raster base64: {e}")))?;
        let per = self.raster_width * self.raster_height;
        let rasters = if cells.is_empty() {
            Vec::new()
        } else {
            if per == 0 || cells.len() != per * self.frames.len() {
                return Err(bad(format!(
                    "{} raster bytes for {} frames of {}x{}",
                    cells.len(),
                    self.frames.len(),
                    self.raster_width,
                    self.raster_height
                )));
            }
            cells
                .chunks(per)
                .map(|c| SceneRaster::new(self.raster_width, self.raster_height, c.to_vec()))
                .collect::<fse_core::Result<_>>()?
        };
        let track = Track {
            scene_id: self.scene_id,
            ped_id: self.ped_id,
            split: self.split,
            archetype: self.archetype,
            frames: self.frames,
            rasters,
        };
        track.validate().map_err(|e| bad(e.to_string()))?;
        Ok(track)
    }
}

pub fn save_dataset(dir: &Path, dataset: &Dataset, manifest: &DatasetManifest) -> Result<()> {
    let mut lines = Vec::new();
    for t in &dataset.tracks {
        serde_json::to_writer(&mut lines, &TrackRecord::from_track(t)).expect("track serializes");
        lines.push(b'\n');
    }
    write_atomic(&dir.join(TRACKS_FILE), &lines)?;
    let mut m = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    m.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &m)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read(&path)?;
    let probe: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| FseError::corrupt(&path, e.to_string()))?;
    let version = probe.get("format_version").and_then(|v| v.as_u64());
    if version != Some(DATASET_FORMAT as u64) {
        return Err(FseError::Version {
            path,
            found: version.unwrap_or(0) as u32,
            expected: DATASET_FORMAT,
        });
    }
    let m: DatasetManifest = serde_json::from_value(probe).map_err(|e| FseError::corrupt(&path, e.to_string()))?;
    let expected = dataset_hash(&m.config, m.seed, m.scale);
    if m.config_hash != expected {
        return Err(FseError::Hash {
            path,
            found: m.config_hash,
            expected,
        });
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(TRACKS_FILE);
    let bytes = read(&path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| FseError::corrupt(&path, e.to_string()))?;
    let mut tracks = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: TrackRecord =
            serde_json::from_str(line).map_err(|e| FseError::corrupt(&path, format!("line {}: {e}", i + 1)))?;
        tracks.push(rec.into_track(&path, i + 1)?);
    }
    let dataset = Dataset {
        tracks,
        scenes: manifest.scenes,
        dropped: manifest.dropped,
    };
    let counts = Split::ALL.map(|s| dataset.split(s).count());
    if counts != manifest.tracks {
        return Err(FseError::corrupt(
            &path,
            format!("manifest lists {:?} tracks per split, file holds {counts:?}", manifest.tracks),
        ));
    }
    Ok((dataset, manifest))
}

/// Generates the dataset for `seed`/`scale` and writes it to `dir`.
pub fn simulate_to(dir: &Path, config: &SimConfig, seed: u64, scale: usize) -> Result<(Dataset, DatasetManifest)> {
    if scale == 0 {
        return Err(FseError::Usage("--scale must be at least 1".into()));
    }
    let dataset = generate_dataset(config, seed, scale)?;
    let manifest = DatasetManifest::new(&dataset, config, seed, scale);
    save_dataset(dir, &dataset, &manifest)?;
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimConfig::default();
        let (d, m) = simulate_to(dir.path(), &cfg, 4, 300).unwrap();
        let (back, m2) = load_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, d);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        simulate_to(dir.path(), &SimConfig::default(), 1, 400).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let original = std::fs::read_to_string(&mpath).unwrap();

        std::fs::write(&mpath, original.replace("\"seed\": 1", "\"seed\": 2")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(FseError::Hash { .. })));

        std::fs::write(&mpath, original.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(FseError::Version { found: 9, .. })));

        std::fs::write(&mpath, &original).unwrap();
        let tpath = dir.path().join(TRACKS_FILE);
        let tracks = std::fs::read(&tpath).unwrap();
        std::fs::write(&tpath, &tracks[..tracks.len() / 2]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(FseError::Corrupt { .. })));
    }

    #[test]
    fn scale_zero_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = simulate_to(dir.path(), &SimConfig::default(), 1, 0).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}

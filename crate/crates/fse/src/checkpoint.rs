//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSE1" | u32 format_version | u64 manifest_len | manifest (UTF-8 JSON)
//! u32 array_count | per array: u32 name_len, name, u32 ndim, u64 dims…, u8 dtype, u64 offset
//! u64 data_len | data (f64 LE; offsets are relative to the data start)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use fse_core::bbox::{BboxConfig, BboxModel};
use fse_core::numerics::{Array, ParamSet};
use fse_core::odometry::{OdoConfig, OdoModel};
use fse_core::trainer::StageReport;

use crate::error::{FseError, Result};
use crate::fsutil::{config_hash, read, write_atomic};

pub const MAGIC: &[u8; 4] = b"FSE1";
pub const CHECKPOINT_FORMAT: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bbox,
    Odometry,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bbox => "bbox",
            ModelKind::Odometry => "odometry",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    /// The model configuration, as JSON.
    pub config: serde_json::Value,
    /// Hash of `config`.
    pub config_hash: String,
    /// Hash of the experiment configuration that produced the model.
    pub experiment_hash: String,
    /// Hash of the dataset it was trained on.
    pub dataset_hash: String,
    pub seed: u64,
    /// Curriculum stages completed.
    pub stage: usize,
    pub stages: Vec<StageReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParamSet,
}

/// Provenance recorded alongside a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub experiment_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
}

impl Checkpoint {
    fn new<C: Serialize>(kind: ModelKind, config: &C, params: ParamSet, p: Provenance) -> Self {
        let config = serde_json::to_value(config).expect("model config serializes");
        Checkpoint {
            manifest: Manifest {
                kind,
                config_hash: config_hash(&config),
                config,
                experiment_hash: p.experiment_hash,
                dataset_hash: p.dataset_hash,
                seed: p.seed,
                stage: p.stages.len(),
                stages: p.stages,
            },
            params,
        }
    }

    pub fn from_bbox(model: &BboxModel, p: Provenance) -> Self {
        Checkpoint::new(ModelKind::Bbox, &model.config, model.params.clone(), p)
    }

    pub fn from_odometry(model: &OdoModel, p: Provenance) -> Self {
        Checkpoint::new(ModelKind::Odometry, &model.config, model.params.clone(), p)
    }

    fn expect_kind(&self, kind: ModelKind, path: &Path) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(FseError::KindMismatch {
                path: path.to_path_buf(),
                found: self.manifest.kind.name().into(),
                expected: kind.name().into(),
            });
        }
        Ok(())
    }

    pub fn bbox_model(&self, path: &Path) -> Result<BboxModel> {
        self.expect_kind(ModelKind::Bbox, path)?;
        let cfg: BboxConfig = serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| FseError::corrupt(path, format!("box model config: {e}")))?;
        Ok(BboxModel::from_params(cfg, self.params.clone())?)
    }

    pub fn odometry_model(&self, path: &Path) -> Result<OdoModel> {
        self.expect_kind(ModelKind::Odometry, path)?;
        let cfg: OdoConfig = serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| FseError::corrupt(path, format!("odometry model config: {e}")))?;
        Ok(OdoModel::from_params(cfg, self.params.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, a) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.shape().len() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(DTYPE_F64);
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * a.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, a) in self.params.iter() {
            for v in a.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(FseError::corrupt(path, "not an FSE1 checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_FORMAT {
            return Err(FseError::Version {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_FORMAT,
            });
        }
        let len = r.len()?;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len)?).map_err(|e| FseError::corrupt(path, format!("manifest: {e}")))?;
        let expected = config_hash(&manifest.config);
        if manifest.config_hash != expected {
            return Err(FseError::Hash {
                path: path.to_path_buf(),
                found: manifest.config_hash,
                expected,
            });
        }
        let count = r.u32()?;
        let mut dir = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| FseError::corrupt(path, "array name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<usize>>>()?;
            if r.take(1)?[0] != DTYPE_F64 {
                return Err(FseError::corrupt(path, format!("array {name}: unknown dtype")));
            }
            let offset = r.len()?;
            dir.push((name, shape, offset));
        }
        let data_len = r.len()?;
        let data = r.take(data_len)?;
        if r.pos != bytes.len() {
            return Err(FseError::corrupt(path, "trailing bytes after the data section"));
        }
        let mut params = ParamSet::new();
        for (name, shape, offset) in dir {
            let n: usize = shape.iter().product();
            let end = n
                .checked_mul(8)
                .and_then(|b| offset.checked_add(b))
                .filter(|&e| e <= data.len())
                .ok_or_else(|| FseError::corrupt(path, format!("array {name} runs past the data section")))?;
            let values = data[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let a = Array::new(shape, values).map_err(|e| FseError::corrupt(path, e.to_string()))?;
            params.insert(name, a);
        }
        Ok(Checkpoint { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&read(path)?, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| FseError::corrupt(self.path, "file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| FseError::corrupt(self.path, "length overflows"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fse_core::bbox::BboxConfig;
    use fse_core::odometry::OdoConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bbox() -> BboxModel {
        BboxModel::new(BboxConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn p() -> &'static Path {
        Path::new("mem.fse")
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = bbox();
        let c = Checkpoint::from_bbox(&m, Provenance { seed: 3, ..Default::default() });
        let back = Checkpoint::from_bytes(&c.to_bytes(), p()).unwrap();
        assert_eq!(back, c);
        assert!(back.params.bitwise_eq(&m.params));
        assert_eq!(back.bbox_model(p()).unwrap().params, m.params);

        let o = OdoModel::new(OdoConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let c = Checkpoint::from_odometry(&o, Provenance::default());
        assert!(Checkpoint::from_bytes(&c.to_bytes(), p()).unwrap().odometry_model(p()).unwrap().params.bitwise_eq(&o.params));
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = Checkpoint::from_bbox(&bbox(), Provenance::default()).to_bytes();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut], p()), Err(FseError::Corrupt { .. })), "{cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra, p()), Err(FseError::Corrupt { .. })));
    }

    #[test]
    fn version_and_hash_errors_are_distinct() {
        let mut bytes = Checkpoint::from_bbox(&bbox(), Provenance::default()).to_bytes();
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v, p()), Err(FseError::Version { found: 2, .. })));

        // Flip one character inside the manifest's config (the embedding width).
        let key = b"\"embedding\":8";
        let at = bytes.windows(key.len()).position(|w| w == key).unwrap() + key.len() - 1;
        bytes[at] = b'9';
        let e = Checkpoint::from_bytes(&bytes, p());
        assert!(matches!(e, Err(FseError::Hash { .. })), "{e:?}");
    }

    #[test]
    fn kind_mismatch_is_config_error() {
        let c = Checkpoint::from_bbox(&bbox(), Provenance::default());
        let e = c.odometry_model(p()).unwrap_err();
        assert!(matches!(e, FseError::KindMismatch { .. }));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fse");
        let c = Checkpoint::from_bbox(&bbox(), Provenance::default());
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(matches!(Checkpoint::load(&dir.path().join("none.fse")), Err(FseError::Io { .. })));
    }
}

//! Experiment configuration: a TOML file, overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fse_core::bbox::{Streams, Variant};
use fse_core::experiment::Profile;

use crate::error::{FseError, Result};
use crate::fsutil::{config_hash, read};

/// Every row of the comparison tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "kalman")]
    Kalman,
    #[serde(rename = "constant")]
    Constant,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "lstm-aleatoric")]
    LstmAleatoric,
    #[serde(rename = "lstm-bayesian")]
    LstmBayesian,
}

pub const VARIANT_NAMES: &str = "kalman, constant, lstm, lstm-aleatoric, lstm-bayesian";

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Kalman => "kalman",
            ModelVariant::Constant => "constant",
            ModelVariant::Lstm => "lstm",
            ModelVariant::LstmAleatoric => "lstm-aleatoric",
            ModelVariant::LstmBayesian => "lstm-bayesian",
        }
    }

    /// The box-stream variant, for the learned models.
    pub fn network(self) -> Option<Variant> {
        match self {
            ModelVariant::Lstm => Some(Variant::Homoscedastic),
            ModelVariant::LstmAleatoric => Some(Variant::AleatoricOnly),
            ModelVariant::LstmBayesian => Some(Variant::Bayesian),
            _ => None,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kalman" => Ok(ModelVariant::Kalman),
            "constant" => Ok(ModelVariant::Constant),
            "lstm" => Ok(ModelVariant::Lstm),
            "lstm-aleatoric" => Ok(ModelVariant::LstmAleatoric),
            "lstm-bayesian" => Ok(ModelVariant::LstmBayesian),
            _ => Err(format!("unknown variant {s:?}; valid variants: {VARIANT_NAMES}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Tiny,
    Desk,
    Full,
}

impl ProfileName {
    pub fn profile(self) -> Profile {
        match self {
            ProfileName::Tiny => Profile::tiny(),
            ProfileName::Desk => Profile::desk(),
            ProfileName::Full => Profile::full(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory; generated in memory from `seed`/`scale` when absent.
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub scale: usize,
    pub variant: ModelVariant,
    pub streams: Streams,
    pub past: usize,
    pub horizon: usize,
    pub mc_samples: usize,
    pub keep_prob: f64,
    pub lambda: f64,
    pub curriculum: Vec<usize>,
    pub profile: ProfileName,
    pub epochs_per_stage: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_windows: Option<usize>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = Profile::desk();
        ExperimentConfig {
            dataset: None,
            seed: 0,
            scale: 10,
            variant: ModelVariant::LstmBayesian,
            streams: Streams::Two,
            past: 8,
            horizon: 15,
            mc_samples: p.train.mc_samples,
            keep_prob: p.train.keep_prob,
            lambda: p.train.lambda,
            curriculum: p.train.horizons.clone(),
            profile: ProfileName::Desk,
            epochs_per_stage: None,
            batch_size: None,
            learning_rate: None,
            max_windows: None,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| FseError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(text).map_err(|e| FseError::Usage(format!("{}: {e}", path.display())))
    }

    /// Rejects combinations that appear in none of the comparison tables.
    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(FseError::Usage(m));
        if self.scale == 0 {
            return usage("scale must be at least 1".into());
        }
        if ![4, 6, 8].contains(&self.past) {
            return usage(format!("--past must be 4, 6 or 8, got {}", self.past));
        }
        match (self.variant, self.streams) {
            (ModelVariant::Kalman | ModelVariant::Constant, Streams::One) => {}
            (ModelVariant::Kalman | ModelVariant::Constant, s) => {
                return usage(format!("{} uses no odometry stream; --streams {s} is not a valid combination", self.variant));
            }
            (ModelVariant::Lstm | ModelVariant::LstmAleatoric, Streams::Oracle) => {
                return usage(format!("{} has no oracle-odometry row; use --streams one or two", self.variant));
            }
            _ => {}
        }
        self.profile()?.validate().map_err(|e| FseError::Usage(e.to_string()))
    }

    /// The grid profile with this configuration's overrides applied.
    pub fn profile(&self) -> Result<Profile> {
        let mut p = self.profile.profile();
        let t = &mut p.train;
        t.past = self.past;
        t.horizon = self.horizon;
        t.horizons = self.curriculum.clone();
        t.mc_samples = self.mc_samples;
        t.keep_prob = self.keep_prob;
        t.lambda = self.lambda;
        t.seed = self.seed;
        if let Some(e) = self.epochs_per_stage {
            t.epochs_per_stage = e;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            t.adam.lr = lr;
        }
        if let Some(m) = self.max_windows {
            t.max_windows = m;
        }
        Ok(p)
    }

    /// Hash of everything that determines results (the output directory
    /// and dataset location excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.dataset = None;
        config_hash(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let c: ExperimentConfig = toml::from_str("variant = \"lstm\"\nstreams = \"one\"\npast = 4\n").unwrap();
        assert_eq!(c.variant, ModelVariant::Lstm);
        assert_eq!(c.past, 4);
        assert_eq!(c.horizon, 15);
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<ExperimentConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn invalid_combinations() {
        let bad = [
            ExperimentConfig { variant: ModelVariant::Kalman, streams: Streams::Two, ..Default::default() },
            ExperimentConfig { variant: ModelVariant::Lstm, streams: Streams::Oracle, ..Default::default() },
            ExperimentConfig { past: 5, ..Default::default() },
            ExperimentConfig { scale: 0, ..Default::default() },
            ExperimentConfig { curriculum: vec![5, 10], ..Default::default() },
        ];
        for c in bad {
            assert_eq!(c.validate().unwrap_err().exit_code(), 2, "{c:?}");
        }
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_variant_lists_valid_ones() {
        let e = "lstm-x".parse::<ModelVariant>().unwrap_err();
        assert!(e.contains(VARIANT_NAMES));
    }

    #[test]
    fn hash_ignores_paths() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out: "elsewhere".into(), dataset: Some("d".into()), ..Default::default() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig { seed: 1, ..Default::default() }.hash());
    }
}

//! Experiment configuration: one TOML document, unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ArrayConfig;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::measurement::{CombinerPolicy, PilotConfig};
use crate::network::{ArchConfig, Variant};
use crate::seed;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Propagation paths per channel.
    #[serde(default = "one")]
    pub paths: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_list: Vec<f64>,
    /// Pilot count used for the SNR sweep; defaults to `pilots.p`.
    pub snr_sweep_pilots: Option<usize>,
    pub pilot_list: Vec<usize>,
    pub pilot_sweep_snr_db: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_list: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            snr_sweep_pilots: None,
            pilot_list: vec![16, 24, 32, 40, 48],
            pilot_sweep_snr_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "crate::seed::toml_u64")]
    pub seed: u64,
    pub array: ArrayConfig,
    pub pilots: PilotConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn stream(self) -> u64 {
        match self {
            Split::Train => seed::stream::SPLIT_TRAIN,
            Split::Val => seed::stream::SPLIT_VAL,
            Split::Test => seed::stream::SPLIT_TEST,
        }
    }
}

impl ExperimentConfig {
    /// Desk scale: `N = 64`, `P = 16`, 4000/500/500 samples, 40 epochs.
    pub fn desk() -> Self {
        Self {
            seed: 2024,
            array: ArrayConfig { n: 64, s: 8, n_rf: 4, fc: 100e9 },
            pilots: PilotConfig { p: 16, snr_db: 10.0, combiner_seed: 1, combiner_policy: CombinerPolicy::PerSample },
            data: DataConfig { train: 4000, val: 500, test: 500, paths: 1 },
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Full scale: `N = 256`, `P = 32`, 16000/2000/2000 samples, 100 epochs
    /// with pruning at epoch 50.
    pub fn large() -> Self {
        let mut c = Self::desk();
        c.array.n = 256;
        c.pilots.p = 32;
        c.data = DataConfig { train: 16000, val: 2000, test: 2000, paths: 1 };
        c.train.epochs = 100;
        c.train.prune_rho = 0.5;
        c.train.prune_start_epoch = 50;
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    /// The same experiment with the given estimator variant. The ablation
    /// also drops the mask term from the loss.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        match variant {
            Variant::Full => c.arch.variant = Variant::Full,
            Variant::Ablation => {
                c.arch = c.arch.ablation();
                c.train.alpha = 0.0;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.pilots.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if self.data.train == 0 || self.data.val == 0 || self.data.test == 0 {
            return Err(Error::Config("every split needs at least one sample".into()));
        }
        if self.data.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.eval.pilot_list.contains(&0) || self.eval.snr_sweep_pilots == Some(0) {
            return Err(Error::Config("pilot counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short digest of the whole configuration.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())[..16].to_string()
    }

    /// Digest of the fields that determine the stored channels.
    pub fn data_hash(&self) -> String {
        let key = format!("{:?}|{:?}|{}", self.array, self.data, self.seed);
        sha256_hex(key.as_bytes())[..16].to_string()
    }

    pub fn split_seed(&self, split: Split) -> u64 {
        seed::derive(self.seed, split.stream(), 0)
    }

    pub fn split_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.data.train,
            Split::Val => self.data.val,
            Split::Test => self.data.test,
        }
    }

    /// Pilot settings for a split; each split gets its own combiners.
    pub fn pilots_for(&self, split: Split) -> PilotConfig {
        PilotConfig { combiner_seed: seed::derive(self.pilots.combiner_seed, split.stream(), 1), ..self.pilots }
    }
}

//! Experiment configuration, mirrored one-to-one by the JSON config file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::ActionKind;
use crate::contrastive::SslConfig;
use crate::data::{Band, SplitConfig, SyntheticTaskSpec};
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, PolicyConfig};
use crate::rl::ExplorationSchedule;

/// Where the epochs come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticTaskSpec),
    /// A dataset file; relative paths resolve against the working directory.
    File(PathBuf),
}

/// Augmentation strategy under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Agent trained in Phase 1, frozen in Phase 2.
    #[serde(rename = "rl_bioaug")]
    RlBioAug,
    /// Uniformly random strong augmentation, no agent.
    RandomSelection,
    /// One strong augmentation throughout, no agent.
    Fixed(ActionKind),
}

/// Reward signal used by the agent in Phase 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Soft-KNN probability of the true class.
    #[default]
    SoftKnn,
    /// 1 when the Soft-KNN argmax is the true class, else 0.
    Accuracy,
    /// `exp(-loss)` of the sample's InfoNCE pair loss; label-free.
    SslLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub k_neighbors: usize,
    pub tau_knn: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            mode: RewardMode::SoftKnn,
            k_neighbors: 20,
            tau_knn: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub lr: f64,
    pub momentum: f64,
    pub top_k: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            lr: 1e-3,
            momentum: 0.0,
            top_k: 3,
            beta_start: 1.0,
            beta_end: 0.1,
            gamma: 0.1,
        }
    }
}

impl AgentConfig {
    /// β decays over the Phase 1 steps.
    pub fn schedule(&self, total_steps: usize) -> ExplorationSchedule {
        ExplorationSchedule {
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            total_steps,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Config {
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Phase1Config {
            steps: 2000,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Config {
    pub steps: usize,
    pub batch_size: usize,
    /// Start from the Phase 1 encoder instead of a fresh initialisation.
    pub warm_start: bool,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Phase2Config {
            steps: 5000,
            batch_size: 64,
            warm_start: false,
        }
    }
}

/// Multinomial logistic regression fitted on frozen embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            iterations: 500,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Optional per-epoch preprocessing applied to file datasets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bandpass: Option<Band>,
    pub z_normalize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub strategy: Strategy,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub ssl: SslConfig,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(SyntheticTaskSpec::default()),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            strategy: Strategy::RlBioAug,
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            ssl: SslConfig::default(),
            reward: RewardConfig::default(),
            agent: AgentConfig::default(),
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.split.validate()?;
        self.encoder.validate()?;
        self.policy.validate()?;
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.ssl.tau > 0.0) {
            return cfg(format!("ssl.tau must be > 0, got {}", self.ssl.tau));
        }
        for (name, v) in [("ssl.lr", self.ssl.lr), ("agent.lr", self.agent.lr), ("probe.lr", self.probe.lr)] {
            if !(v >= 0.0 && v.is_finite()) {
                return cfg(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("ssl.momentum", self.ssl.momentum), ("agent.momentum", self.agent.momentum)] {
            if !(0.0..1.0).contains(&v) {
                return cfg(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(1..=ActionKind::COUNT).contains(&self.agent.top_k) {
            return cfg(format!("agent.top_k must be in [1, {}], got {}", ActionKind::COUNT, self.agent.top_k));
        }
        self.agent.schedule(self.phase1.steps).validate()?;
        if self.reward.k_neighbors == 0 {
            return cfg("reward.k_neighbors must be >= 1".into());
        }
        if !(self.reward.tau_knn > 0.0) {
            return cfg(format!("reward.tau_knn must be > 0, got {}", self.reward.tau_knn));
        }
        if self.phase1.batch_size < 2 || self.phase2.batch_size < 2 {
            return cfg("batch sizes must be >= 2 (InfoNCE needs negatives)".into());
        }
        if self.strategy == Strategy::RlBioAug && self.phase1.steps == 0 {
            return cfg("rl_bioaug needs phase1.steps >= 1".into());
        }
        if !(self.probe.l2 >= 0.0) {
            return cfg(format!("probe.l2 must be >= 0, got {}", self.probe.l2));
        }
        Ok(())
    }
}

//! Experiment orchestration: Phase 1 agent training, Phase 2 pre-training
//! with the frozen agent (or a baseline action source), linear-probe
//! evaluation, and the run artefacts.

mod agent;
mod config;
pub mod metrics;
mod phase1;
mod phase2;
mod probe;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use agent::{ActionSource, SlotHistory};
pub use config::{
    AgentConfig, DataSource, ExperimentConfig, Phase1Config, Phase2Config, PreprocessConfig, ProbeConfig,
    RewardConfig, RewardMode, Strategy,
};
pub use metrics::{balanced_accuracy, confusion_matrix, macro_f1, ClassMetrics, Confusion};
pub use phase1::{phase1_train_agent, Phase1Output};
pub use phase2::{phase2_pretrain, Phase2Output};
pub use probe::{linear_probe, LogisticRegression, ProbeResult};

use crate::augment::ActionKind;
use crate::autodiff::{checkpoint, ParamStore, Tensor};
use crate::data::{self, bandpass, split, z_normalize, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::model::PolicyNet;
use crate::rl::{TraceRow, TRACE_HEADER};
use crate::rng::derive_seed;
use phase1::{seeds, tail_mean};

/// Name of the policy-checkpoint tensor holding the reward fed to the
/// frozen agent's history in Phase 2.
pub const HISTORY_REWARD_KEY: &str = "meta.history_reward";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase1Summary {
    pub steps: usize,
    /// Agent reward (in the configured mode), mean over the last tenth of steps.
    pub final_reward: f64,
    /// Soft-KNN consistency, mean over the last tenth of steps.
    pub final_consistency: f64,
    /// Mean action probabilities over the last tenth of steps, action-id order.
    pub final_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase2Summary {
    pub steps: usize,
    /// Mean InfoNCE over the first tenth of steps.
    pub initial_loss: f64,
    /// Mean InfoNCE over the last tenth of steps.
    pub final_loss: f64,
    pub action_counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: Strategy,
    pub reward_mode: RewardMode,
    pub seed: u64,
    pub config_hash: String,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassMetrics>,
    pub confusion: Confusion,
    pub phase1: Option<Phase1Summary>,
    pub phase2: Phase2Summary,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Everything one experiment produces.
pub struct RunOutput {
    pub report: EvalReport,
    pub trace: Option<Vec<TraceRow>>,
    pub policy: Option<ParamStore>,
    pub encoder: ParamStore,
}

/// Load or generate the dataset and apply the configured preprocessing.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let mut ds = match &cfg.data {
        DataSource::Synthetic(spec) => data::synth_generate(spec)?,
        DataSource::File(path) => data::load(path)?,
    };
    let pre = &cfg.preprocess;
    if pre.bandpass.is_some() || pre.z_normalize {
        let mut flagged = 0;
        for e in &mut ds.epochs {
            if let Some(band) = pre.bandpass {
                e.samples = bandpass(&e.samples, band, ds.sample_rate)?;
            }
            if pre.z_normalize {
                let (z, constant) = z_normalize(&e.samples);
                flagged += constant as usize;
                e.samples = z;
            }
        }
        if flagged > 0 {
            log::warn!("{flagged} constant epochs were zeroed by z-normalisation");
        }
    }
    Ok(ds)
}

/// Split a dataset with the experiment's split seed.
pub fn split_dataset(cfg: &ExperimentConfig, ds: Dataset) -> Result<SplitDataset> {
    split(ds, &cfg.split, derive_seed(cfg.seed, &[seeds::SPLIT]))
}

/// Run the configured strategy end to end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let ds = split_dataset(cfg, load_dataset(cfg)?)?;
    run_on_split(cfg, &ds)
}

/// [`run_experiment`] on an already split dataset.
pub fn run_on_split(cfg: &ExperimentConfig, ds: &SplitDataset) -> Result<RunOutput> {
    let view = ds.unlabeled_train();
    let mut warnings = Vec::new();

    let (p1, p2) = match cfg.strategy {
        Strategy::RlBioAug => {
            let p1 = phase1_train_agent(cfg, ds)?;
            let net = PolicyNet::new(cfg.policy.clone(), cfg.encoder.embedding_dim)?;
            let history_reward = p1.final_reward();
            let source = ActionSource::Policy {
                net: &net,
                params: &p1.policy,
                top_k: cfg.agent.top_k,
            };
            let init = cfg.phase2.warm_start.then_some(&p1.encoder);
            let p2 = phase2_pretrain(cfg, &view, ds.data.epoch_len, &source, history_reward, init)?;
            (Some(p1), p2)
        }
        Strategy::RandomSelection => (
            None,
            phase2_pretrain(cfg, &view, ds.data.epoch_len, &ActionSource::Random, 0.0, None)?,
        ),
        Strategy::Fixed(kind) => (
            None,
            phase2_pretrain(cfg, &view, ds.data.epoch_len, &ActionSource::Fixed(kind), 0.0, None)?,
        ),
    };

    let probe = linear_probe(&p2.encoder, ds, &cfg.probe)?;
    warnings.extend(probe.warnings.iter().cloned());

    let phase1 = p1.as_ref().map(|p| Phase1Summary {
        steps: p.trace.len(),
        final_reward: p.final_reward(),
        final_consistency: p.final_consistency(),
        final_probs: p.final_probs().to_vec(),
    });
    let head = p2.losses.len().div_ceil(10);
    let report = EvalReport {
        strategy: cfg.strategy,
        reward_mode: cfg.reward.mode,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        n_classes: ds.data.n_classes,
        n_train: probe.n_train,
        n_test: probe.n_test,
        balanced_accuracy: probe.balanced_accuracy,
        macro_f1: probe.macro_f1,
        classes: probe.classes,
        confusion: probe.confusion,
        phase1,
        phase2: Phase2Summary {
            steps: p2.losses.len(),
            initial_loss: if head == 0 {
                f64::NAN
            } else {
                p2.losses[..head].iter().sum::<f64>() / head as f64
            },
            final_loss: tail_mean(p2.losses.iter().copied()),
            action_counts: p2.action_counts.to_vec(),
        },
        warnings,
    };
    let (trace, policy) = match p1 {
        Some(p) => {
            let reward = p.final_reward();
            let mut policy = p.policy;
            policy.insert(HISTORY_REWARD_KEY, Tensor::scalar(reward));
            (Some(p.trace), Some(policy))
        }
        None => (None, None),
    };
    Ok(RunOutput {
        report,
        trace,
        policy,
        encoder: p2.encoder,
    })
}

/// Serialise a trace with the fixed CSV header.
pub fn trace_csv(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != TRACE_HEADER {
        return Err(Error::UnsupportedFormat(format!("unexpected trace header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const REPORT: &str = "report.json";
    pub const TRACE: &str = "trace.csv";
    pub const POLICY: &str = "policy.ckpt";
    pub const ENCODER: &str = "encoder.ckpt";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    artifacts: Vec<&'a str>,
}

/// Write every artefact of a run into `dir`, plus a manifest tying them to
/// the config hash.
pub fn write_run(dir: impl AsRef<Path>, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut artifacts = vec![files::CONFIG, files::REPORT, files::ENCODER];
    std::fs::write(dir.join(files::CONFIG), cfg.to_json())?;
    std::fs::write(dir.join(files::REPORT), out.report.to_json())?;
    checkpoint::save(dir.join(files::ENCODER), &out.encoder)?;
    if let Some(trace) = &out.trace {
        std::fs::write(dir.join(files::TRACE), trace_csv(trace)?)?;
        artifacts.push(files::TRACE);
    }
    if let Some(policy) = &out.policy {
        checkpoint::save(dir.join(files::POLICY), policy)?;
        artifacts.push(files::POLICY);
    }
    let hash = cfg.hash();
    let manifest = Manifest {
        config_hash: &hash,
        artifacts,
    };
    std::fs::write(
        dir.join(files::MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best })
}

/// Short action label for tables.
pub fn action_label(i: usize) -> &'static str {
    ActionKind::from_index(i).map_or("?", ActionKind::short_name)
}

//! Phase 1: the cooperative loop on labelled train batches.
//!
//! Per step: frozen-encoder states, policy action choice, one contrastive
//! update of the encoder, per-sample reward against the refreshed reference
//! set, one policy-gradient update of the agent.

use rand::seq::index::sample as sample_indices;

use super::agent::{ActionSource, SlotHistory};
use super::config::{ExperimentConfig, RewardMode};
use crate::augment::{ActionKind, Epoch};
use crate::autodiff::{ParamStore, Sgd};
use crate::contrastive::ssl_step;
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{Encoder, PolicyNet};
use crate::reward::{accuracy_reward, reward, ReferenceSet};
use crate::rl::{rl_step, StepBatch, TraceRow};
use crate::rng::{child_rng, derive_seed};

pub struct Phase1Output {
    pub policy: ParamStore,
    pub encoder: ParamStore,
    pub trace: Vec<TraceRow>,
    /// Batch-mean Soft-KNN consistency per step, whatever the reward mode.
    pub consistency: Vec<f64>,
}

impl Phase1Output {
    /// Mean of the agent's reward over the last tenth of the steps.
    pub fn final_reward(&self) -> f64 {
        tail_mean(self.trace.iter().map(|r| r.mean_reward))
    }

    /// Mean Soft-KNN consistency over the last tenth of the steps.
    pub fn final_consistency(&self) -> f64 {
        tail_mean(self.consistency.iter().copied())
    }

    /// Batch-mean action probabilities over the last tenth of the steps.
    pub fn final_probs(&self) -> [f64; ActionKind::COUNT] {
        let mut out = [0.0; ActionKind::COUNT];
        for (i, o) in out.iter_mut().enumerate() {
            *o = tail_mean(self.trace.iter().map(|r| r.probs()[i]));
        }
        out
    }
}

pub(crate) fn tail_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let k = n.div_ceil(10);
    values.skip(n - k).sum::<f64>() / k as f64
}

/// Seed roles under the experiment seed.
pub(crate) mod seeds {
    pub const SPLIT: u64 = 1;
    pub const PHASE1_ENCODER: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const PHASE1_STEP: u64 = 4;
    pub const PHASE2_ENCODER: u64 = 5;
    pub const PHASE2_STEP: u64 = 6;
}

pub fn phase1_train_agent(cfg: &ExperimentConfig, ds: &SplitDataset) -> Result<Phase1Output> {
    let pool = ds.agent_pool();
    let refs = ds.reference();
    if pool.len() < 2 {
        return Err(Error::Config(format!(
            "phase 1 needs at least 2 labelled non-reference train epochs, found {}",
            pool.len()
        )));
    }
    if refs.len() < cfg.reward.k_neighbors {
        return Err(Error::Config(format!(
            "reference set has {} epochs, fewer than k_neighbors = {}",
            refs.len(),
            cfg.reward.k_neighbors
        )));
    }
    let labels_of = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .map(|&i| ds.data.epochs[i].label.expect("labelled subsets carry labels"))
            .collect()
    };
    let ref_samples: Vec<&[f64]> = refs.iter().map(|&i| ds.data.epochs[i].samples.as_slice()).collect();

    let encoder = Encoder::new(cfg.encoder.clone(), ds.data.epoch_len)?;
    let policy = PolicyNet::new(cfg.policy.clone(), cfg.encoder.embedding_dim)?;
    let mut enc_params = encoder.init(derive_seed(cfg.seed, &[seeds::PHASE1_ENCODER]));
    let mut pol_params = policy.init(derive_seed(cfg.seed, &[seeds::POLICY]));
    let mut enc_opt = Sgd::new(cfg.ssl.lr, cfg.ssl.momentum);
    let mut pol_opt = Sgd::new(cfg.agent.lr, cfg.agent.momentum);
    let schedule = cfg.agent.schedule(cfg.phase1.steps);
    let mut history = SlotHistory::new(cfg.policy.history_len);

    let mut references = ReferenceSet::new(
        &encoder.embed(&enc_params, &ref_samples)?,
        labels_of(&refs),
        ds.data.n_classes,
    )?;
    let batch_size = cfg.phase1.batch_size.min(pool.len());
    let mut trace = Vec::with_capacity(cfg.phase1.steps);
    let mut consistency = Vec::with_capacity(cfg.phase1.steps);

    for step in 0..cfg.phase1.steps {
        let step_seed = derive_seed(cfg.seed, &[seeds::PHASE1_STEP, step as u64]);
        let picked: Vec<usize> = sample_indices(&mut child_rng(step_seed, &[0]), pool.len(), batch_size)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        let batch: Vec<&Epoch> = picked.iter().map(|&i| &ds.data.epochs[i]).collect();
        let labels = labels_of(&picked);

        // State observation through the frozen (pre-update) encoder.
        let states = encoder.embed(&enc_params, &batch.iter().map(|e| e.samples.as_slice()).collect::<Vec<_>>())?;
        let contexts: Vec<_> = (0..batch_size)
            .map(|b| history.context(b, states.row(b).to_vec()))
            .collect();

        let source = ActionSource::Policy {
            net: &policy,
            params: &pol_params,
            top_k: cfg.agent.top_k,
        };
        let (chosen, probs) = source.choose(&contexts, derive_seed(step_seed, &[1]))?;
        let probs = probs.expect("policy source returns distributions");
        let actions: Vec<ActionKind> = chosen
            .iter()
            .map(|&a| ActionKind::from_index(a))
            .collect::<Result<_>>()?;
        let aug_seeds: Vec<u64> = (0..batch_size).map(|b| derive_seed(step_seed, &[2, b as u64])).collect();

        let outcome = ssl_step(&encoder, &mut enc_params, &mut enc_opt, &batch, &actions, &aug_seeds, &cfg.ssl)?;
        references.refresh(&encoder.embed(&enc_params, &ref_samples)?)?;

        let (k, tau) = (cfg.reward.k_neighbors, cfg.reward.tau_knn);
        let mut rewards = Vec::with_capacity(batch_size);
        let mut cons = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let z = outcome.reward_embeddings.row(b);
            let soft = reward(z, y, &references, k, tau)?;
            cons += soft / batch_size as f64;
            rewards.push(match cfg.reward.mode {
                RewardMode::SoftKnn => soft,
                RewardMode::Accuracy => accuracy_reward(z, y, &references, k, tau)?,
                RewardMode::SslLoss => (-outcome.pair_losses[b]).exp(),
            });
        }

        let step_batch = StepBatch {
            contexts,
            chosen,
            rewards,
            probs,
        };
        let row = rl_step(&policy, &mut pol_params, &mut pol_opt, &step_batch, &schedule, step)?;
        for (b, (&a, &r)) in step_batch.chosen.iter().zip(&step_batch.rewards).enumerate() {
            history.push(b, a, r);
        }
        if step % 50 == 0 || step + 1 == cfg.phase1.steps {
            log::info!(
                "phase1 step {step}: ssl loss {:.4}, reward {:.4}, probs [{}]",
                outcome.loss,
                row.mean_reward,
                row.probs().iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ")
            );
        }
        trace.push(row);
        consistency.push(cons);
    }

    Ok(Phase1Output {
        policy: pol_params,
        encoder: enc_params,
        trace,
        consistency,
    })
}

//! Phase 2: contrastive pre-training on the unlabelled train split with a
//! fixed action source. Only an [`UnlabeledView`] is accepted, so no label
//! can be read here.

use rand::seq::index::sample as sample_indices;

use super::agent::{ActionSource, SlotHistory};
use super::config::ExperimentConfig;
use super::phase1::seeds;
use crate::augment::{ActionKind, Epoch};
use crate::autodiff::{ParamStore, Sgd};
use crate::contrastive::ssl_step;
use crate::data::UnlabeledView;
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::rng::{child_rng, derive_seed};

pub struct Phase2Output {
    pub encoder: ParamStore,
    /// Batch InfoNCE per step, before each update.
    pub losses: Vec<f64>,
    pub action_counts: [u64; ActionKind::COUNT],
}

/// Train an encoder from `init` (or a fresh initialisation). With a policy
/// source the history reward of every slot is the constant `history_reward`.
pub fn phase2_pretrain(
    cfg: &ExperimentConfig,
    view: &UnlabeledView,
    epoch_len: usize,
    source: &ActionSource,
    history_reward: f64,
    init: Option<&ParamStore>,
) -> Result<Phase2Output> {
    if view.len() < 2 {
        return Err(Error::Config(format!(
            "phase 2 needs at least 2 train epochs, found {}",
            view.len()
        )));
    }
    let encoder = Encoder::new(cfg.encoder.clone(), epoch_len)?;
    let mut params = match init {
        Some(p) => p.clone(),
        None => encoder.init(derive_seed(cfg.seed, &[seeds::PHASE2_ENCODER])),
    };
    let mut opt = Sgd::new(cfg.ssl.lr, cfg.ssl.momentum);
    let mut history = SlotHistory::new(cfg.policy.history_len);
    let batch_size = cfg.phase2.batch_size.min(view.len());
    let mut losses = Vec::with_capacity(cfg.phase2.steps);
    let mut action_counts = [0u64; ActionKind::COUNT];

    for step in 0..cfg.phase2.steps {
        let step_seed = derive_seed(cfg.seed, &[seeds::PHASE2_STEP, step as u64]);
        let batch: Vec<&Epoch> = sample_indices(&mut child_rng(step_seed, &[0]), view.len(), batch_size)
            .into_iter()
            .map(|j| view.get(j))
            .collect();
        let contexts: Vec<_> = if source.needs_state() {
            let states = encoder.embed(&params, &batch.iter().map(|e| e.samples.as_slice()).collect::<Vec<_>>())?;
            (0..batch_size).map(|b| history.context(b, states.row(b).to_vec())).collect()
        } else {
            (0..batch_size).map(|b| history.context(b, Vec::new())).collect()
        };
        let (chosen, _) = source.choose(&contexts, derive_seed(step_seed, &[1]))?;
        let actions: Vec<ActionKind> = chosen
            .iter()
            .map(|&a| ActionKind::from_index(a))
            .collect::<Result<_>>()?;
        let aug_seeds: Vec<u64> = (0..batch_size).map(|b| derive_seed(step_seed, &[2, b as u64])).collect();
        let outcome = ssl_step(&encoder, &mut params, &mut opt, &batch, &actions, &aug_seeds, &cfg.ssl)?;
        for (b, &a) in chosen.iter().enumerate() {
            action_counts[a] += 1;
            if source.needs_state() {
                history.push(b, a, history_reward);
            }
        }
        if step % 100 == 0 || step + 1 == cfg.phase2.steps {
            log::info!("phase2 step {step}: ssl loss {:.4}", outcome.loss);
        }
        losses.push(outcome.loss);
    }
    Ok(Phase2Output {
        encoder: params,
        losses,
        action_counts,
    })
}

//! Per-sample action selection shared by both training phases.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::augment::ActionKind;
use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::model::{AgentContext, PolicyNet};
use crate::rl::top_k_sample;
use crate::rng::{derive_seed, rng_from};

/// Sliding (action, reward) history per batch slot.
#[derive(Clone, Debug)]
pub struct SlotHistory {
    len: usize,
    slots: Vec<VecDeque<(usize, f64)>>,
}

impl SlotHistory {
    pub fn new(history_len: usize) -> Self {
        SlotHistory {
            len: history_len,
            slots: Vec::new(),
        }
    }

    pub fn context(&self, slot: usize, state: Vec<f64>) -> AgentContext {
        let mut ctx = AgentContext::new(state);
        if let Some(h) = self.slots.get(slot) {
            ctx.past_actions = h.iter().map(|p| p.0).collect();
            ctx.past_rewards = h.iter().map(|p| p.1).collect();
        }
        ctx
    }

    pub fn push(&mut self, slot: usize, action: usize, reward: f64) {
        if self.len == 0 {
            return;
        }
        if self.slots.len() <= slot {
            self.slots.resize_with(slot + 1, VecDeque::new);
        }
        let h = &mut self.slots[slot];
        if h.len() == self.len {
            h.pop_front();
        }
        h.push_back((action, reward));
    }
}

/// How strong augmentations are chosen for a batch.
pub enum ActionSource<'a> {
    /// Top-K sampling from a policy with fixed parameters.
    Policy {
        net: &'a PolicyNet,
        params: &'a ParamStore,
        top_k: usize,
    },
    Random,
    Fixed(ActionKind),
}

impl ActionSource<'_> {
    /// One action per context. `seed` keys this batch; slot `b` draws from
    /// `derive_seed(seed, [b])`. Returns the actions and, for a policy, the
    /// distributions they were drawn from.
    pub fn choose(&self, contexts: &[AgentContext], seed: u64) -> Result<(Vec<usize>, Option<Vec<Vec<f64>>>)> {
        match self {
            ActionSource::Policy { net, params, top_k } => {
                let probs = net.probabilities(params, contexts)?;
                let actions = probs
                    .iter()
                    .enumerate()
                    .map(|(b, p)| top_k_sample(p, *top_k, derive_seed(seed, &[b as u64])))
                    .collect::<Result<_>>()?;
                Ok((actions, Some(probs)))
            }
            ActionSource::Random => Ok((
                (0..contexts.len())
                    .map(|b| rng_from(derive_seed(seed, &[b as u64])).gen_range(0..ActionKind::COUNT))
                    .collect(),
                None,
            )),
            ActionSource::Fixed(kind) => Ok((vec![kind.index(); contexts.len()], None)),
        }
    }

    pub fn needs_state(&self) -> bool {
        matches!(self, ActionSource::Policy { .. })
    }
}

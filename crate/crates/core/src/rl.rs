//! Policy-gradient step for the augmentation agent.
//!
//! Each training step is a one-step contextual bandit: the baseline is the
//! mini-batch mean reward, the loss adds a decaying entropy bonus, and
//! actions are drawn by Top-K sampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::ActionKind;
use crate::autodiff::{Graph, ParamStore, Sgd, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{AgentContext, PolicyNet};
use crate::rng::rng_from;

/// Floor applied to probabilities before taking logarithms.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

/// Reward minus the batch-mean baseline.
pub fn advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("advantage of an empty batch"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::invalid(format!("negative probability {p}")));
    }
    Ok(-probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>())
}

/// Linear decay of the exploration factor β.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub total_steps: usize,
    /// Entropy coefficient γ.
    pub gamma: f64,
}

impl Default for ExplorationSchedule {
    fn default() -> Self {
        ExplorationSchedule {
            beta_start: 1.0,
            beta_end: 0.1,
            total_steps: 2000,
            gamma: 0.1,
        }
    }
}

impl ExplorationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_end >= 0.0 && self.beta_start >= self.beta_end) {
            return Err(Error::Config(format!(
                "beta must decay from beta_start {} to beta_end {} >= 0",
                self.beta_start, self.beta_end
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn beta_at(&self, step: usize) -> f64 {
        if step >= self.total_steps {
            return self.beta_end;
        }
        let t = step as f64 / self.total_steps as f64;
        self.beta_start + t * (self.beta_end - self.beta_start)
    }
}

/// Samples gathered during one training step.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub contexts: Vec<AgentContext>,
    pub chosen: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Policy distribution each action was drawn from.
    pub probs: Vec<Vec<f64>>,
}

impl StepBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.contexts.len();
        if n == 0 || self.chosen.len() != n || self.rewards.len() != n || self.probs.len() != n {
            return Err(Error::invalid(format!(
                "step batch misaligned: {} contexts, {} actions, {} rewards, {} distributions",
                n,
                self.chosen.len(),
                self.rewards.len(),
                self.probs.len()
            )));
        }
        for (a, p) in self.chosen.iter().zip(&self.probs) {
            if p.get(*a).is_none_or(|v| *v <= 0.0) {
                return Err(Error::invalid(format!("action {a} had zero sampling probability")));
            }
        }
        Ok(())
    }
}

/// Scalar policy loss together with bookkeeping values.
pub struct PolicyLoss {
    pub loss: Var,
    pub mean_entropy: f64,
    /// Chosen actions whose probability fell below [`LOG_PROB_FLOOR`].
    pub clamped: usize,
}

/// `−mean(log π(a|s)·A) − β·γ·mean(H(π(·|s)))` over a `[B, n_actions]` probability node.
pub fn policy_loss(
    g: &mut Graph,
    probs: Var,
    chosen: &[usize],
    advantages: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<PolicyLoss> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != chosen.len() || chosen.len() != advantages.len() {
        return Err(Error::ShapeMismatch {
            op: "policy_loss",
            lhs: shape,
            rhs: vec![chosen.len(), advantages.len()],
        });
    }
    let (b, n) = (shape[0], shape[1]);
    let mut onehot = vec![0.0; b * n];
    let mut clamped = 0;
    for (i, &a) in chosen.iter().enumerate() {
        if a >= n {
            return Err(Error::invalid(format!("action {a} out of range")));
        }
        onehot[i * n + a] = 1.0;
        if g.value(probs).data()[i * n + a] < LOG_PROB_FLOOR {
            clamped += 1;
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} chosen action(s) had probability below {LOG_PROB_FLOOR:e}; log clamped");
    }
    let logp = g.log_clamped(probs, LOG_PROB_FLOOR)?;
    let onehot = g.constant(Tensor::new(vec![b, n], onehot)?);
    let sel = g.mul(logp, onehot)?;
    let sel = g.sum_axis(sel, 1, false)?;
    let adv = g.constant(Tensor::vector(advantages.to_vec()));
    let weighted = g.mul(sel, adv)?;
    let pg = g.mean_all(weighted)?;

    let plogp = g.mul(probs, logp)?;
    let neg_h = g.sum_axis(plogp, 1, false)?;
    let mean_neg_h = g.mean_all(neg_h)?;
    let mean_entropy = -g.value(mean_neg_h).item()?;

    // loss = -pg + βγ·mean(-H)
    let a = g.scale(pg, -1.0)?;
    let c = g.scale(mean_neg_h, beta * gamma)?;
    let loss = g.add(a, c)?;
    Ok(PolicyLoss {
        loss,
        mean_entropy,
        clamped,
    })
}

/// Keep the `k` most probable actions (lower id wins ties), renormalise, draw one.
pub fn top_k_sample(probs: &[f64], k: usize, seed: u64) -> Result<usize> {
    if k == 0 || k > probs.len() {
        return Err(Error::invalid(format!("top-k must be in [1, {}], got {k}", probs.len())));
    }
    let kept = top_k_indices(probs, k);
    let total: f64 = kept.iter().map(|&i| probs[i]).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("top-k candidates carry no probability mass"));
    }
    let u = rng_from(seed).gen::<f64>() * total;
    let mut cum = 0.0;
    for &i in &kept {
        cum += probs[i];
        if u < cum {
            return Ok(i);
        }
    }
    Ok(*kept.iter().rev().find(|&&i| probs[i] > 0.0).expect("positive mass exists"))
}

/// Indices of the `k` largest probabilities, ordered by (probability desc, id asc).
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// One row of the policy trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub beta: f64,
    pub mean_reward: f64,
    pub mean_advantage: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub p_mask: f64,
    pub p_perm: f64,
    pub p_crop: f64,
    pub p_flip: f64,
    pub p_warp: f64,
    /// Counts of chosen actions in action-id order, `;`-separated.
    pub chosen_action_hist: String,
}

impl TraceRow {
    pub fn probs(&self) -> [f64; ActionKind::COUNT] {
        [self.p_mask, self.p_perm, self.p_crop, self.p_flip, self.p_warp]
    }
}

/// Exact header of the trace CSV.
pub const TRACE_HEADER: &str = "step,beta,mean_reward,mean_advantage,policy_loss,entropy,p_mask,p_perm,p_crop,p_flip,p_warp,chosen_action_hist";

/// Policy update on one batch; returns the trace row for `step`.
pub fn rl_step(
    policy: &PolicyNet,
    params: &mut ParamStore,
    opt: &mut Sgd,
    batch: &StepBatch,
    schedule: &ExplorationSchedule,
    step: usize,
) -> Result<TraceRow> {
    batch.validate()?;
    let adv = advantage(&batch.rewards)?;
    let beta = schedule.beta_at(step);

    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let probs = policy.forward(&mut g, &p, &batch.contexts)?;
    let pl = policy_loss(&mut g, probs, &batch.chosen, &adv, beta, schedule.gamma)?;
    let loss_value = g.value(pl.loss).item()?;

    let n_actions = policy.config().n_actions;
    let b = batch.contexts.len();
    let mut mean_p = vec![0.0; n_actions];
    for row in g.value(probs).data().chunks(n_actions) {
        mean_p.iter_mut().zip(row).for_each(|(m, v)| *m += v / b as f64);
    }
    let mut hist = vec![0usize; n_actions];
    batch.chosen.iter().for_each(|&a| hist[a] += 1);

    g.backward(pl.loss)?;
    opt.step(params, &p.gradients(&g))?;

    Ok(TraceRow {
        step,
        beta,
        mean_reward: batch.rewards.iter().sum::<f64>() / b as f64,
        mean_advantage: adv.iter().sum::<f64>() / b as f64,
        policy_loss: loss_value,
        entropy: pl.mean_entropy,
        p_mask: mean_p[0],
        p_perm: mean_p[1],
        p_crop: mean_p[2],
        p_flip: mean_p[3],
        p_warp: mean_p[4],
        chosen_action_hist: hist.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
    })
}

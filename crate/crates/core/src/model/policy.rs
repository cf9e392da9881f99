use serde::{Deserialize, Serialize};

use super::{he_uniform, layer_norm, linear};
use crate::autodiff::{Bound, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Transformer policy sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Number of past (action, reward) pairs fed to the policy.
    pub history_len: usize,
    pub token_dim: usize,
    pub n_heads: usize,
    pub n_actions: usize,
    pub ffn_dim: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            history_len: 8,
            token_dim: 32,
            n_heads: 2,
            n_actions: 5,
            ffn_dim: 64,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.token_dim == 0 || self.token_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "token_dim {} must be a positive multiple of n_heads {}",
                self.token_dim, self.n_heads
            )));
        }
        if self.n_actions != crate::augment::ActionKind::COUNT {
            return Err(Error::Config(format!(
                "policy must cover the {} strong augmentations, got n_actions = {}",
                crate::augment::ActionKind::COUNT,
                self.n_actions
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config("ffn_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Policy input: the frozen state embedding plus recent decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentContext {
    pub state: Vec<f64>,
    /// Oldest first.
    pub past_actions: Vec<usize>,
    /// Aligned with `past_actions`.
    pub past_rewards: Vec<f64>,
}

impl AgentContext {
    pub fn new(state: Vec<f64>) -> Self {
        AgentContext {
            state,
            past_actions: Vec::new(),
            past_rewards: Vec::new(),
        }
    }
}

/// Transformer-based policy `π_φ(a | s_t, history)`.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    config: PolicyConfig,
    state_dim: usize,
}

impl PolicyNet {
    pub fn new(config: PolicyConfig, state_dim: usize) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 {
            return Err(Error::Config("policy state dimension must be >= 1".into()));
        }
        Ok(PolicyNet { config, state_dim })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Id of the padding token in the action table.
    pub fn pad_id(&self) -> usize {
        self.config.n_actions
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let c = &self.config;
        let (d, f, k) = (c.token_dim, c.ffn_dim, c.history_len);
        let dh = d / c.n_heads;
        let mut rng = rng_from(seed);
        let mut p = ParamStore::new();
        p.insert("pol.state.w", he_uniform(&mut rng, &[self.state_dim, d], self.state_dim, 1.0));
        p.insert("pol.state.b", Tensor::zeros([d]));
        p.insert("pol.action_emb", he_uniform(&mut rng, &[c.n_actions + 1, d], 2 * d, 1.0));
        p.insert("pol.reward.w", he_uniform(&mut rng, &[1, d], 1, 1.0));
        p.insert("pol.reward.b", Tensor::zeros([d]));
        p.insert("pol.pos_emb", he_uniform(&mut rng, &[k + 1, d], 2 * d, 1.0));
        for (name, n) in [("pol.ln1", d), ("pol.ln2", d), ("pol.ln_f", d)] {
            p.insert(format!("{name}.g"), Tensor::ones([n]));
            p.insert(format!("{name}.b"), Tensor::zeros([n]));
        }
        for h in 0..c.n_heads {
            for m in ["q", "k", "v"] {
                p.insert(format!("pol.attn.h{h}.{m}"), he_uniform(&mut rng, &[d, dh], d, 0.5));
            }
        }
        p.insert("pol.attn.out.w", he_uniform(&mut rng, &[d, d], d, 0.5));
        p.insert("pol.attn.out.b", Tensor::zeros([d]));
        p.insert("pol.ffn.l1.w", he_uniform(&mut rng, &[d, f], d, 1.0));
        p.insert("pol.ffn.l1.b", Tensor::zeros([f]));
        p.insert("pol.ffn.l2.w", he_uniform(&mut rng, &[f, d], f, 0.5));
        p.insert("pol.ffn.l2.b", Tensor::zeros([d]));
        // Small head so the initial policy is close to uniform.
        p.insert("pol.head.w", he_uniform(&mut rng, &[d, c.n_actions], d, 0.1));
        p.insert("pol.head.b", Tensor::zeros([c.n_actions]));
        p
    }

    /// Action probabilities `[batch, n_actions]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, contexts: &[AgentContext]) -> Result<Var> {
        let c = &self.config;
        let (d, k) = (c.token_dim, c.history_len);
        let b = contexts.len();
        if b == 0 {
            return Err(Error::invalid("policy batch is empty"));
        }
        let mut states = Vec::with_capacity(b * self.state_dim);
        let mut ids = Vec::with_capacity(b * k);
        let mut rewards = Vec::with_capacity(b * k);
        for ctx in contexts {
            if ctx.state.len() != self.state_dim {
                return Err(Error::ShapeMismatch {
                    op: "policy_forward",
                    lhs: vec![ctx.state.len()],
                    rhs: vec![self.state_dim],
                });
            }
            if ctx.past_actions.len() != ctx.past_rewards.len() {
                return Err(Error::invalid("past actions and rewards are not aligned"));
            }
            let h = ctx.past_actions.len();
            if h > k {
                return Err(Error::invalid(format!("history of length {h} exceeds K = {k}")));
            }
            if let Some(&a) = ctx.past_actions.iter().find(|&&a| a >= c.n_actions) {
                return Err(Error::invalid(format!("history holds unknown action id {a}")));
            }
            states.extend_from_slice(&ctx.state);
            ids.extend(std::iter::repeat_n(self.pad_id(), k - h));
            ids.extend_from_slice(&ctx.past_actions);
            rewards.extend(std::iter::repeat_n(0.0, k - h));
            rewards.extend_from_slice(&ctx.past_rewards);
        }

        let s = g.constant(Tensor::new(vec![b, self.state_dim], states)?);
        let s_tok = linear(g, p, "pol.state", s)?;
        let s_tok = g.reshape(s_tok, &[b, 1, d])?;

        let seq = if k > 0 {
            let a_tok = g.embedding(p.get("pol.action_emb")?, &ids)?;
            let r = g.constant(Tensor::new(vec![b * k, 1], rewards)?);
            let r_tok = linear(g, p, "pol.reward", r)?;
            let hist = g.add(a_tok, r_tok)?;
            let hist = g.reshape(hist, &[b, k, d])?;
            g.concat(&[hist, s_tok], 1)?
        } else {
            s_tok
        };
        let x = g.add(seq, p.get("pol.pos_emb")?)?;

        let n = layer_norm(g, p, "pol.ln1", x)?;
        let attn = self.attention(g, p, n)?;
        let x = g.add(x, attn)?;

        let n = layer_norm(g, p, "pol.ln2", x)?;
        let h = linear(g, p, "pol.ffn.l1", n)?;
        let h = g.relu(h)?;
        let h = linear(g, p, "pol.ffn.l2", h)?;
        let x = g.add(x, h)?;

        // Select the final position (the current state token).
        let t = k + 1;
        let mut pick = vec![0.0; t];
        pick[t - 1] = 1.0;
        let pick = g.constant(Tensor::new(vec![1, t, 1], pick)?);
        let last = g.mul(x, pick)?;
        let last = g.sum_axis(last, 1, false)?;
        let last = layer_norm(g, p, "pol.ln_f", last)?;
        let logits = linear(g, p, "pol.head", last)?;
        g.softmax(logits, 1)
    }

    fn attention(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let dh = self.config.token_dim / self.config.n_heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let q = g.matmul(x, p.get(&format!("pol.attn.h{h}.q"))?)?;
            let k = g.matmul(x, p.get(&format!("pol.attn.h{h}.k"))?)?;
            let v = g.matmul(x, p.get(&format!("pol.attn.h{h}.v"))?)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, inv)?;
            let w = g.softmax(scores, 2)?;
            heads.push(g.matmul(w, v)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2)? };
        linear(g, p, "pol.attn.out", cat)
    }

    /// Inference-only probabilities, one row per context.
    pub fn probabilities(&self, params: &ParamStore, contexts: &[AgentContext]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let probs = self.forward(&mut g, &p, contexts)?;
        let n = self.config.n_actions;
        Ok(g.value(probs).data().chunks(n).map(<[f64]>::to_vec).collect())
    }
}

//! Symmetric InfoNCE over weak/strong view pairs and the encoder update.

use serde::{Deserialize, Serialize};

use crate::augment::{apply_action, weak_view, ActionKind, Epoch, StrongParams, WeakParams};
use crate::autodiff::{Graph, ParamStore, Sgd, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::rng::derive_seed;

/// Per-anchor InfoNCE losses `[2N]` for unit-norm projections `weak` and
/// `strong` (both `[N, d]`, row `i` of one paired with row `i` of the other).
///
/// Anchor `i` is scored against every other row of the stacked `[2N, d]`
/// batch; its positive is its partner view.
pub fn info_nce_per_anchor(g: &mut Graph, weak: Var, strong: Var, tau: f64) -> Result<Var> {
    let (sw, ss) = (g.shape(weak).to_vec(), g.shape(strong).to_vec());
    if sw.len() != 2 || sw != ss {
        return Err(Error::ShapeMismatch {
            op: "info_nce",
            lhs: sw,
            rhs: ss,
        });
    }
    let z = g.concat(&[weak, strong], 0)?;
    info_nce_stacked(g, z, tau)
}

/// Per-anchor InfoNCE for views already stacked as `[weak; strong]`, `[2N, d]`.
pub fn info_nce_stacked(g: &mut Graph, z: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    let shape = g.shape(z).to_vec();
    if shape.len() != 2 || shape[0] % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "info_nce",
            msg: format!("expected stacked [2N, d] views, got {shape:?}"),
        });
    }
    let n = shape[0] / 2;
    if n < 2 {
        return Err(Error::invalid(format!("info_nce needs at least 2 pairs for negatives, got {n}")));
    }
    let m = 2 * n;
    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / tau)?;

    let mut off_diag = vec![1.0; m * m];
    let mut positive = vec![0.0; m * m];
    for i in 0..m {
        off_diag[i * m + i] = 0.0;
        positive[i * m + (i + n) % m] = 1.0;
    }
    let off_diag = g.constant(Tensor::new(vec![m, m], off_diag)?);
    let positive = g.constant(Tensor::new(vec![m, m], positive)?);

    let e = g.exp(logits)?;
    let e = g.mul(e, off_diag)?;
    let denom = g.sum_axis(e, 1, false)?;
    let log_denom = g.log(denom)?;
    let pos = g.mul(logits, positive)?;
    let pos = g.sum_axis(pos, 1, false)?;
    g.sub(log_denom, pos)
}

/// Mean symmetric InfoNCE loss.
pub fn info_nce(g: &mut Graph, weak: Var, strong: Var, tau: f64) -> Result<Var> {
    let per = info_nce_per_anchor(g, weak, strong, tau)?;
    g.mean_all(per)
}

/// Which view of a sample is embedded for the reward after the encoder update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardView {
    #[default]
    Strong,
    Weak,
    Clean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub tau: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weak: WeakParams,
    pub strong: StrongParams,
    pub reward_view: RewardView,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            tau: 0.5,
            lr: 0.05,
            momentum: 0.0,
            weak: WeakParams::default(),
            strong: StrongParams::default(),
            reward_view: RewardView::Strong,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SslOutcome {
    /// Batch InfoNCE before the update.
    pub loss: f64,
    /// Mean of the two anchor losses of each pair, before the update.
    pub pair_losses: Vec<f64>,
    /// Post-update encoder embeddings of the configured reward view.
    pub reward_embeddings: Tensor,
}

/// One contrastive update: weak and strong views, InfoNCE, backward, SGD on
/// encoder and projector. `seeds[i]` drives every random draw for sample `i`.
pub fn ssl_step(
    encoder: &Encoder,
    params: &mut ParamStore,
    opt: &mut Sgd,
    batch: &[&Epoch],
    actions: &[ActionKind],
    seeds: &[u64],
    cfg: &SslConfig,
) -> Result<SslOutcome> {
    if batch.len() != actions.len() || batch.len() != seeds.len() {
        return Err(Error::invalid(format!(
            "ssl_step needs one action and seed per sample ({} samples, {} actions, {} seeds)",
            batch.len(),
            actions.len(),
            seeds.len()
        )));
    }
    let mut weak = Vec::with_capacity(batch.len());
    let mut strong = Vec::with_capacity(batch.len());
    for ((x, &a), &s) in batch.iter().zip(actions).zip(seeds) {
        weak.push(weak_view(x, &cfg.weak, derive_seed(s, &[0]))?.samples);
        strong.push(apply_action(x, a, &cfg.strong, derive_seed(s, &[1]))?.samples);
    }

    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let both: Vec<&[f64]> = weak.iter().chain(&strong).map(Vec::as_slice).collect();
    let z = encoder.encode(&mut g, &p, &both, false)?;
    let h = encoder.project(&mut g, &p, z)?;
    let n = batch.len();
    let per = info_nce_stacked(&mut g, h, cfg.tau)?;
    let loss = g.mean_all(per)?;
    let loss_value = g.value(loss).item()?;
    let per_v = g.value(per).data();
    let pair_losses = (0..n).map(|i| 0.5 * (per_v[i] + per_v[i + n])).collect();

    g.backward(loss)?;
    let grads = p.gradients(&g);
    opt.step(params, &grads)?;

    let reward_embeddings = match cfg.reward_view {
        RewardView::Strong => encoder.embed(params, &strong)?,
        RewardView::Weak => encoder.embed(params, &weak)?,
        RewardView::Clean => {
            let clean: Vec<&[f64]> = batch.iter().map(|e| e.samples.as_slice()).collect();
            encoder.embed(params, &clean)?
        }
    };
    Ok(SslOutcome {
        loss: loss_value,
        pair_losses,
        reward_embeddings,
    })
}

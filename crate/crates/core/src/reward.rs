//! Soft-KNN consistency score against a labelled reference set.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const NORM_FLOOR: f64 = 1e-12;

/// Labelled embeddings the reward is measured against.
#[derive(Clone, Debug)]
pub struct ReferenceSet {
    /// Row-normalised `[M, d]` embeddings.
    unit: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    n_classes: usize,
}

impl ReferenceSet {
    pub fn new(embeddings: &Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let mut r = ReferenceSet {
            unit: Vec::new(),
            dim: 0,
            labels,
            n_classes,
        };
        if let Some(&bad) = r.labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("reference label {bad} >= n_classes {n_classes}")));
        }
        r.refresh(embeddings)?;
        Ok(r)
    }

    /// Replace the embeddings (same rows, same labels) after an encoder update.
    pub fn refresh(&mut self, embeddings: &Tensor) -> Result<()> {
        if embeddings.rank() != 2 || embeddings.shape()[0] != self.labels.len() {
            return Err(Error::ShapeMismatch {
                op: "reference_set",
                lhs: embeddings.shape().to_vec(),
                rhs: vec![self.labels.len()],
            });
        }
        self.dim = embeddings.shape()[1];
        self.unit = embeddings
            .data()
            .chunks(self.dim.max(1))
            .flat_map(|row| {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
                row.iter().map(move |v| v / n)
            })
            .collect();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Cosine similarity of `z` to every reference row.
    pub fn similarities(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "soft_knn",
                lhs: vec![z.len()],
                rhs: vec![self.dim],
            });
        }
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        Ok(self
            .unit
            .chunks(self.dim.max(1))
            .map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / zn)
            .collect())
    }
}

/// Class probabilities from a temperature softmax over the `k` most similar
/// references. Ties at the cut-off go to the lower reference index.
pub fn soft_knn_class_probs(z: &[f64], refs: &ReferenceSet, k: usize, tau: f64) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    if k == 0 || k > refs.len() {
        return Err(Error::invalid(format!(
            "k_neighbors must be in [1, {}], got {k}",
            refs.len()
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau_knn must be > 0, got {tau}")));
    }
    let sims = refs.similarities(z)?;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let top = &order[..k];
    let max = sims[top[0]];
    let mut probs = vec![0.0; refs.n_classes()];
    let mut total = 0.0;
    for &j in top {
        let w = ((sims[j] - max) / tau).exp();
        probs[refs.labels[j]] += w;
        total += w;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Soft-KNN consistency: probability mass assigned to the true class.
pub fn reward(z: &[f64], y_true: usize, refs: &ReferenceSet, k: usize, tau: f64) -> Result<f64> {
    if y_true >= refs.n_classes() {
        return Err(Error::invalid(format!(
            "class id {y_true} out of range for {} classes",
            refs.n_classes()
        )));
    }
    Ok(soft_knn_class_probs(z, refs, k, tau)?[y_true])
}

/// Sparse counterpart: 1 when the Soft-KNN argmax (lowest id on ties) is the true class.
pub fn accuracy_reward(z: &[f64], y_true: usize, refs: &ReferenceSet, k: usize, tau: f64) -> Result<f64> {
    if y_true >= refs.n_classes() {
        return Err(Error::invalid(format!(
            "class id {y_true} out of range for {} classes",
            refs.n_classes()
        )));
    }
    let p = soft_knn_class_probs(z, refs, k, tau)?;
    let best = p
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
    Ok(if best == y_true { 1.0 } else { 0.0 })
}

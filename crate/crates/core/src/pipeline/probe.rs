//! Linear evaluation: multinomial logistic regression on frozen embeddings.

use serde::Serialize;

use super::config::ProbeConfig;
use super::metrics::{balanced_accuracy, confusion_matrix, macro_f1, per_class, restrict, ClassMetrics, Confusion};
use crate::autodiff::ParamStore;
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{Encoder, EncoderConfig};

#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    pub confusion: Confusion,
    pub classes: Vec<ClassMetrics>,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub warnings: Vec<String>,
}

/// Softmax regression trained by full-batch gradient descent on
/// standardised features. Deterministic: zero initialisation, fixed order.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    mean: Vec<f64>,
    std: Vec<f64>,
    /// `[d + 1, C]`, last row is the bias.
    weights: Vec<f64>,
    dim: usize,
    n_classes: usize,
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("probe needs aligned, non-empty features and labels"));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut std = vec![0.0; d];
        for row in x {
            std.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
        }
        std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-12));
        let mut model = LogisticRegression {
            mean,
            std,
            weights: vec![0.0; (d + 1) * n_classes],
            dim: d,
            n_classes,
        };
        let feats: Vec<Vec<f64>> = x.iter().map(|r| model.features(r)).collect();
        let mut grad = vec![0.0; model.weights.len()];
        for _ in 0..cfg.iterations {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (f, &label) in feats.iter().zip(y) {
                let p = model.softmax(f);
                for (c, pc) in p.iter().enumerate() {
                    let e = pc - if c == label { 1.0 } else { 0.0 };
                    for (j, fj) in f.iter().enumerate() {
                        grad[j * n_classes + c] += e * fj / n;
                    }
                }
            }
            for (i, (w, g)) in model.weights.iter_mut().zip(&grad).enumerate() {
                let decay = if i < d * n_classes { cfg.l2 * *w } else { 0.0 };
                *w -= cfg.lr * (g + decay);
            }
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericOverflow { op: "linear_probe" });
        }
        Ok(model)
    }

    /// Standardised features with a trailing 1 for the bias.
    fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        f.push(1.0);
        f
    }

    fn softmax(&self, f: &[f64]) -> Vec<f64> {
        let c = self.n_classes;
        let mut logits = vec![0.0; c];
        for (j, fj) in f.iter().enumerate() {
            for (k, l) in logits.iter_mut().enumerate() {
                *l += fj * self.weights[j * c + k];
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logits.iter_mut().for_each(|l| *l = (*l - max).exp());
        let total: f64 = logits.iter().sum();
        logits.iter_mut().for_each(|l| *l /= total);
        logits
    }

    /// Most probable class, lowest id on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        assert_eq!(x.len(), self.dim, "feature dimension");
        let p = self.softmax(&self.features(x));
        p.iter()
            .enumerate()
            .fold(0, |best, (i, v)| if *v > p[best] { i } else { best })
    }
}

/// Fit on labelled train-split embeddings, evaluate on the test split.
pub fn linear_probe(encoder_params: &ParamStore, ds: &SplitDataset, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let encoder = Encoder::new(EncoderConfig::infer(encoder_params)?, ds.data.epoch_len)?;
    let labelled = |idx: Vec<usize>| -> Vec<usize> {
        idx.into_iter().filter(|&i| ds.data.epochs[i].label.is_some()).collect()
    };
    let (train, test) = (labelled(ds.train()), labelled(ds.test()));
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "probe needs labelled train and test epochs ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    let embed = |idx: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let samples: Vec<&[f64]> = idx.iter().map(|&i| ds.data.epochs[i].samples.as_slice()).collect();
        let z = encoder.embed(encoder_params, &samples)?;
        let rows = (0..idx.len()).map(|r| z.row(r).to_vec()).collect();
        let labels = idx.iter().map(|&i| ds.data.epochs[i].label.expect("filtered")).collect();
        Ok((rows, labels))
    };
    let (xtr, ytr) = embed(&train)?;
    let (xte, yte) = embed(&test)?;
    let n_classes = ds.data.n_classes;
    let model = LogisticRegression::fit(&xtr, &ytr, n_classes, cfg)?;
    let pred: Vec<usize> = xte.iter().map(|x| model.predict(x)).collect();
    let confusion = confusion_matrix(&yte, &pred, n_classes)?;

    let mut warnings = Vec::new();
    let present: Vec<usize> = (0..n_classes).filter(|&c| confusion[c].iter().sum::<u64>() > 0).collect();
    let scored = if present.len() < n_classes {
        let msg = format!(
            "classes {:?} absent from the test split; metrics use the {} present classes",
            (0..n_classes).filter(|c| !present.contains(c)).collect::<Vec<_>>(),
            present.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
        restrict(&confusion, &present)
    } else {
        confusion.clone()
    };
    Ok(ProbeResult {
        classes: per_class(&confusion)?,
        balanced_accuracy: balanced_accuracy(&scored)?,
        macro_f1: macro_f1(&scored)?,
        confusion,
        n_train: train.len(),
        n_test: test.len(),
        warnings,
    })
}

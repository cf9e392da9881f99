//! Classification metrics over a confusion matrix (rows: true class,
//! columns: predicted class).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Confusion = Vec<Vec<u64>>;

fn check_square(conf: &[Vec<u64>]) -> Result<usize> {
    let c = conf.len();
    if c == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    if conf.iter().any(|r| r.len() != c) {
        return Err(Error::invalid("confusion matrix must be square"));
    }
    Ok(c)
}

/// Confusion matrix from aligned true and predicted class ids.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Confusion> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid("prediction and target lengths differ"));
    }
    let mut conf = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::invalid(format!("class id out of range for {n_classes} classes")));
        }
        conf[t][p] += 1;
    }
    Ok(conf)
}

/// Per-class recall; errors when a class has no true samples.
pub fn recalls(conf: &[Vec<u64>]) -> Result<Vec<f64>> {
    check_square(conf)?;
    conf.iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::invalid(format!("class {i} has no samples")));
            }
            Ok(row[i] as f64 / total as f64)
        })
        .collect()
}

/// Mean per-class recall.
pub fn balanced_accuracy(conf: &[Vec<u64>]) -> Result<f64> {
    let r = recalls(conf)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Precision, recall and F1 per class. Undefined ratios (nothing predicted
/// or nothing present) are reported as 0.
pub fn per_class(conf: &[Vec<u64>]) -> Result<Vec<ClassMetrics>> {
    let c = check_square(conf)?;
    Ok((0..c)
        .map(|i| {
            let tp = conf[i][i] as f64;
            let support: u64 = conf[i].iter().sum();
            let predicted: u64 = conf.iter().map(|r| r[i]).sum();
            let ratio = |n: f64, d: u64| if d == 0 { 0.0 } else { n / d as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            // 2PR/(P+R) written on counts: one rounding instead of five
            let f1 = ratio(2.0 * tp, 2 * conf[i][i] + (predicted - conf[i][i]) + (support - conf[i][i]));
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect())
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(conf: &[Vec<u64>]) -> Result<f64> {
    let m = per_class(conf)?;
    for (i, cm) in m.iter().enumerate() {
        let predicted: u64 = conf.iter().map(|r| r[i]).sum();
        if cm.support == 0 && predicted == 0 {
            log::warn!("class {i} is neither present nor predicted; its F1 counts as 0");
        }
    }
    Ok(m.iter().map(|c| c.f1).sum::<f64>() / m.len() as f64)
}

/// Restrict a confusion matrix to the given classes (rows and columns).
pub fn restrict(conf: &[Vec<u64>], classes: &[usize]) -> Confusion {
    classes
        .iter()
        .map(|&i| classes.iter().map(|&j| conf[i][j]).collect())
        .collect()
}

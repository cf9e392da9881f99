//! Subject-level train/test partition and the labelled/reference subsets.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::augment::Epoch;
use crate::error::{Error, Result};
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Test,
}

/// Role of one epoch after splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochTag {
    pub partition: Partition,
    /// Label may be read by the agent-training phase and the probe.
    pub labeled: bool,
    /// Part of the reward reference set (always also labelled).
    pub reference: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub labeled_frac: f64,
    /// Share of the labelled subset used as the reward reference set.
    pub reference_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_frac: 0.8,
            labeled_frac: 0.10,
            reference_frac: 0.20,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_frac", self.train_frac),
            ("labeled_frac", self.labeled_frac),
            ("reference_frac", self.reference_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A dataset with one tag per epoch.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub data: Dataset,
    pub tags: Vec<EpochTag>,
}

impl SplitDataset {
    fn indices(&self, f: impl Fn(&EpochTag) -> bool) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| f(&self.tags[i])).collect()
    }

    pub fn train(&self) -> Vec<usize> {
        self.indices(|t| t.partition == Partition::Train)
    }

    pub fn test(&self) -> Vec<usize> {
        self.indices(|t| t.partition == Partition::Test)
    }

    pub fn labeled(&self) -> Vec<usize> {
        self.indices(|t| t.labeled)
    }

    pub fn reference(&self) -> Vec<usize> {
        self.indices(|t| t.reference)
    }

    /// Labelled train epochs outside the reference set: the agent's batches.
    pub fn agent_pool(&self) -> Vec<usize> {
        self.indices(|t| t.labeled && !t.reference)
    }

    /// Label-free view of the train partition.
    pub fn unlabeled_train(&self) -> UnlabeledView {
        UnlabeledView::new(self.train().into_iter().map(|i| &self.data.epochs[i]))
    }
}

/// Epochs with labels stripped: code holding only this type cannot read them.
#[derive(Clone, Debug)]
pub struct UnlabeledView {
    epochs: Vec<Epoch>,
}

impl UnlabeledView {
    pub fn new<'a>(epochs: impl IntoIterator<Item = &'a Epoch>) -> Self {
        UnlabeledView {
            epochs: epochs
                .into_iter()
                .map(|e| Epoch::new(e.samples.clone(), None, e.subject_id))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn get(&self, i: usize) -> &Epoch {
        &self.epochs[i]
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }
}

fn round_share(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n)
}

/// Subject-level partition (`round(train_frac·S)` subjects to train, at least
/// one on each side), then a per-class `labeled_frac` of train epochs marked
/// labelled, then a per-class `reference_frac` of those (at least one per
/// class) marked as reference. Epochs with hidden labels are never labelled.
pub fn split(ds: Dataset, cfg: &SplitConfig, seed: u64) -> Result<SplitDataset> {
    cfg.validate()?;
    let subjects: Vec<u32> = ds
        .epochs
        .iter()
        .map(|e| e.subject_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "subject-level split needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let mut order = subjects.clone();
    order.shuffle(&mut child_rng(seed, &[0]));
    let n_train = round_share(subjects.len(), cfg.train_frac).clamp(1, subjects.len() - 1);
    let train_subjects: BTreeSet<u32> = order[..n_train].iter().copied().collect();

    let mut tags: Vec<EpochTag> = ds
        .epochs
        .iter()
        .map(|e| EpochTag {
            partition: if train_subjects.contains(&e.subject_id) {
                Partition::Train
            } else {
                Partition::Test
            },
            labeled: false,
            reference: false,
        })
        .collect();

    for class in 0..ds.n_classes {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| tags[i].partition == Partition::Train && ds.epochs[i].label == Some(class))
            .collect();
        members.shuffle(&mut child_rng(seed, &[1, class as u64]));
        let n_labeled = round_share(members.len(), cfg.labeled_frac);
        members.truncate(n_labeled);
        let n_ref = round_share(n_labeled, cfg.reference_frac).max(n_labeled.min(1));
        for (j, &i) in members.iter().enumerate() {
            tags[i].labeled = true;
            tags[i].reference = j < n_ref;
        }
    }
    Ok(SplitDataset { data: ds, tags })
}

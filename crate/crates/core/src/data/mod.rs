//! Datasets: synthetic generation, preprocessing, subject-level splits and
//! the binary dataset file.

mod io;
mod preprocess;
mod split;
mod synth;

pub use io::{decode, encode, load, save, MAGIC, VERSION};
pub use preprocess::{bandpass, preprocess_recording, window, z_normalize, Band};
pub use split::{split, EpochTag, Partition, SplitConfig, SplitDataset, UnlabeledView};
pub use synth::{synth_generate, SyntheticTask, SyntheticTaskSpec};

use crate::augment::Epoch;
use crate::error::{Error, Result};

/// A collection of equal-length epochs with shared metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub epochs: Vec<Epoch>,
    pub n_classes: usize,
    pub sample_rate: f64,
    pub epoch_len: usize,
}

impl Dataset {
    /// Checks lengths and label ranges.
    pub fn new(epochs: Vec<Epoch>, n_classes: usize, sample_rate: f64, epoch_len: usize) -> Result<Self> {
        let ds = Dataset {
            epochs,
            n_classes,
            sample_rate,
            epoch_len,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.epoch_len == 0 {
            return Err(Error::invalid("dataset needs n_classes >= 1 and epoch_len >= 1"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::invalid(format!("invalid sample rate {}", self.sample_rate)));
        }
        for (i, e) in self.epochs.iter().enumerate() {
            if e.len() != self.epoch_len {
                return Err(Error::invalid(format!(
                    "epoch {i} has {} samples, expected {}",
                    e.len(),
                    self.epoch_len
                )));
            }
            if let Some(l) = e.label.filter(|&l| l >= self.n_classes) {
                return Err(Error::invalid(format!(
                    "epoch {i} label {l} >= n_classes {}",
                    self.n_classes
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Copy with every label hidden.
    pub fn without_labels(&self) -> Dataset {
        let mut ds = self.clone();
        ds.epochs.iter_mut().for_each(|e| e.label = None);
        ds
    }

    /// Epoch count per class, ignoring hidden labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for l in self.epochs.iter().filter_map(|e| e.label) {
            counts[l] += 1;
        }
        counts
    }
}

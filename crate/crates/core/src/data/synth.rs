//! Synthetic tasks whose label-preserving augmentation is known by construction.
//!
//! `GlobalContext`: the class is carried by a linear trend spanning the whole
//! epoch (its sign) and the frequency of a carrier riding on it. Every epoch
//! contains one zeroed dropout span, so masked views stay in distribution.
//! Cropping and warping change the carrier frequency, flipping inverts the
//! trend, and permuting breaks it.
//!
//! `LocalPattern`: the class is carried by a short transient near the middle
//! of the epoch (bump or bi-phasic wave, either polarity) at a random width.
//! Masking can erase it, flipping swaps the bi-phasic classes, and
//! permutation cuts it at the central segment boundary.
//!
//! Each subject adds its own gain, rate and phase nuisance.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::preprocess::z_normalize;
use super::Dataset;
use crate::augment::Epoch;
use crate::error::{Error, Result};
use crate::rng::{child_rng, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    GlobalContext,
    LocalPattern,
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "globalcontext" | "global" => Ok(SyntheticTask::GlobalContext),
            "localpattern" | "local" => Ok(SyntheticTask::LocalPattern),
            _ => Err(Error::Config(format!(
                "unknown synthetic task {s:?} (expected global_context or local_pattern)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub task: SyntheticTask,
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    pub epoch_len: usize,
    pub n_classes: usize,
    pub noise_level: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            task: SyntheticTask::GlobalContext,
            n_subjects: 10,
            epochs_per_subject: 200,
            epoch_len: 128,
            n_classes: 4,
            noise_level: 0.2,
            sample_rate: 32.0,
            seed: 0,
        }
    }
}

/// Number of distinct class templates each task defines.
pub const MAX_CLASSES: usize = 4;

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.epochs_per_subject == 0 {
            return Err(Error::Config("synthetic task needs subjects and epochs".into()));
        }
        if !(2..=MAX_CLASSES).contains(&self.n_classes) {
            return Err(Error::Config(format!(
                "synthetic n_classes must be in [2, {MAX_CLASSES}], got {}",
                self.n_classes
            )));
        }
        if self.epoch_len < 32 {
            return Err(Error::Config(format!(
                "synthetic epoch_len must be >= 32, got {}",
                self.epoch_len
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("noise_level must be >= 0, got {}", self.noise_level)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!("invalid sample rate {}", self.sample_rate)));
        }
        Ok(())
    }
}

const GC_CYCLES: f64 = 6.0;
const GC_TREND: f64 = 4.0;
const LP_AMP: f64 = 3.0;
const LP_SCALE_RANGE: f64 = 2.0;

/// Per-subject nuisance parameters.
struct Subject {
    gain: f64,
    phase: f64,
    rate: f64,
}

/// Generate a class-balanced dataset (labels cycle through the classes in
/// generation order). Epochs are z-normalised and rounded to `f32` precision
/// so they survive the dataset file bit-exactly.
pub fn synth_generate(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut epochs = Vec::with_capacity(spec.n_subjects * spec.epochs_per_subject);
    for s in 0..spec.n_subjects {
        let mut srng = child_rng(spec.seed, &[0, s as u64]);
        let subject = Subject {
            gain: srng.gen_range(0.7..1.3),
            phase: srng.gen_range(0.0..2.0 * PI),
            rate: srng.gen_range(0.95..1.05),
        };
        for j in 0..spec.epochs_per_subject {
            let k = s * spec.epochs_per_subject + j;
            let class = k % spec.n_classes;
            let mut rng = child_rng(spec.seed, &[1, k as u64]);
            let raw = match spec.task {
                SyntheticTask::GlobalContext => global_context(class, spec, &subject, &mut rng),
                SyntheticTask::LocalPattern => local_pattern(class, spec, &subject, &mut rng),
            };
            let (z, _) = z_normalize(&raw);
            let samples = z.into_iter().map(|v| v as f32 as f64).collect();
            epochs.push(Epoch::new(samples, Some(class), s as u32));
        }
    }
    Dataset::new(epochs, spec.n_classes, spec.sample_rate as f32 as f64, spec.epoch_len)
}

fn noise(rng: &mut Rng, n: usize, level: f64) -> Vec<f64> {
    (0..n).map(|_| level * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn global_context(class: usize, spec: &SyntheticTaskSpec, subj: &Subject, rng: &mut Rng) -> Vec<f64> {
    let n = spec.epoch_len;
    let cycles = [GC_CYCLES, GC_CYCLES, 1.5 * GC_CYCLES, 1.5 * GC_CYCLES][class] * subj.rate * rng.gen_range(0.97..1.03);
    let dir = if class % 2 == 0 { 1.0 } else { -1.0 };
    let phase = subj.phase + rng.gen_range(0.0..2.0 * PI);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let th = 2.0 * PI * cycles * i as f64 / n as f64 + phase;
            let t = i as f64 / (n - 1) as f64 - 0.5;
            subj.gain * (th.sin() + dir * GC_TREND * t)
        })
        .collect();
    let len = rng.gen_range(n / 10..=3 * n / 10);
    let start = rng.gen_range(0..=n - len);
    x[start..start + len].iter_mut().for_each(|v| *v = 0.0);
    x.iter_mut().zip(noise(rng, n, spec.noise_level)).for_each(|(v, e)| *v += e);
    x
}

/// Class transient at unit scale, `u` in `[-1, 1]`: a positive or negative
/// bump, or a bi-phasic wave of either polarity.
fn transient(class: usize, u: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(u - c).powi(2) / (2.0 * w * w)).exp();
    let w = 0.2;
    let bi = bump(-1.5 * w, w) - bump(1.5 * w, w);
    match class {
        0 => bump(0.0, 2.0 * w),
        1 => -bump(0.0, 2.0 * w),
        2 => bi,
        _ => -bi,
    }
}

fn local_pattern(class: usize, spec: &SyntheticTaskSpec, subj: &Subject, rng: &mut Rng) -> Vec<f64> {
    let n = spec.epoch_len as f64;
    let center = n / 2.0 + rng.gen_range(-n / 32.0..n / 32.0);
    let half_width = n / 16.0 * rng.gen_range(0.0..LP_SCALE_RANGE.ln()).exp();
    let mut x = noise(rng, spec.epoch_len, spec.noise_level);
    let amp = LP_AMP * subj.gain;
    let shift = (subj.phase / PI - 1.0) * n / 64.0;
    for (i, v) in x.iter_mut().enumerate() {
        let u = (i as f64 - center - shift) / half_width;
        if u.abs() <= 1.0 {
            *v += amp * transient(class, u);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        for task in [SyntheticTask::GlobalContext, SyntheticTask::LocalPattern] {
            let spec = SyntheticTaskSpec {
                task,
                n_subjects: 3,
                epochs_per_subject: 7,
                n_classes: 4,
                ..Default::default()
            };
            let a = synth_generate(&spec).unwrap();
            assert_eq!(a, synth_generate(&spec).unwrap());
            let counts = a.class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn task_names_parse() {
        assert_eq!("global_context".parse::<SyntheticTask>().unwrap(), SyntheticTask::GlobalContext);
        assert_eq!("LocalPattern".parse::<SyntheticTask>().unwrap(), SyntheticTask::LocalPattern);
        assert!("other".parse::<SyntheticTask>().is_err());
    }
}

//! Strong and weak augmentation kernels for single-channel epochs.
//!
//! The five strong kernels form the agent's action space; the weak view
//! (scale followed by jitter) is the contrastive anchor. Every kernel maps a
//! length-`L` epoch to a length-`L` epoch and is fully determined by its
//! input, parameters and seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// One fixed-length signal window.
#[derive(Clone, Debug, PartialEq)]
pub struct Epoch {
    pub samples: Vec<f64>,
    pub label: Option<usize>,
    pub subject_id: u32,
}

impl Epoch {
    pub fn new(samples: Vec<f64>, label: Option<usize>, subject_id: u32) -> Self {
        Epoch {
            samples,
            label,
            subject_id,
        }
    }

    /// Unlabelled epoch with subject 0, handy for tests and one-off signals.
    pub fn from_samples(samples: Vec<f64>) -> Self {
        Self::new(samples, None, 0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<f64>) -> Epoch {
        Epoch {
            samples,
            label: self.label,
            subject_id: self.subject_id,
        }
    }
}

/// The strong-augmentation action space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    TimeMasking,
    TimePermutation,
    CropResize,
    TimeFlip,
    TimeWarp,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::TimeMasking,
        ActionKind::TimePermutation,
        ActionKind::CropResize,
        ActionKind::TimeFlip,
        ActionKind::TimeWarp,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown action id {i}")))
    }

    pub fn short_name(self) -> &'static str {
        match self {
            ActionKind::TimeMasking => "mask",
            ActionKind::TimePermutation => "perm",
            ActionKind::CropResize => "crop",
            ActionKind::TimeFlip => "flip",
            ActionKind::TimeWarp => "warp",
        }
    }
}

/// Intensity parameters for the strong kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrongParams {
    pub mask_ratio: f64,
    pub n_segments: usize,
    pub crop_fraction: f64,
    pub warp_knots: usize,
    pub warp_max_speed: f64,
}

impl Default for StrongParams {
    fn default() -> Self {
        StrongParams {
            mask_ratio: 0.25,
            n_segments: 4,
            crop_fraction: 0.5,
            warp_knots: 4,
            warp_max_speed: 2.0,
        }
    }
}

/// Weak-view intensities: jitter standard deviation and scaling half-range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakParams {
    pub jitter_sigma: f64,
    pub scale_delta: f64,
}

impl Default for WeakParams {
    fn default() -> Self {
        WeakParams {
            jitter_sigma: 0.01,
            scale_delta: 0.02,
        }
    }
}

/// Concrete sampled parameters of a strong kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionParams {
    Mask { start: usize, len: usize },
    Permute { order: Vec<usize> },
    Crop { start: usize, len: usize },
    Flip,
    /// Speed of each knot; knot `k` governs the `k`-th equal-length piece of the output.
    Warp { speeds: Vec<f64> },
}

/// A strong augmentation together with the parameters it was sampled with.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationAction {
    pub kind: ActionKind,
    pub params: ActionParams,
}

impl AugmentationAction {
    /// Draw parameters for `kind` from `(seed, len)` alone.
    pub fn sample(kind: ActionKind, len: usize, params: &StrongParams, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let p = match kind {
            ActionKind::TimeMasking => {
                check_unit("mask_ratio", params.mask_ratio)?;
                let span = (params.mask_ratio * len as f64).floor() as usize;
                let span = span.min(len);
                let start = rng.gen_range(0..=len - span);
                ActionParams::Mask { start, len: span }
            }
            ActionKind::TimePermutation => {
                if params.n_segments == 0 || params.n_segments > len {
                    return Err(Error::invalid(format!(
                        "n_segments must be in [1, {len}], got {}",
                        params.n_segments
                    )));
                }
                let mut order: Vec<usize> = (0..params.n_segments).collect();
                order.shuffle(&mut rng);
                ActionParams::Permute { order }
            }
            ActionKind::CropResize => {
                check_unit("crop_fraction", params.crop_fraction)?;
                let w = ((params.crop_fraction * len as f64).ceil() as usize).clamp(1, len.max(1));
                let start = rng.gen_range(0..=len.saturating_sub(w));
                ActionParams::Crop { start, len: w }
            }
            ActionKind::TimeFlip => ActionParams::Flip,
            ActionKind::TimeWarp => {
                if params.warp_knots < 2 {
                    return Err(Error::invalid(format!(
                        "warp needs at least 2 knots, got {}",
                        params.warp_knots
                    )));
                }
                if !(params.warp_max_speed >= 1.0 && params.warp_max_speed.is_finite()) {
                    return Err(Error::invalid(format!(
                        "warp max speed ratio must be >= 1, got {}",
                        params.warp_max_speed
                    )));
                }
                let ln_r = params.warp_max_speed.ln();
                let speeds = (0..params.warp_knots)
                    .map(|_| {
                        if ln_r == 0.0 {
                            1.0
                        } else {
                            rng.gen_range(-ln_r..=ln_r).exp()
                        }
                    })
                    .collect();
                ActionParams::Warp { speeds }
            }
        };
        Ok(AugmentationAction { kind, params: p })
    }

    pub fn apply(&self, x: &Epoch) -> Result<Epoch> {
        let s = &x.samples;
        let out = match &self.params {
            ActionParams::Mask { start, len } => mask_span(s, *start, *len)?,
            ActionParams::Permute { order } => permute_segments(s, order)?,
            ActionParams::Crop { start, len } => crop_window(s, *start, *len)?,
            ActionParams::Flip => s.iter().rev().copied().collect(),
            ActionParams::Warp { speeds } => warp_with_speeds(s, speeds)?,
        };
        Ok(x.with_samples(out))
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::invalid(format!("{name} must be in (0, 1], got {v}")));
    }
    Ok(())
}

/// Zero `len` samples starting at `start`.
pub fn mask_span(x: &[f64], start: usize, len: usize) -> Result<Vec<f64>> {
    if start + len > x.len() {
        return Err(Error::invalid(format!(
            "mask [{start}, {}) exceeds length {}",
            start + len,
            x.len()
        )));
    }
    let mut out = x.to_vec();
    out[start..start + len].iter_mut().for_each(|v| *v = 0.0);
    Ok(out)
}

/// Boundaries of `n` near-equal contiguous segments of a length-`len` signal.
pub fn segment_bounds(len: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| i * len / n).collect()
}

/// Reassemble segments in `order` (a permutation of `0..order.len()`).
pub fn permute_segments(x: &[f64], order: &[usize]) -> Result<Vec<f64>> {
    let n = order.len();
    if n == 0 || n > x.len() {
        return Err(Error::invalid(format!("segment count {n} invalid for length {}", x.len())));
    }
    let mut seen = vec![false; n];
    for &o in order {
        if o >= n || std::mem::replace(&mut seen[o], true) {
            return Err(Error::invalid(format!("{order:?} is not a permutation")));
        }
    }
    let b = segment_bounds(x.len(), n);
    Ok(order.iter().flat_map(|&o| x[b[o]..b[o + 1]].iter().copied()).collect())
}

/// Linear interpolation of `x` at fractional position `pos`.
#[inline]
fn interp(x: &[f64], pos: f64) -> f64 {
    let last = x.len() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let i = (pos.floor() as usize).min(last);
    if i == last {
        return x[last];
    }
    let f = pos - i as f64;
    let (a, b) = (x[i], x[i + 1]);
    a + f * (b - a)
}

/// Resample `x[start..start+len]` back to `x.len()` samples by linear interpolation.
pub fn crop_window(x: &[f64], start: usize, len: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if len == 0 || start + len > n {
        return Err(Error::invalid(format!("crop [{start}, {}) invalid for length {n}", start + len)));
    }
    let win = &x[start..start + len];
    if n == 1 {
        return Ok(win.to_vec());
    }
    let span = (len - 1) as f64;
    let denom = (n - 1) as f64;
    Ok((0..n).map(|j| interp(win, j as f64 * span / denom)).collect())
}

/// Source knot positions of the piecewise-linear time map for `speeds`.
fn warp_source_knots(n: usize, speeds: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pieces = speeds.len();
    let last = (n - 1) as f64;
    let out_knots: Vec<f64> = (0..=pieces).map(|k| k as f64 * last / pieces as f64).collect();
    let mut cum = vec![0.0; pieces + 1];
    for k in 0..pieces {
        cum[k + 1] = cum[k] + speeds[k] * (out_knots[k + 1] - out_knots[k]);
    }
    let total = cum[pieces];
    let mut src: Vec<f64> = cum.iter().map(|c| c * last / total).collect();
    src[pieces] = last;
    (out_knots, src)
}

/// Resample `x` through the strictly increasing time map defined by
/// per-piece `speeds`; endpoints stay fixed.
pub fn warp_with_speeds(x: &[f64], speeds: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if speeds.is_empty() || speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("warp speeds must be positive, got {speeds:?}")));
    }
    if n < 2 || speeds.iter().all(|&s| s == speeds[0]) {
        return Ok(x.to_vec());
    }
    let (ok, src) = warp_source_knots(n, speeds);
    let mut piece = 0;
    Ok((0..n)
        .map(|j| {
            let t = j as f64;
            while piece + 1 < speeds.len() && t > ok[piece + 1] {
                piece += 1;
            }
            let f = (t - ok[piece]) / (ok[piece + 1] - ok[piece]);
            interp(x, (1.0 - f) * src[piece] + f * src[piece + 1])
        })
        .collect())
}

pub fn time_masking(x: &Epoch, mask_ratio: f64, seed: u64) -> Result<Epoch> {
    let p = StrongParams {
        mask_ratio,
        ..StrongParams::default()
    };
    AugmentationAction::sample(ActionKind::TimeMasking, x.len(), &p, seed)?.apply(x)
}

pub fn time_permutation(x: &Epoch, n_segments: usize, seed: u64) -> Result<Epoch> {
    let p = StrongParams {
        n_segments,
        ..StrongParams::default()
    };
    AugmentationAction::sample(ActionKind::TimePermutation, x.len(), &p, seed)?.apply(x)
}

pub fn crop_resize(x: &Epoch, crop_fraction: f64, seed: u64) -> Result<Epoch> {
    let p = StrongParams {
        crop_fraction,
        ..StrongParams::default()
    };
    AugmentationAction::sample(ActionKind::CropResize, x.len(), &p, seed)?.apply(x)
}

pub fn time_flip(x: &Epoch) -> Epoch {
    x.with_samples(x.samples.iter().rev().copied().collect())
}

pub fn time_warp(x: &Epoch, n_knots: usize, max_speed_ratio: f64, seed: u64) -> Result<Epoch> {
    let p = StrongParams {
        warp_knots: n_knots,
        warp_max_speed: max_speed_ratio,
        ..StrongParams::default()
    };
    AugmentationAction::sample(ActionKind::TimeWarp, x.len(), &p, seed)?.apply(x)
}

/// Add N(0, sigma²) noise to every sample.
pub fn jitter(x: &Epoch, sigma: f64, seed: u64) -> Result<Epoch> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("jitter sigma must be >= 0, got {sigma}")));
    }
    let mut rng = rng_from(seed);
    let out = x
        .samples
        .iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect();
    Ok(x.with_samples(out))
}

/// Multiply by one factor drawn uniformly from `[1 - max_delta, 1 + max_delta]`.
pub fn scale(x: &Epoch, max_delta: f64, seed: u64) -> Result<Epoch> {
    if !(max_delta >= 0.0 && max_delta.is_finite()) {
        return Err(Error::invalid(format!("scale max_delta must be >= 0, got {max_delta}")));
    }
    let mut rng = rng_from(seed);
    let u: f64 = rng.gen();
    let factor = 1.0 + max_delta * (2.0 * u - 1.0);
    Ok(x.with_samples(x.samples.iter().map(|v| v * factor).collect()))
}

/// Anchor view: scaling then jitter, with child seeds split from `seed`.
pub fn weak_view(x: &Epoch, params: &WeakParams, seed: u64) -> Result<Epoch> {
    let scaled = scale(x, params.scale_delta, derive_seed(seed, &[0]))?;
    jitter(&scaled, params.jitter_sigma, derive_seed(seed, &[1]))
}

/// Sample parameters for `kind` and apply them.
pub fn apply_action(x: &Epoch, kind: ActionKind, params: &StrongParams, seed: u64) -> Result<Epoch> {
    AugmentationAction::sample(kind, x.len(), params, seed)?.apply(x)
}

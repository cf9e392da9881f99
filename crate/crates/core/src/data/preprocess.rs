//! Band-pass filtering, z-normalisation and windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pass band in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Default for Band {
    fn default() -> Self {
        Band {
            low_hz: 0.5,
            high_hz: 40.0,
        }
    }
}

/// Normalised biquad `[b0, b1, b2, a1, a2]`.
#[derive(Clone, Copy, Debug)]
struct Biquad([f64; 5]);

/// Q of the two second-order sections of a 4th-order Butterworth.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

impl Biquad {
    fn new(kind: Pass, f0: f64, fs: f64, q: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        let (b0, b1) = match kind {
            Pass::Low => ((1.0 - c) / 2.0, 1.0 - c),
            Pass::High => ((1.0 + c) / 2.0, -(1.0 + c)),
        };
        Biquad([b0 / a0, b1 / a0, b0 / a0, -2.0 * c / a0, (1.0 - alpha) / a0])
    }

    fn dc_gain(&self) -> f64 {
        let [b0, b1, b2, a1, a2] = self.0;
        (b0 + b1 + b2) / (1.0 + a1 + a2)
    }

    /// Transposed direct-form-II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let [b0, _, b2, _, a2] = self.0;
        let y = self.dc_gain();
        [y - b0, b2 - a2 * y]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2, a1, a2] = self.0;
        for v in x.iter_mut() {
            let y = b0 * *v + z[0];
            z[0] = b1 * *v - a1 * y + z[1];
            z[1] = b2 * *v - a2 * y;
            *v = y;
        }
    }
}

#[derive(Clone, Copy)]
enum Pass {
    Low,
    High,
}

/// Cascade run with steady-state initial conditions scaled to `x[0]`.
fn sos_filter(sections: &[Biquad], x: &mut [f64]) {
    let mut level = x[0];
    for s in sections {
        let [z0, z1] = s.step_state();
        s.run(x, [z0 * level, z1 * level]);
        level *= s.dc_gain();
    }
}

/// Order of the autoregressive model that extends each edge.
const AR_ORDER: usize = 16;
const AR_RIDGE: f64 = 1e-10;

/// Forward-backward least-squares AR fit: `x[t] ≈ Σ_k c[k]·x[t-1-k]`.
/// Returns `None` when the segment is too short or the system is degenerate.
fn ar_fit(x: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = x.len();
    if n < 4 * order {
        return None;
    }
    let mut g = vec![0.0; order * order];
    let mut r = vec![0.0; order];
    let mut accumulate = |row: &mut dyn Iterator<Item = f64>, target: f64| {
        let row: Vec<f64> = row.collect();
        for i in 0..order {
            r[i] += row[i] * target;
            for j in 0..=i {
                g[i * order + j] += row[i] * row[j];
            }
        }
    };
    for t in order..n {
        accumulate(&mut (1..=order).map(|k| x[t - k]), x[t]);
    }
    for t in 0..n - order {
        accumulate(&mut (1..=order).map(|k| x[t + k]), x[t]);
    }
    let trace: f64 = (0..order).map(|i| g[i * order + i]).sum();
    if !(trace > 0.0 && trace.is_finite()) {
        return None;
    }
    for i in 0..order {
        g[i * order + i] += AR_RIDGE * trace / order as f64;
    }
    cholesky_solve(&mut g, &mut r, order).then_some(r)
}

/// Solve `G·c = r` in place for symmetric positive definite `G` given by
/// its lower triangle.
fn cholesky_solve(g: &mut [f64], r: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let d = g[j * n + j] - (0..j).map(|k| g[j * n + k].powi(2)).sum::<f64>();
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        g[j * n + j] = d;
        for i in j + 1..n {
            let s = g[i * n + j] - (0..j).map(|k| g[i * n + k] * g[j * n + k]).sum::<f64>();
            g[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        r[i] = (r[i] - (0..i).map(|k| g[i * n + k] * r[k]).sum::<f64>()) / g[i * n + i];
    }
    for i in (0..n).rev() {
        r[i] = (r[i] - (i + 1..n).map(|k| g[k * n + i] * r[k]).sum::<f64>()) / g[i * n + i];
    }
    true
}

/// `len` samples continuing `seg` past its end, faded to zero over the
/// second half. `None` if the model is unavailable or the prediction runs away.
fn ar_extend(seg: &[f64], len: usize) -> Option<Vec<f64>> {
    let c = ar_fit(seg, AR_ORDER)?;
    let peak = seg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut buf: Vec<f64> = seg[seg.len() - AR_ORDER..].to_vec();
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let v: f64 = c.iter().enumerate().map(|(k, ck)| ck * buf[buf.len() - 1 - k]).sum();
        if !v.is_finite() || v.abs() > 10.0 * peak.max(f64::MIN_POSITIVE) {
            return None;
        }
        buf.push(v);
        let u = (2.0 - 2.0 * (i + 1) as f64 / len as f64).clamp(0.0, 1.0);
        out.push(v * (0.5 - 0.5 * (std::f64::consts::PI * u).cos()));
    }
    Some(out)
}

/// Edge extensions `(left, right)`: AR continuation when the recording is
/// long enough to fit one, odd reflection otherwise.
fn edge_extensions(x: &[f64], sample_rate: f64, low_hz: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let fit = ((2.0 * sample_rate / low_hz).ceil() as usize).min(n);
    let pad = (10.0 * sample_rate / low_hz).ceil() as usize;
    let tail = &x[n - fit..];
    let head: Vec<f64> = x[..fit].iter().rev().copied().collect();
    if let (Some(right), Some(mut left)) = (ar_extend(tail, pad), ar_extend(&head, pad)) {
        left.reverse();
        return (left, right);
    }
    let pad = (n - 1).min(((3.0 * sample_rate / low_hz).ceil() as usize).max(27));
    let (first, last) = (x[0], x[n - 1]);
    (
        (1..=pad).rev().map(|i| 2.0 * first - x[i]).collect(),
        (1..=pad).map(|i| 2.0 * last - x[n - 1 - i]).collect(),
    )
}

/// Zero-phase 4th-order Butterworth band-pass (high-pass then low-pass
/// sections run forward and backward). Edges are extended by an
/// autoregressive prediction so in-band content passes through unchanged
/// up to the boundaries.
pub fn bandpass(x: &[f64], band: Band, sample_rate: f64) -> Result<Vec<f64>> {
    let Band { low_hz, high_hz } = band;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate / 2.0) {
        return Err(Error::invalid(format!(
            "band must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} at fs {sample_rate}"
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("bandpass needs at least 2 samples"));
    }
    let mut sections = Vec::with_capacity(4);
    for q in BUTTER4_Q {
        sections.push(Biquad::new(Pass::High, low_hz, sample_rate, q));
    }
    for q in BUTTER4_Q {
        sections.push(Biquad::new(Pass::Low, high_hz, sample_rate, q));
    }

    let (left, right) = edge_extensions(x, sample_rate, low_hz);
    let mut ext = Vec::with_capacity(left.len() + x.len() + right.len());
    ext.extend_from_slice(&left);
    ext.extend_from_slice(x);
    ext.extend_from_slice(&right);

    sos_filter(&sections, &mut ext);
    ext.reverse();
    sos_filter(&sections, &mut ext);
    ext.reverse();
    Ok(ext[left.len()..left.len() + x.len()].to_vec())
}

const STD_FLOOR: f64 = 1e-12;

/// Zero mean, unit population standard deviation. A constant input yields
/// zeros and `true` in the second slot.
pub fn z_normalize(x: &[f64]) -> (Vec<f64>, bool) {
    if x.is_empty() {
        return (Vec::new(), true);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < STD_FLOOR {
        return (vec![0.0; x.len()], true);
    }
    (x.iter().map(|v| (v - mean) / std).collect(), false)
}

/// Non-overlapping windows of `round(window_sec·fs)` samples; the trailing
/// remainder is dropped.
pub fn window(recording: &[f64], window_sec: f64, sample_rate: f64) -> Result<Vec<Vec<f64>>> {
    let w = (window_sec * sample_rate).round();
    if !(w >= 1.0 && w.is_finite()) {
        return Err(Error::invalid(format!(
            "window of {window_sec} s at {sample_rate} Hz is empty"
        )));
    }
    let w = w as usize;
    if recording.len() < w {
        return Err(Error::invalid(format!(
            "recording of {} samples is shorter than one {w}-sample window",
            recording.len()
        )));
    }
    Ok(recording.chunks_exact(w).map(<[f64]>::to_vec).collect())
}

/// Filter, window, then z-normalise each window. Returns the epochs and the
/// number of constant windows that were zeroed.
pub fn preprocess_recording(
    recording: &[f64],
    band: Band,
    window_sec: f64,
    sample_rate: f64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let filtered = bandpass(recording, band, sample_rate)?;
    let mut flagged = 0;
    let epochs = window(&filtered, window_sec, sample_rate)?
        .into_iter()
        .map(|w| {
            let (z, constant) = z_normalize(&w);
            flagged += constant as usize;
            z
        })
        .collect();
    Ok((epochs, flagged))
}

//! Beat segmentation, overlapping windows and Poisson spike encoding.
//!
//! A heartbeat is cut 0.25 s before and 0.45 s after its R peak, split into Q
//! equal-length overlapping windows, and every sample is encoded by a pair of
//! polarity cells: the matching-sign cell fires a Bernoulli spike each step
//! with probability min(1, (r_base + r_scale*|x|)*dt), the opposite cell at
//! the baseline rate only. Positive trains feed the odd windows of the next
//! layer, negative trains the even windows, giving 2Q spike channels per
//! beat.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lif::SpikeTrain;

/// A segmented heartbeat.
#[derive(Clone, Debug, PartialEq)]
pub struct Beat {
    pub samples: Vec<f64>,
    /// Sampling rate of the source signal (Hz).
    pub fs: f64,
    /// Index of the R peak within `samples`.
    pub r_index: usize,
    /// Class name, when the source annotation mapped to one.
    pub label: Option<String>,
    /// Source record id, for per-record reporting. Empty for ad-hoc beats.
    pub record: String,
}

/// One of the Q overlapping windows of a beat.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// 1-based window index.
    pub q: usize,
    /// Start index within the beat.
    pub offset: usize,
    pub samples: Vec<f64>,
}

/// Poisson cell rates. Rates are spikes/ms; the per-step firing probability
/// is min(1, rate*dt).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderParams {
    /// Baseline rate every cell fires at, regardless of polarity.
    pub r_base: f64,
    /// Rate added per unit of absolute amplitude on the matching-polarity cell.
    pub r_scale: f64,
    /// Encoding duration in timesteps.
    pub horizon: u32,
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self {
            r_base: 0.02,
            r_scale: 0.35,
            horizon: 200,
        }
    }
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        if self.r_base < 0.0 {
            return Err(Error::Config("encoder.r_base must be >= 0".into()));
        }
        if !(self.r_scale > 0.0) {
            return Err(Error::Config("encoder.r_scale must be > 0".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("encoder.horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// Samples kept before the R peak: round(0.25 * fs), half-up.
pub fn pre_samples(fs: f64) -> usize {
    (0.25 * fs).round() as usize
}

/// Samples kept after the R peak: round(0.45 * fs), half-up.
pub fn post_samples(fs: f64) -> usize {
    (0.45 * fs).round() as usize
}

/// Total segmented beat length for a sampling rate.
pub fn beat_len(fs: f64) -> usize {
    pre_samples(fs) + post_samples(fs)
}

/// Cuts the fixed segmentation window around an annotated R peak.
pub fn segment_beat(signal: &[f64], r_peak: usize, fs: f64) -> Result<Beat> {
    let pre = pre_samples(fs);
    let post = post_samples(fs);
    if r_peak < pre || r_peak + post > signal.len() {
        return Err(Error::TruncatedBeat { r_peak });
    }
    Ok(Beat {
        samples: signal[r_peak - pre..r_peak + post].to_vec(),
        fs,
        r_index: pre,
        label: None,
        record: String::new(),
    })
}

/// Splits a beat into Q overlapping windows of equal length
/// L = ceil(|beat| / ceil(Q/2)), offsets evenly spaced over [0, |beat|-L].
pub fn split_windows(beat: &Beat, q_count: usize) -> Result<Vec<Window>> {
    if q_count < 1 {
        return Err(Error::Config("window count Q must be >= 1".into()));
    }
    let n = beat.samples.len();
    let half = q_count.div_ceil(2);
    let len = n.div_ceil(half);
    if len < 2 {
        return Err(Error::Config(format!(
            "Q={q_count} gives window length {len} for a {n}-sample beat; need >= 2"
        )));
    }
    let mut windows = Vec::with_capacity(q_count);
    for q in 1..=q_count {
        let offset = if q_count == 1 {
            0
        } else {
            ((q - 1) as f64 * (n - len) as f64 / (q_count - 1) as f64).round() as usize
        };
        windows.push(Window {
            q,
            offset,
            samples: beat.samples[offset..offset + len].to_vec(),
        });
    }
    Ok(windows)
}

/// Per-step firing probability for a matching-polarity cell seeing amplitude
/// magnitude `amp_abs`.
#[inline]
pub fn firing_prob(amp_abs: f64, params: &EncoderParams, dt: f64) -> f64 {
    ((params.r_base + params.r_scale * amp_abs) * dt).min(1.0)
}

/// Encodes one window into a positive-polarity and a negative-polarity train,
/// one cell per sample in each.
pub fn encode_window(
    window: &Window,
    params: &EncoderParams,
    dt: f64,
    rng: &mut impl Rng,
) -> (SpikeTrain, SpikeTrain) {
    let n = window.samples.len();
    let horizon = params.horizon;
    let base_p = (params.r_base * dt).min(1.0);
    let mut pos = SpikeTrain::empty(n, horizon);
    let mut neg = SpikeTrain::empty(n, horizon);
    let probs: Vec<(f64, f64)> = window
        .samples
        .iter()
        .map(|&x| {
            let active = firing_prob(x.abs(), params, dt);
            if x >= 0.0 {
                (active, base_p)
            } else {
                (base_p, active)
            }
        })
        .collect();
    for t in 0..horizon {
        for (i, &(p_pos, p_neg)) in probs.iter().enumerate() {
            if rng.random::<f64>() < p_pos {
                pos.push(i as u32, t);
            }
            if rng.random::<f64>() < p_neg {
                neg.push(i as u32, t);
            }
        }
    }
    (pos, neg)
}

/// Orders window trains for the next layer: 1-based output index 2q-1 carries
/// window q's positive train, index 2q its negative train.
pub fn route_windows(encoded: Vec<(SpikeTrain, SpikeTrain)>) -> Vec<SpikeTrain> {
    let mut routed = Vec::with_capacity(encoded.len() * 2);
    for (pos, neg) in encoded {
        routed.push(pos);
        routed.push(neg);
    }
    routed
}

/// Splits, encodes and routes a beat into its 2Q spike channels.
pub fn encode_beat(
    beat: &Beat,
    q_count: usize,
    params: &EncoderParams,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<Vec<SpikeTrain>> {
    let windows = split_windows(beat, q_count)?;
    let encoded = windows
        .iter()
        .map(|w| encode_window(w, params, dt, rng))
        .collect();
    Ok(route_windows(encoded))
}

/// Normalizes a record to zero median and unit inter-quartile scale, the
/// stable amplitude frame the rate law assumes across patients. A degenerate
/// IQR leaves the scale at 1.
pub fn robust_normalize(samples: &[f64]) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    };
    let median = quantile(0.5);
    let iqr = quantile(0.75) - quantile(0.25);
    let scale = if iqr > 0.0 { iqr } else { 1.0 };
    samples.iter().map(|&x| (x - median) / scale).collect()
}

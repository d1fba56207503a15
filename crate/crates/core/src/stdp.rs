//! Unsupervised STDP feature extraction with a paired inhibitory layer.
//!
//! Forward weights follow spike-timing dependent plasticity. The optimized
//! rule amplifies depression by `gamma(w) = (1 + w*gamma_max) / (1 + w)` so
//! that weights of inputs with intermediate firing rates settle between 0 and
//! `w_max` instead of saturating. Each STDP neuron has a mirror inhibitory
//! neuron: when it fires, negative backward synapses suppress the other
//! neurons of the same window at the next step. Inhibitory weights depress by
//! `b_minus / (1 - w')` on near-coincident firing, which saturates instead of
//! growing without bound, and recover by `b_plus` otherwise. Per epoch a
//! random subset of inhibitory neurons is inactivated; at inference the whole
//! inhibitory layer is off and the forward pass is a plain weighted layer.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InLayer, Result};
use crate::lif::{lif_step_into, LifParams, LifState, SpikeTrain};
use crate::matrix::Matrix;

/// Which forward learning rule to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdpRule {
    /// Exponential pair rule: both branches unscaled.
    Classic,
    /// Depression branch multiplied by `gamma(w)`.
    Optimized,
}

/// Forward-plasticity constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpParams {
    /// Potentiation rate (> 0).
    pub a_plus: f64,
    /// Depression rate (< 0).
    pub a_minus: f64,
    /// Pair-decay time constant (ms).
    pub tau_stdp: f64,
    /// Ceiling of the depression amplification (> 1).
    pub gamma_max: f64,
    /// Forward weight ceiling.
    pub w_max: f64,
    /// STDP neurons per window channel.
    pub neurons_per_window: usize,
    pub rule: StdpRule,
    /// Training passes over the beat set.
    pub epochs: u32,
}

impl Default for StdpParams {
    fn default() -> Self {
        Self {
            a_plus: 0.01,
            a_minus: -0.0035,
            tau_stdp: 20.0,
            gamma_max: 4.0,
            w_max: 1.0,
            neurons_per_window: 10,
            rule: StdpRule::Optimized,
            epochs: 4,
        }
    }
}

impl StdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_plus > 0.0) {
            return Err(Error::Config("stdp.a_plus must be > 0".into()));
        }
        if !(self.a_minus < 0.0) {
            return Err(Error::Config("stdp.a_minus must be < 0".into()));
        }
        if !(self.tau_stdp > 0.0) {
            return Err(Error::Config("stdp.tau_stdp must be > 0".into()));
        }
        if !(self.gamma_max > 1.0) {
            return Err(Error::Config("stdp.gamma_max must be > 1".into()));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::Config("stdp.w_max must be > 0".into()));
        }
        if self.neurons_per_window == 0 {
            return Err(Error::Config("stdp.neurons_per_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inhibitory-plasticity constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InhibParams {
    /// Recovery rate towards zero (> 0).
    pub b_plus: f64,
    /// Depression rate (< 0).
    pub b_minus: f64,
    /// Coincidence threshold (ms).
    pub lambda: f64,
    /// Probability an inhibitory neuron sits out an epoch.
    pub dropout_p: f64,
}

impl Default for InhibParams {
    fn default() -> Self {
        Self {
            b_plus: 0.005,
            b_minus: -0.05,
            lambda: 5.0,
            dropout_p: 0.2,
        }
    }
}

impl InhibParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_plus > 0.0) {
            return Err(Error::Config("inhib.b_plus must be > 0".into()));
        }
        if !(self.b_minus < 0.0) {
            return Err(Error::Config("inhib.b_minus must be < 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("inhib.lambda must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("inhib.dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Depression amplification factor of the optimized rule: 1 at w = 0,
/// approaching gamma_max as w grows.
#[inline]
pub fn gamma(w: f64, gamma_max: f64) -> f64 {
    (1.0 + w * gamma_max) / (1.0 + w)
}

/// Classic pair rule. `dt_spike = t_post - t_pre` in ms; simultaneous spikes
/// (dt = 0) are outside both branches and produce no update.
#[inline]
pub fn stdp_delta_classic(dt_spike: f64, params: &StdpParams) -> f64 {
    if dt_spike > 0.0 {
        params.a_plus * (-dt_spike.abs() / params.tau_stdp).exp()
    } else if dt_spike < 0.0 {
        params.a_minus * (-dt_spike.abs() / params.tau_stdp).exp()
    } else {
        0.0
    }
}

/// Optimized rule: potentiation unchanged, depression scaled by `gamma(w)`.
#[inline]
pub fn stdp_delta(dt_spike: f64, w: f64, params: &StdpParams) -> f64 {
    if dt_spike < 0.0 {
        gamma(w, params.gamma_max) * stdp_delta_classic(dt_spike, params)
    } else {
        stdp_delta_classic(dt_spike, params)
    }
}

#[inline]
fn forward_delta(rule: StdpRule, dt_spike: f64, w: f64, params: &StdpParams) -> f64 {
    match rule {
        StdpRule::Classic => stdp_delta_classic(dt_spike, params),
        StdpRule::Optimized => stdp_delta(dt_spike, w, params),
    }
}

/// Backward-synapse rule: coincident firing (|dt| <= lambda) depresses by
/// `b_minus / (1 - w')`, which vanishes as w' grows negative; anything else
/// recovers by `b_plus`. Callers clip the result so w' stays <= 0.
#[inline]
pub fn inhib_delta(dt_spike: f64, w_prime: f64, params: &InhibParams) -> f64 {
    if dt_spike.abs() <= params.lambda {
        params.b_minus / (1.0 - w_prime)
    } else {
        params.b_plus
    }
}

/// Accumulates the inhibitory currents that firing neurons deliver to their
/// same-window competitors at the next timestep. `w_inhib[j][j2]` is the
/// backward synapse from neuron j's inhibitory mirror onto neuron j2;
/// inactive mirrors (dropout) deliver nothing.
pub fn apply_inhibition(fired: &[bool], w_inhib: &Matrix, mask: &[bool], pending: &mut [f64]) {
    for (j, f) in fired.iter().enumerate() {
        if !*f || !mask[j] {
            continue;
        }
        let row = w_inhib.row(j);
        for (j2, p) in pending.iter_mut().enumerate() {
            if j2 != j {
                *p += row[j2];
            }
        }
    }
}

/// Weights of one window channel.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowState {
    /// Forward weights (inputs x neurons), in [0, w_max].
    pub w: Matrix,
    /// Backward inhibitory weights (neurons x neurons), <= 0, zero diagonal.
    pub w_inhib: Matrix,
}

/// Full layer state across the 2Q window channels.
#[derive(Clone, Debug, PartialEq)]
pub struct StdpLayerState {
    pub windows: Vec<WindowState>,
}

impl StdpLayerState {
    /// Random forward weights uniform in [0.3, 0.7] * w_max, inhibitory
    /// weights at zero.
    pub fn init(
        n_windows: usize,
        window_len: usize,
        params: &StdpParams,
        rng: &mut impl Rng,
    ) -> Self {
        let n = params.neurons_per_window;
        let windows = (0..n_windows)
            .map(|_| WindowState {
                w: Matrix::from_fn(window_len, n, |_, _| {
                    rng.random_range(0.3..0.7) * params.w_max
                }),
                w_inhib: Matrix::zeros(n, n),
            })
            .collect();
        Self { windows }
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }
}

/// Per-epoch training statistics.
#[derive(Clone, Debug, Default)]
pub struct StdpEpochStats {
    /// Spikes fired by the STDP layer across all windows and beats.
    pub spikes: u64,
    /// Sum of absolute applied forward-weight changes.
    pub total_abs_dw: f64,
    /// Inhibitory neurons inactivated this epoch, per window.
    pub dropped: Vec<usize>,
}

/// One training presentation of one window channel: simulate with lateral
/// inhibition, apply both plasticity rules event by event, clip after every
/// update. Returns the window's output train and the summed |dw|.
pub fn train_window(
    input: &SpikeTrain,
    ws: &mut WindowState,
    mask: &[bool],
    lif: &LifParams,
    sp: &StdpParams,
    ip: &InhibParams,
) -> Result<(SpikeTrain, f64)> {
    let l = ws.w.rows();
    let n = ws.w.cols();
    if input.neurons() != l {
        return Err(Error::ShapeMismatch(format!(
            "stdp window: weights expect {l} inputs, train has {}",
            input.neurons()
        )));
    }
    let mut state = LifState::new(n, lif);
    let mut out = SpikeTrain::empty(n, input.horizon());
    let mut last_pre: Vec<Option<u32>> = vec![None; l];
    let mut pending = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut fired = vec![false; n];
    let mut total_abs_dw = 0.0;

    for (t, events) in input.steps() {
        acc.copy_from_slice(&pending);
        pending.fill(0.0);
        for e in events {
            let row = ws.w.row(e.neuron as usize);
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w;
            }
            last_pre[e.neuron as usize] = Some(t);
        }
        lif_step_into(&mut state, &acc, lif, &mut fired).in_layer("stdp")?;

        // Potentiation: each firing neuron pairs with every input's most
        // recent spike. A pre spike in this same step gives dt = 0: no update.
        for (j, f) in fired.iter().enumerate() {
            if !*f {
                continue;
            }
            out.push(j as u32, t);
            for (i, lp) in last_pre.iter().enumerate() {
                if let Some(tp) = *lp {
                    let dt = (t - tp) as f64;
                    if dt > 0.0 {
                        let w0 = ws.w.get(i, j);
                        let w1 = (w0 + forward_delta(sp.rule, dt, w0, sp)).clamp(0.0, sp.w_max);
                        ws.w.set(i, j, w1);
                        total_abs_dw += (w1 - w0).abs();
                    }
                }
            }
        }

        // Depression: each input spike pairs with every neuron's most recent
        // fire. Neurons that fired this very step are the dt = 0 case.
        for e in events {
            let i = e.neuron as usize;
            for j in 0..n {
                if let Some(tq) = state.last_fire(j) {
                    if tq != t {
                        let dt = tq as f64 - t as f64;
                        let w0 = ws.w.get(i, j);
                        let w1 = (w0 + forward_delta(sp.rule, dt, w0, sp)).clamp(0.0, sp.w_max);
                        ws.w.set(i, j, w1);
                        total_abs_dw += (w1 - w0).abs();
                    }
                }
            }
        }

        // Inhibitory rule: a firing neuron pairs with every competitor's most
        // recent spike (including simultaneous fires, dt = 0) and updates its
        // own outgoing backward synapse.
        for (j, f) in fired.iter().enumerate() {
            if !*f {
                continue;
            }
            for j2 in 0..n {
                if j2 == j {
                    continue;
                }
                if let Some(t2) = state.last_fire(j2) {
                    let dt = (t - t2) as f64;
                    let w0 = ws.w_inhib.get(j, j2);
                    let w1 = (w0 + inhib_delta(dt, w0, ip)).min(0.0);
                    ws.w_inhib.set(j, j2, w1);
                }
            }
        }

        apply_inhibition(&fired, &ws.w_inhib, mask, &mut pending);
    }
    Ok((out, total_abs_dw))
}

/// One unsupervised pass over the beat set. `inputs` maps a beat index to its
/// 2Q window trains (the Gaussian layer's outputs) and must be deterministic
/// in its argument. A fresh dropout mask is drawn from `mask_rng` for the
/// whole epoch; windows update independently and run in parallel.
pub fn train_stdp_epoch<F>(
    n_beats: usize,
    inputs: F,
    state: &mut StdpLayerState,
    lif: &LifParams,
    sp: &StdpParams,
    ip: &InhibParams,
    mask_rng: &mut impl Rng,
) -> Result<StdpEpochStats>
where
    F: Fn(usize) -> Result<Vec<SpikeTrain>> + Sync,
{
    let n_windows = state.n_windows();
    let masks: Vec<Vec<bool>> = (0..n_windows)
        .map(|_| {
            (0..sp.neurons_per_window)
                .map(|_| mask_rng.random::<f64>() >= ip.dropout_p)
                .collect()
        })
        .collect();
    let mut stats = StdpEpochStats {
        dropped: masks
            .iter()
            .map(|m| m.iter().filter(|a| !**a).count())
            .collect(),
        ..Default::default()
    };
    for b in 0..n_beats {
        let trains = inputs(b)?;
        if trains.len() != n_windows {
            return Err(Error::ShapeMismatch(format!(
                "stdp epoch: got {} window trains, layer has {n_windows}",
                trains.len()
            )));
        }
        let per_window: Vec<(u64, f64)> = state
            .windows
            .par_iter_mut()
            .zip(trains.par_iter())
            .zip(masks.par_iter())
            .map(|((ws, train), mask)| -> Result<(u64, f64)> {
                let (out, dw) = train_window(train, ws, mask, lif, sp, ip)?;
                Ok((out.len() as u64, dw))
            })
            .collect::<Result<_>>()?;
        for (spikes, dw) in per_window {
            stats.spikes += spikes;
            stats.total_abs_dw += dw;
        }
    }
    Ok(stats)
}

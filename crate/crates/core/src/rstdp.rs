//! Reward-modulated STDP output layer: one LIF neuron per class, trained by
//! reward or punishment signals on the winner's input synapses.
//!
//! The winner of a beat is the class neuron with the most spikes (ties break
//! on final membrane potential, then on lower class index). A correct winner
//! receives the reward rule, an incorrect one the punishment rule; both scale
//! with `psi * (psi_max - psi)`, whose fixed points at 0 and psi_max make the
//! trained weights bistable. Only the winner's synapses move, and only those
//! whose pre-synaptic neuron fired during the beat.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InLayer, Result};
use crate::lif::{lif_step_into, LifParams, LifState, SpikeTrain};
use crate::matrix::Matrix;

/// Reward and punishment learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RstdpParams {
    /// Reward, pre's first spike before the winner's (> 0).
    pub ar_plus: f64,
    /// Reward, pre's first spike at or after it (< 0).
    pub ar_minus: f64,
    /// Punishment, pre's first spike at or after it (> 0).
    pub ap_plus: f64,
    /// Punishment, pre's first spike before it (< 0).
    pub ap_minus: f64,
    /// Weight ceiling.
    pub psi_max: f64,
    /// Training passes over the beat set.
    pub epochs: u32,
}

impl Default for RstdpParams {
    fn default() -> Self {
        Self {
            ar_plus: 0.02,
            ar_minus: -0.02,
            ap_plus: 0.02,
            ap_minus: -0.02,
            psi_max: 1.0,
            epochs: 30,
        }
    }
}

impl RstdpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ar_plus > 0.0) || !(self.ar_minus < 0.0) {
            return Err(Error::Config(
                "rstdp reward rates must satisfy ar_plus > 0 > ar_minus".into(),
            ));
        }
        if !(self.ap_plus > 0.0) || !(self.ap_minus < 0.0) {
            return Err(Error::Config(
                "rstdp punishment rates must satisfy ap_plus > 0 > ap_minus".into(),
            ));
        }
        if !(self.psi_max > 0.0) {
            return Err(Error::Config("rstdp.psi_max must be > 0".into()));
        }
        Ok(())
    }
}

/// Trained classifier weights and the ordered class labels they predict.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierState {
    /// (all STDP neurons across windows) x (classes), in [0, psi_max].
    pub psi: Matrix,
    pub classes: Vec<String>,
}

impl ClassifierState {
    /// Weights initialised strictly inside (0, psi_max): 0 and psi_max are
    /// fixed points of the rule, so starting there would freeze learning.
    pub fn init(n_inputs: usize, classes: Vec<String>, psi_max: f64, rng: &mut impl Rng) -> Self {
        let psi = Matrix::from_fn(n_inputs, classes.len(), |_, _| {
            rng.random_range(0.4..0.6) * psi_max
        });
        Self { psi, classes }
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Data(format!("unknown label '{label}'")))
    }
}

/// Winner selection: most spikes, then higher final membrane potential, then
/// lower class index.
pub fn predict(counts: &[u32], final_potentials: &[f64]) -> usize {
    assert!(
        !counts.is_empty(),
        "predict needs at least one class neuron"
    );
    let mut best = 0;
    for k in 1..counts.len() {
        if counts[k] > counts[best]
            || (counts[k] == counts[best] && final_potentials[k] > final_potentials[best])
        {
            best = k;
        }
    }
    best
}

/// Which modulation signal a beat produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Reward,
    Punishment,
}

/// Weight increment for one synapse of the winner.
/// `dt_spike = t_post - t_pre` where t_post is the winner's first spike of
/// the beat and t_pre the synapse's first pre-synaptic spike. First-spike
/// pairing keeps the causal reading under rate coding: the inputs that fire
/// early enough to cause the win are the ones the reward strengthens.
#[inline]
pub fn rstdp_delta(outcome: Outcome, dt_spike: f64, psi: f64, params: &RstdpParams) -> f64 {
    let shape = psi * (params.psi_max - psi);
    let rate = match outcome {
        Outcome::Reward => {
            if dt_spike > 0.0 {
                params.ar_plus
            } else {
                params.ar_minus
            }
        }
        Outcome::Punishment => {
            if dt_spike > 0.0 {
                params.ap_minus
            } else {
                params.ap_plus
            }
        }
    };
    rate * shape
}

/// Forward pass of the classifier layer.
pub struct ClassifierOutput {
    pub train: SpikeTrain,
    pub counts: Vec<u32>,
    pub final_potentials: Vec<f64>,
}

pub fn run_classifier(
    input: &SpikeTrain,
    psi: &Matrix,
    lif: &LifParams,
) -> Result<ClassifierOutput> {
    if psi.rows() != input.neurons() {
        return Err(Error::ShapeMismatch(format!(
            "classifier: psi expects {} inputs, train has {}",
            psi.rows(),
            input.neurons()
        )));
    }
    let n = psi.cols();
    let mut state = LifState::new(n, lif);
    let mut out = SpikeTrain::empty(n, input.horizon());
    let mut acc = vec![0.0; n];
    let mut fired = vec![false; n];
    for (t, events) in input.steps() {
        acc.fill(0.0);
        for e in events {
            let row = psi.row(e.neuron as usize);
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w;
            }
        }
        lif_step_into(&mut state, &acc, lif, &mut fired).in_layer("classifier")?;
        for (j, f) in fired.iter().enumerate() {
            if *f {
                out.push(j as u32, t);
            }
        }
    }
    let counts = out.counts();
    Ok(ClassifierOutput {
        train: out,
        counts,
        final_potentials: state.potentials().to_vec(),
    })
}

/// Fraction of psi_max kept clear of both ends when an update lands.
/// The rule approaches 0 and psi_max asymptotically but never reaches them;
/// in floating point an update can round onto the exact fixed point, where
/// `psi * (psi_max - psi)` is exactly zero and the synapse is frozen for
/// good. The margin keeps saturated weights responsive to later reversals.
pub const PSI_SATURATION_MARGIN: f64 = 1e-3;

/// Applies the beat's modulation to the winner's input synapses. Synapses
/// whose pre-neuron never fired are untouched; a winner that never fired
/// leaves no t_post to pair with, so nothing moves.
pub fn apply_beat_update(
    state: &mut ClassifierState,
    pre_first_fires: &[Option<u32>],
    winner: usize,
    winner_first_fire: Option<u32>,
    outcome: Outcome,
    params: &RstdpParams,
) {
    let Some(t_post) = winner_first_fire else {
        return;
    };
    let margin = PSI_SATURATION_MARGIN * params.psi_max;
    for (j, pre) in pre_first_fires.iter().enumerate() {
        if let Some(t_pre) = *pre {
            let dt = t_post as f64 - t_pre as f64;
            let psi = state.psi.get(j, winner);
            let delta = rstdp_delta(outcome, dt, psi, params);
            if delta != 0.0 {
                let next = (psi + delta).clamp(margin, params.psi_max - margin);
                state.psi.set(j, winner, next);
            }
        }
    }
}

/// One supervised pass. `inputs` maps a beat index to its classifier input
/// train (the frozen STDP layer's concatenated window outputs) and the beat's
/// label. Returns the epoch's training accuracy.
///
/// A correct winner is rewarded on its input synapses. On a miss the wrong
/// winner is punished and the true class's neuron is rewarded on the same
/// beat; without that second update a neuron that never wins would keep its
/// initial weights forever and could stay beaten indefinitely.
pub fn train_rstdp_epoch<F>(
    n_beats: usize,
    mut inputs: F,
    state: &mut ClassifierState,
    lif: &LifParams,
    params: &RstdpParams,
) -> Result<f64>
where
    F: FnMut(usize) -> Result<(SpikeTrain, String)>,
{
    if n_beats == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let mut correct = 0usize;
    for b in 0..n_beats {
        let (train, label) = inputs(b)?;
        let truth = state.class_index(&label)?;
        let fwd = run_classifier(&train, &state.psi, lif)?;
        let winner = predict(&fwd.counts, &fwd.final_potentials);
        let pre_first = train.first_fires();
        let first_fires = fwd.train.first_fires();
        if winner == truth {
            correct += 1;
            apply_beat_update(
                state,
                &pre_first,
                winner,
                first_fires[winner],
                Outcome::Reward,
                params,
            );
        } else {
            apply_beat_update(
                state,
                &pre_first,
                winner,
                first_fires[winner],
                Outcome::Punishment,
                params,
            );
            apply_beat_update(
                state,
                &pre_first,
                truth,
                first_fires[truth],
                Outcome::Reward,
                params,
            );
        }
    }
    Ok(correct as f64 / n_beats as f64)
}

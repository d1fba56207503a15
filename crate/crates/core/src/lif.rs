//! Discrete-time leaky integrate-and-fire kernel shared by every spiking
//! layer.
//!
//! The membrane equation
//! `tau * du/dt = -(u - u_rest) + alpha * sum_i s_i(t) * w_ij`
//! is integrated with forward Euler at a fixed 1 ms step:
//! `u <- u + (dt/tau) * (-(u - u_rest) + alpha * input)`.
//! A neuron whose updated potential reaches the threshold fires and is reset
//! to the rest potential in the same step. There is no refractory period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Membrane constants. One set is shared by all layers of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    /// Membrane time constant (ms).
    pub tau_m: f64,
    /// Rest potential the leak pulls towards.
    pub u_rest: f64,
    /// Firing threshold.
    pub u_th: f64,
    /// Scale applied to the weighted input current.
    pub alpha: f64,
    /// Simulation timestep (ms).
    pub dt: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_m: 10.0,
            u_rest: 0.0,
            u_th: 1.0,
            alpha: 1.0,
            dt: 1.0,
        }
    }
}

impl LifParams {
    /// dt/tau, the Euler integration gain.
    #[inline]
    pub fn step_gain(&self) -> f64 {
        self.dt / self.tau_m
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0) {
            return Err(Error::Config("lif.tau_m must be positive".into()));
        }
        if !(self.u_th > self.u_rest) {
            return Err(Error::Config("lif.u_th must exceed lif.u_rest".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("lif.dt must be positive".into()));
        }
        if self.dt > self.tau_m {
            return Err(Error::Config("lif.dt must not exceed lif.tau_m".into()));
        }
        Ok(())
    }
}

/// Per-neuron simulation state: membrane potential, last spike time and the
/// layer-local clock advanced by each `lif_step`.
#[derive(Clone, Debug)]
pub struct LifState {
    u: Vec<f64>,
    last_fire: Vec<Option<u32>>,
    now: u32,
}

impl LifState {
    pub fn new(neurons: usize, params: &LifParams) -> Self {
        Self {
            u: vec![params.u_rest; neurons],
            last_fire: vec![None; neurons],
            now: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn potential(&self, neuron: usize) -> f64 {
        self.u[neuron]
    }

    pub fn potentials(&self) -> &[f64] {
        &self.u
    }

    pub fn last_fire(&self, neuron: usize) -> Option<u32> {
        self.last_fire[neuron]
    }

    /// Timestep the next `lif_step` will simulate.
    pub fn now(&self) -> u32 {
        self.now
    }
}

/// One event: neuron `neuron` fired at timestep `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpikeEvent {
    pub neuron: u32,
    pub t: u32,
}

/// An ordered spike record over a fixed horizon. Events are kept sorted by
/// (timestep, neuron) and a neuron holds at most one event per timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    events: Vec<SpikeEvent>,
    neurons: usize,
    horizon: u32,
}

impl SpikeTrain {
    pub fn empty(neurons: usize, horizon: u32) -> Self {
        Self {
            events: Vec::new(),
            neurons,
            horizon,
        }
    }

    /// Builds a train from events, enforcing ordering, range and the
    /// one-spike-per-neuron-per-step invariant.
    pub fn from_events(mut events: Vec<SpikeEvent>, neurons: usize, horizon: u32) -> Result<Self> {
        events.sort_unstable_by_key(|e| (e.t, e.neuron));
        for pair in events.windows(2) {
            if pair[0].t == pair[1].t && pair[0].neuron == pair[1].neuron {
                return Err(Error::Data(format!(
                    "duplicate spike for neuron {} at step {}",
                    pair[0].neuron, pair[0].t
                )));
            }
        }
        for e in &events {
            if e.t >= horizon {
                return Err(Error::Data(format!(
                    "spike at step {} outside horizon {}",
                    e.t, horizon
                )));
            }
            if e.neuron as usize >= neurons {
                return Err(Error::Data(format!(
                    "spike from neuron {} outside population {}",
                    e.neuron, neurons
                )));
            }
        }
        Ok(Self {
            events,
            neurons,
            horizon,
        })
    }

    /// Appends an event; callers must push in (t, neuron) order.
    #[inline]
    pub fn push(&mut self, neuron: u32, t: u32) {
        debug_assert!(t < self.horizon && (neuron as usize) < self.neurons);
        debug_assert!(self
            .events
            .last()
            .is_none_or(|e| (e.t, e.neuron) < (t, neuron)));
        self.events.push(SpikeEvent { neuron, t });
    }

    pub fn events(&self) -> &[SpikeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Spike count per neuron.
    pub fn counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.neurons];
        for e in &self.events {
            counts[e.neuron as usize] += 1;
        }
        counts
    }

    /// Last spike time per neuron.
    pub fn last_fires(&self) -> Vec<Option<u32>> {
        let mut last = vec![None; self.neurons];
        for e in &self.events {
            last[e.neuron as usize] = Some(e.t);
        }
        last
    }

    /// First spike time per neuron.
    pub fn first_fires(&self) -> Vec<Option<u32>> {
        let mut first = vec![None; self.neurons];
        for e in &self.events {
            let slot = &mut first[e.neuron as usize];
            if slot.is_none() {
                *slot = Some(e.t);
            }
        }
        first
    }

    /// Iterates timesteps 0..horizon, yielding the (possibly empty) slice of
    /// events at each step.
    pub fn steps(&self) -> StepIter<'_> {
        StepIter {
            train: self,
            idx: 0,
            t: 0,
        }
    }
}

pub struct StepIter<'a> {
    train: &'a SpikeTrain,
    idx: usize,
    t: u32,
}

impl<'a> Iterator for StepIter<'a> {
    type Item = (u32, &'a [SpikeEvent]);

    fn next(&mut self) -> Option<Self::Item> {
        if self.t >= self.train.horizon {
            return None;
        }
        let start = self.idx;
        let events = &self.train.events;
        while self.idx < events.len() && events[self.idx].t == self.t {
            self.idx += 1;
        }
        let t = self.t;
        self.t += 1;
        Some((t, &events[start..self.idx]))
    }
}

/// Advances every neuron by one timestep given its summed weighted input.
///
/// Returns which neurons fired. Fired neurons are reset to `u_rest` and have
/// their last-fire time stamped with the step just simulated.
pub fn lif_step(
    state: &mut LifState,
    weighted_input: &[f64],
    params: &LifParams,
) -> Result<Vec<bool>> {
    let mut fired = vec![false; state.u.len()];
    lif_step_into(state, weighted_input, params, &mut fired)?;
    Ok(fired)
}

/// Allocation-free variant of [`lif_step`] for simulation loops.
pub fn lif_step_into(
    state: &mut LifState,
    weighted_input: &[f64],
    params: &LifParams,
    fired: &mut [bool],
) -> Result<()> {
    if weighted_input.len() != state.u.len() || fired.len() != state.u.len() {
        return Err(Error::ShapeMismatch(format!(
            "lif_step: state has {} neurons, input has {}",
            state.u.len(),
            weighted_input.len()
        )));
    }
    let k = params.step_gain();
    let t = state.now;
    for (j, u) in state.u.iter_mut().enumerate() {
        *u += k * (-(*u - params.u_rest) + params.alpha * weighted_input[j]);
        if !u.is_finite() {
            return Err(Error::NonFinitePotential {
                layer: String::new(),
                neuron: j,
            });
        }
        if *u >= params.u_th {
            fired[j] = true;
            *u = params.u_rest;
            state.last_fire[j] = Some(t);
        } else {
            fired[j] = false;
        }
    }
    state.now = t + 1;
    Ok(())
}

/// Runs a fully connected layer over an input train.
///
/// `weights` is (input neurons x layer neurons). Deterministic: the only
/// state is the membrane potentials, freshly initialised at rest.
pub fn run_layer(weights: &Matrix, input: &SpikeTrain, params: &LifParams) -> Result<SpikeTrain> {
    if weights.rows() != input.neurons() {
        return Err(Error::ShapeMismatch(format!(
            "run_layer: weight matrix has {} input rows, train has {} neurons",
            weights.rows(),
            input.neurons()
        )));
    }
    let n = weights.cols();
    let mut state = LifState::new(n, params);
    let mut out = SpikeTrain::empty(n, input.horizon());
    let mut acc = vec![0.0; n];
    let mut fired = vec![false; n];
    for (t, events) in input.steps() {
        acc.fill(0.0);
        for e in events {
            let row = weights.row(e.neuron as usize);
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w;
            }
        }
        lif_step_into(&mut state, &acc, params, &mut fired)?;
        for (j, f) in fired.iter().enumerate() {
            if *f {
                out.push(j as u32, t);
            }
        }
    }
    Ok(out)
}

/// Returns every membrane potential to rest and clears spike history, making
/// successive beats independent.
pub fn reset_all(state: &mut LifState, params: &LifParams) {
    state.u.fill(params.u_rest);
    state.last_fire.fill(None);
    state.now = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params(tau: f64, u_th: f64) -> LifParams {
        LifParams {
            tau_m: tau,
            u_rest: 0.0,
            u_th,
            alpha: 1.0,
            dt: 1.0,
        }
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let p = params(10.0, 15.0);
        let mut s = LifState::new(1, &p);
        let fired = lif_step(&mut s, &[0.0], &p).unwrap();
        assert_eq!(s.potential(0), 0.0);
        assert!(!fired[0]);
    }

    #[test]
    fn euler_step_arithmetic() {
        let p = params(10.0, 15.0);
        let mut s = LifState::new(1, &p);
        let fired = lif_step(&mut s, &[20.0], &p).unwrap();
        assert_eq!(s.potential(0), 2.0);
        assert!(!fired[0]);
    }

    #[test]
    fn threshold_crossing_resets() {
        let p = params(10.0, 15.0);
        let mut s = LifState::new(1, &p);
        s.u[0] = 14.9;
        // 14.9 + 0.1*(-14.9 + 20) = 15.41 >= 15
        let fired = lif_step(&mut s, &[20.0], &p).unwrap();
        assert!(fired[0]);
        assert_eq!(s.potential(0), 0.0);
        assert_eq!(s.last_fire(0), Some(0));
    }

    #[test]
    fn zero_input_decays_geometrically() {
        let p = params(10.0, 100.0);
        let mut s = LifState::new(1, &p);
        s.u[0] = 8.0;
        let mut expected = 8.0;
        for _ in 0..40 {
            lif_step(&mut s, &[0.0], &p).unwrap();
            expected *= 1.0 - p.step_gain();
            assert!((s.potential(0) - expected).abs() < 1e-12);
        }
        assert!(s.potential(0) < 8.0 * 0.02);
    }

    #[test]
    fn non_finite_potential_is_fatal() {
        let p = params(10.0, f64::INFINITY);
        let mut s = LifState::new(2, &p);
        let err = lif_step(&mut s, &[0.0, f64::INFINITY], &p).unwrap_err();
        match err {
            Error::NonFinitePotential { neuron, .. } => assert_eq!(neuron, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_train_gives_empty_output() {
        let p = LifParams::default();
        let w = Matrix::from_vec(2, 3, vec![0.5; 6]);
        let input = SpikeTrain::empty(2, 50);
        let out = run_layer(&w, &input, &p).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.neurons(), 3);
        assert_eq!(out.horizon(), 50);
    }

    #[test]
    fn zero_weights_give_empty_output() {
        let p = LifParams::default();
        let w = Matrix::zeros(1, 2);
        let events = (0..50).map(|t| SpikeEvent { neuron: 0, t }).collect();
        let input = SpikeTrain::from_events(events, 1, 50).unwrap();
        let out = run_layer(&w, &input, &p).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn run_layer_matches_scalar_oracle() {
        // Single input firing every step through a weight that crosses the
        // threshold within one step. The oracle iterates the Euler map by
        // hand, independent of the matrix plumbing.
        let p = params(10.0, 1.0);
        let w_val = 15.0; // 0.1 * 15 = 1.5 >= 1.0: fires every step
        let horizon = 40;
        let events = (0..horizon).map(|t| SpikeEvent { neuron: 0, t }).collect();
        let input = SpikeTrain::from_events(events, 1, horizon).unwrap();
        let w = Matrix::from_vec(1, 1, vec![w_val]);
        let out = run_layer(&w, &input, &p).unwrap();

        let mut u = 0.0;
        let mut oracle_fires = Vec::new();
        for t in 0..horizon {
            u += (p.dt / p.tau_m) * (-(u - p.u_rest) + p.alpha * w_val);
            if u >= p.u_th {
                oracle_fires.push(t);
                u = p.u_rest;
            }
        }
        assert_eq!(oracle_fires.len(), horizon as usize);
        let got: Vec<u32> = out.events().iter().map(|e| e.t).collect();
        assert_eq!(got, oracle_fires);
    }

    #[test]
    fn reset_restores_rest_and_is_idempotent() {
        let p = params(10.0, 5.0);
        let mut s = LifState::new(3, &p);
        lif_step(&mut s, &[100.0, 1.0, 0.0], &p).unwrap();
        reset_all(&mut s, &p);
        assert!(s.potentials().iter().all(|&u| u == p.u_rest));
        assert!(s.last_fire.iter().all(|f| f.is_none()));
        assert_eq!(s.now(), 0);
        let snapshot = s.clone();
        reset_all(&mut s, &p);
        assert_eq!(s.potentials(), snapshot.potentials());
    }

    #[test]
    fn reset_makes_runs_reproducible() {
        let p = params(10.0, 2.0);
        let events: Vec<SpikeEvent> = (0..30)
            .filter(|t| t % 3 == 0)
            .map(|t| SpikeEvent { neuron: 0, t })
            .collect();
        let input = SpikeTrain::from_events(events, 1, 30).unwrap();
        let w = Matrix::from_vec(1, 1, vec![8.0]);
        let a = run_layer(&w, &input, &p).unwrap();
        let b = run_layer(&w, &input, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_double_fire_in_one_step_and_reset_after_fire() {
        let p = params(10.0, 0.5);
        let mut rng = crate::rng::stream(7, &[99]);
        let mut s = LifState::new(4, &p);
        for _ in 0..200 {
            let input: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..12.0)).collect();
            let fired = lif_step(&mut s, &input, &p).unwrap();
            for (j, f) in fired.iter().enumerate() {
                if *f {
                    assert_eq!(s.potential(j), p.u_rest);
                }
            }
        }
    }

    #[test]
    fn subthreshold_superposition() {
        // Below threshold the Euler map is linear (u_rest = 0, start at 0):
        // response to a + b equals response to a plus response to b.
        let p = params(10.0, f64::MAX);
        let mut rng = crate::rng::stream(11, &[5]);
        let horizon = 60;
        let a: Vec<f64> = (0..horizon).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..horizon).map(|_| rng.random_range(0.0..1.0)).collect();

        let run = |input: &[f64]| -> Vec<f64> {
            let mut s = LifState::new(1, &p);
            let mut trace = Vec::new();
            for &x in input {
                lif_step(&mut s, &[x], &p).unwrap();
                trace.push(s.potential(0));
            }
            trace
        };
        let sum_input: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ra = run(&a);
        let rb = run(&b);
        let rsum = run(&sum_input);
        for t in 0..horizon {
            assert!((rsum[t] - (ra[t] + rb[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn larger_weight_never_fires_less() {
        let mut rng = crate::rng::stream(3, &[8]);
        let p = params(10.0, 1.0);
        let horizon = 200;
        let mut events = Vec::new();
        for t in 0..horizon {
            if rng.random::<f64>() < 0.35 {
                events.push(SpikeEvent { neuron: 0, t });
            }
        }
        let input = SpikeTrain::from_events(events, 1, horizon).unwrap();
        let mut prev = 0;
        for step in 0..30 {
            let w = Matrix::from_vec(1, 1, vec![0.5 * step as f64]);
            let out = run_layer(&w, &input, &p).unwrap();
            assert!(
                out.len() >= prev,
                "spike count decreased when weight grew: {} -> {}",
                prev,
                out.len()
            );
            prev = out.len();
        }
    }

    #[test]
    fn step_iter_covers_horizon() {
        let events = vec![
            SpikeEvent { neuron: 1, t: 2 },
            SpikeEvent { neuron: 0, t: 2 },
            SpikeEvent { neuron: 0, t: 4 },
        ];
        let train = SpikeTrain::from_events(events, 2, 6).unwrap();
        let steps: Vec<(u32, usize)> = train.steps().map(|(t, ev)| (t, ev.len())).collect();
        assert_eq!(steps, vec![(0, 0), (1, 0), (2, 2), (3, 0), (4, 1), (5, 0)]);
        // sorted by neuron within the step
        let at2: Vec<u32> = train
            .steps()
            .nth(2)
            .unwrap()
            .1
            .iter()
            .map(|e| e.neuron)
            .collect();
        assert_eq!(at2, vec![0, 1]);
    }

    #[test]
    fn from_events_rejects_out_of_range_and_duplicates() {
        let dup = vec![
            SpikeEvent { neuron: 0, t: 1 },
            SpikeEvent { neuron: 0, t: 1 },
        ];
        assert!(SpikeTrain::from_events(dup, 1, 4).is_err());
        let late = vec![SpikeEvent { neuron: 0, t: 9 }];
        assert!(SpikeTrain::from_events(late, 1, 4).is_err());
        let ghost = vec![SpikeEvent { neuron: 3, t: 0 }];
        assert!(SpikeTrain::from_events(ghost, 2, 4).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(LifParams::default().validate().is_ok());
        assert!(LifParams {
            tau_m: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LifParams {
            u_th: -1.0,
            u_rest: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LifParams {
            dt: 20.0,
            tau_m: 10.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}

//! Per-window multiplicative gain layer with a Gaussian spatial kernel.
//!
//! Each of the 2Q window channels passes through one LIF neuron per input
//! synapse whose single weight is `g_i = beta * N(i; mu, sigma)` with
//! `mu = L/2`, `sigma = L/3`. The per-window scalar `beta` is trained by
//! `delta_beta = alpha_g * (1 - mean_rate / r_target)` until every window
//! emits the same average number of spikes per beat.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, InLayer, Result};
use crate::lif::{lif_step_into, LifParams, LifState, SpikeTrain};

/// Training constants for the beta update loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianParams {
    /// Target mean output spikes per neuron per beat.
    pub r_target: f64,
    /// Beta learning rate.
    pub alpha_g: f64,
    /// Lower clamp keeping every window alive.
    pub beta_min: f64,
    /// Convergence band on |1 - mean_rate/r_target|.
    pub epsilon: f64,
    /// Epoch cap; hitting it is a warning, not an error.
    pub max_epochs: u32,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            r_target: 10.0,
            alpha_g: 80.0,
            beta_min: 1e-3,
            epsilon: 0.05,
            max_epochs: 50,
        }
    }
}

impl GaussianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_target > 0.0) {
            return Err(Error::Config("gaussian.r_target must be > 0".into()));
        }
        if !(self.alpha_g > 0.0) {
            return Err(Error::Config("gaussian.alpha_g must be > 0".into()));
        }
        if !(self.beta_min > 0.0) {
            return Err(Error::Config("gaussian.beta_min must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("gaussian.epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Unit-beta Gaussian kernel over sample positions i in [1, window_len].
pub fn gaussian_kernel(window_len: usize) -> Vec<f64> {
    let mu = 0.5 * window_len as f64;
    let sigma = window_len as f64 / 3.0;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    (1..=window_len)
        .map(|i| {
            let z = (i as f64 - mu) / sigma;
            norm * (-0.5 * z * z).exp()
        })
        .collect()
}

/// Gain vector for one window at a given beta.
pub fn init_gains(window_len: usize, beta: f64) -> Vec<f64> {
    gaussian_kernel(window_len)
        .into_iter()
        .map(|g| g * beta)
        .collect()
}

/// The trained state of the layer: one shared kernel (all windows have equal
/// length) and one beta per window channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLayer {
    kernel: Vec<f64>,
    pub betas: Vec<f64>,
}

impl GaussianLayer {
    pub fn new(window_len: usize, n_windows: usize) -> Self {
        Self {
            kernel: gaussian_kernel(window_len),
            betas: vec![1.0; n_windows],
        }
    }

    pub fn with_betas(window_len: usize, betas: Vec<f64>) -> Self {
        Self {
            kernel: gaussian_kernel(window_len),
            betas,
        }
    }

    pub fn window_len(&self) -> usize {
        self.kernel.len()
    }

    pub fn n_windows(&self) -> usize {
        self.betas.len()
    }

    pub fn gains(&self, window: usize) -> Vec<f64> {
        let beta = self.betas[window];
        self.kernel.iter().map(|g| g * beta).collect()
    }

    /// Runs one window channel: neuron i receives only its own synapse
    /// `g_i` when cell i spikes. Semantically a diagonal-weight `run_layer`.
    pub fn run_window(
        &self,
        window: usize,
        input: &SpikeTrain,
        lif: &LifParams,
    ) -> Result<SpikeTrain> {
        let n = self.kernel.len();
        if input.neurons() != n {
            return Err(Error::ShapeMismatch(format!(
                "gaussian window {window}: kernel has {n} synapses, train has {}",
                input.neurons()
            )));
        }
        let beta = self.betas[window];
        let mut state = LifState::new(n, lif);
        let mut out = SpikeTrain::empty(n, input.horizon());
        let mut acc = vec![0.0; n];
        let mut fired = vec![false; n];
        for (t, events) in input.steps() {
            acc.fill(0.0);
            for e in events {
                acc[e.neuron as usize] = beta * self.kernel[e.neuron as usize];
            }
            lif_step_into(&mut state, &acc, lif, &mut fired)
                .in_layer(&format!("gaussian[{window}]"))?;
            for (j, f) in fired.iter().enumerate() {
                if *f {
                    out.push(j as u32, t);
                }
            }
        }
        Ok(out)
    }
}

/// Mean spikes per neuron per beat over one window's output trains from a
/// dataset pass.
pub fn measure_mean_rate(trains: &[SpikeTrain]) -> Result<f64> {
    if trains.is_empty() {
        return Err(Error::UndefinedRate);
    }
    let neurons = trains[0].neurons();
    if neurons == 0 {
        return Err(Error::UndefinedRate);
    }
    let total: u64 = trains.iter().map(|t| t.len() as u64).sum();
    Ok(total as f64 / (neurons as f64 * trains.len() as f64))
}

/// Beta increment: `alpha_g * (1 - mean_rate / r_target)`.
pub fn update_beta(mean_rate: f64, r_target: f64, alpha_g: f64) -> f64 {
    alpha_g * (1.0 - mean_rate / r_target)
}

/// Convergence summary of the beta training loop.
#[derive(Clone, Debug)]
pub struct GaussianReport {
    /// Dataset passes performed (including the final measuring pass).
    pub epochs: u32,
    pub converged: bool,
    /// Final |1 - mean_rate/r_target| per window.
    pub final_errors: Vec<f64>,
    /// Final measured mean rate per window.
    pub final_rates: Vec<f64>,
}

/// Trains the per-window betas until every window's mean output rate is
/// within epsilon of the target, or the epoch cap is reached.
///
/// `encode` maps (beat index, epoch) to the beat's routed 2Q input trains;
/// it must be deterministic in its arguments so parallelism cannot change
/// results. Non-convergence returns the betas as trained plus
/// `converged = false`.
pub fn train_gaussian<F>(
    n_beats: usize,
    encode: F,
    layer: &mut GaussianLayer,
    lif: &LifParams,
    params: &GaussianParams,
) -> Result<GaussianReport>
where
    F: Fn(usize, u32) -> Result<Vec<SpikeTrain>> + Sync,
{
    if n_beats == 0 {
        return Err(Error::UndefinedRate);
    }
    let n_windows = layer.n_windows();
    let mut rates = vec![0.0; n_windows];
    let mut epochs = 0;
    for epoch in 0..params.max_epochs {
        epochs = epoch + 1;
        let counts: Vec<Vec<u64>> = (0..n_beats)
            .into_par_iter()
            .map(|b| -> Result<Vec<u64>> {
                let trains = encode(b, epoch)?;
                if trains.len() != n_windows {
                    return Err(Error::ShapeMismatch(format!(
                        "encode produced {} windows, layer has {n_windows}",
                        trains.len()
                    )));
                }
                let mut per_window = vec![0u64; n_windows];
                for (w, train) in trains.iter().enumerate() {
                    per_window[w] = layer.run_window(w, train, lif)?.len() as u64;
                }
                Ok(per_window)
            })
            .collect::<Result<_>>()?;
        let neurons = layer.window_len() as f64;
        for w in 0..n_windows {
            let total: u64 = counts.iter().map(|c| c[w]).sum();
            rates[w] = total as f64 / (neurons * n_beats as f64);
        }
        let errors: Vec<f64> = rates
            .iter()
            .map(|r| (1.0 - r / params.r_target).abs())
            .collect();
        if errors.iter().all(|e| *e < params.epsilon) {
            return Ok(GaussianReport {
                epochs,
                converged: true,
                final_errors: errors,
                final_rates: rates,
            });
        }
        for (beta, rate) in layer.betas.iter_mut().zip(&rates) {
            let delta = update_beta(*rate, params.r_target, params.alpha_g);
            *beta = (*beta + delta).max(params.beta_min);
        }
    }
    let errors: Vec<f64> = rates
        .iter()
        .map(|r| (1.0 - r / params.r_target).abs())
        .collect();
    Ok(GaussianReport {
        epochs,
        converged: false,
        final_errors: errors,
        final_rates: rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lif::{run_layer, SpikeEvent};
    use crate::matrix::Matrix;

    #[test]
    fn kernel_peak_value() {
        let k = gaussian_kernel(126);
        // i = mu = 63 -> 1 / (42 * sqrt(2 pi))
        let expected = 1.0 / (42.0 * (2.0 * std::f64::consts::PI).sqrt());
        let got = k[62];
        assert!((got - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn kernel_is_symmetric_about_midpoint() {
        let k = gaussian_kernel(126);
        for d in 1..63 {
            // i = 63 - d and i = 63 + d
            assert_eq!(k[62 - d], k[62 + d], "asymmetry at distance {d}");
        }
    }

    #[test]
    fn gains_are_linear_in_beta() {
        let g1 = init_gains(40, 1.5);
        let g2 = init_gains(40, 3.0);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_sum_matches_truncated_mass_oracle() {
        // The discrete sum is a midpoint rule for the Gaussian over
        // [0.5, L + 0.5]; compare against a fine-grid quadrature. For
        // sigma = L/3 the window spans about +-1.5 sigma, so the mass is
        // near 0.866 of the full integral, not 1.
        let len = 126usize;
        let sum: f64 = gaussian_kernel(len).iter().sum();
        let mu = 0.5 * len as f64;
        let sigma = len as f64 / 3.0;
        let steps = 2_000_000;
        let a = 0.5;
        let b = len as f64 + 0.5;
        let h = (b - a) / steps as f64;
        let mut oracle = 0.0;
        for i in 0..steps {
            let x = a + (i as f64 + 0.5) * h;
            let z = (x - mu) / sigma;
            oracle += h * (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        }
        assert!((sum - oracle).abs() < 5e-4, "sum {sum} vs oracle {oracle}");
        assert!((sum - 0.8663).abs() < 2e-3);
    }

    #[test]
    fn update_beta_fixed_point_and_signs() {
        assert_eq!(update_beta(10.0, 10.0, 0.7), 0.0);
        assert_eq!(update_beta(0.0, 10.0, 0.7), 0.7);
        assert_eq!(update_beta(20.0, 10.0, 0.7), -0.7);
        // sign follows the rate error exactly
        for r in [0.1, 5.0, 9.9, 10.1, 30.0] {
            let d = update_beta(r, 10.0, 0.7);
            if r < 10.0 {
                assert!(d > 0.0);
            } else {
                assert!(d < 0.0);
            }
        }
    }

    #[test]
    fn mean_rate_examples() {
        let silent = vec![SpikeTrain::empty(4, 100)];
        assert_eq!(measure_mean_rate(&silent).unwrap(), 0.0);

        let once_each = vec![SpikeTrain::from_events(
            (0..4).map(|n| SpikeEvent { neuron: n, t: 5 }).collect(),
            4,
            100,
        )
        .unwrap()];
        assert_eq!(measure_mean_rate(&once_each).unwrap(), 1.0);

        // two neurons with counts {2, 4} over one beat -> mean 3
        let mut events = Vec::new();
        for t in [1, 2] {
            events.push(SpikeEvent { neuron: 0, t });
        }
        for t in [1, 2, 3, 4] {
            events.push(SpikeEvent { neuron: 1, t });
        }
        let counts = vec![SpikeTrain::from_events(events, 2, 100).unwrap()];
        assert_eq!(measure_mean_rate(&counts).unwrap(), 3.0);

        assert!(matches!(measure_mean_rate(&[]), Err(Error::UndefinedRate)));
    }

    fn periodic_train(neurons: usize, period: u32, horizon: u32) -> SpikeTrain {
        let mut events = Vec::new();
        for t in (0..horizon).step_by(period as usize) {
            for n in 0..neurons {
                events.push(SpikeEvent {
                    neuron: n as u32,
                    t,
                });
            }
        }
        SpikeTrain::from_events(events, neurons, horizon).unwrap()
    }

    #[test]
    fn run_window_matches_diagonal_run_layer() {
        let lif = LifParams::default();
        let layer = GaussianLayer::with_betas(12, vec![250.0]);
        let input = periodic_train(12, 3, 120);
        let elementwise = layer.run_window(0, &input, &lif).unwrap();
        let gains = layer.gains(0);
        let diag = Matrix::from_fn(12, 12, |r, c| if r == c { gains[r] } else { 0.0 });
        let matrix_route = run_layer(&diag, &input, &lif).unwrap();
        assert_eq!(elementwise, matrix_route);
    }

    #[test]
    fn larger_beta_never_lowers_output_rate() {
        let lif = LifParams::default();
        let input = periodic_train(10, 2, 200);
        let mut prev = 0usize;
        for beta in [1.0, 10.0, 50.0, 100.0, 300.0, 800.0] {
            let layer = GaussianLayer::with_betas(10, vec![beta]);
            let out = layer.run_window(0, &input, &lif).unwrap();
            assert!(out.len() >= prev, "beta {beta} decreased output");
            prev = out.len();
        }
    }

    #[test]
    fn training_leaves_exact_target_untouched() {
        // Inputs drive the window to exactly r_target at the initial beta:
        // every neuron fires exactly 10 times per beat downstream.
        let lif = LifParams::default();
        let mut layer = GaussianLayer::with_betas(4, vec![4000.0]);
        let params = GaussianParams {
            r_target: 10.0,
            ..Default::default()
        };
        // with a huge beta each input spike fires the neuron immediately,
        // so 10 input spikes -> 10 output spikes
        let input = periodic_train(4, 20, 200);
        let before = layer.betas.clone();
        let report = train_gaussian(
            1,
            |_b, _e| Ok(vec![input.clone()]),
            &mut layer,
            &lif,
            &params,
        )
        .unwrap();
        assert!(report.converged);
        assert_eq!(report.epochs, 1);
        assert_eq!(layer.betas, before);
        assert_eq!(report.final_rates, vec![10.0]);
    }

    #[test]
    fn beta_stays_above_clamp() {
        let lif = LifParams::default();
        let mut layer = GaussianLayer::with_betas(4, vec![0.5]);
        // saturated input and a tiny target force beta downward hard
        let params = GaussianParams {
            r_target: 0.001,
            alpha_g: 50.0,
            max_epochs: 10,
            ..Default::default()
        };
        let input = periodic_train(4, 1, 200);
        let _ = train_gaussian(
            1,
            |_b, _e| Ok(vec![input.clone()]),
            &mut layer,
            &lif,
            &params,
        )
        .unwrap();
        assert!(layer.betas.iter().all(|&b| b >= params.beta_min));
    }

    #[test]
    fn empty_pass_is_an_error() {
        let lif = LifParams::default();
        let mut layer = GaussianLayer::new(4, 1);
        let err = train_gaussian(
            0,
            |_b, _e| Ok(vec![SpikeTrain::empty(4, 10)]),
            &mut layer,
            &lif,
            &GaussianParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UndefinedRate));
    }
}

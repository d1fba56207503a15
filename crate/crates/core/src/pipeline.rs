//! End-to-end orchestration: successive layer training, inference with
//! energy accounting, and evaluation.
//!
//! Training order is fixed: Gaussian betas first, then STDP and inhibitory
//! weights together, then the R-STDP classifier on the frozen feature
//! layers. Inference runs the beat for the full horizon with the inhibitory
//! layer inactive and tallies 50 pJ per spike plus 147 pJ per synaptic
//! event, where a neuron's events equal its out-degree: encoder cells feed 1
//! synapse, Gaussian neurons fan out to the window's STDP neurons, STDP
//! neurons to every class neuron.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::encoder::{beat_len, encode_beat, Beat};
use crate::energy::{tally_energy, EnergyReport, EnergyTally};
use crate::error::{Error, Result};
use crate::gaussian::{train_gaussian, GaussianLayer, GaussianReport};
use crate::lif::{run_layer, SpikeTrain};
use crate::model::{digest_beats, Model, Provenance, Topology};
use crate::rng::{stage, stream};
use crate::rstdp::{predict, run_classifier, train_rstdp_epoch, ClassifierState};
use crate::stdp::{train_stdp_epoch, StdpEpochStats, StdpLayerState};

const TAG_ENCODE: u64 = 0;
const TAG_MASK: u64 = 1;
const TAG_ORDER: u64 = 2;

/// Deterministic presentation order for one epoch. Class-blocked training
/// sets would otherwise feed the classifier long single-class reward runs
/// that saturate its weights before the next class is ever seen.
fn epoch_order(n: usize, seed: u64, stage_tag: u64, epoch: u32) -> Vec<usize> {
    let mut rng = stream(seed, &[stage_tag, epoch as u64, TAG_ORDER]);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Beats per minute the configured presentation window supports.
pub fn beats_per_minute_capacity(horizon: u32, dt: f64) -> f64 {
    60.0 * 1000.0 / (horizon as f64 * dt)
}

/// Frame geometry derived from the configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub beat_len: usize,
    pub window_len: usize,
    pub n_windows: usize,
}

pub fn frame_of(config: &RunConfig) -> Result<Frame> {
    let beat_len = beat_len(config.data.fs);
    let half = config.windows.q.div_ceil(2);
    let window_len = beat_len.div_ceil(half);
    if window_len < 2 {
        return Err(Error::Config(format!(
            "windows.q = {} gives window length {window_len} for {beat_len}-sample beats",
            config.windows.q
        )));
    }
    Ok(Frame {
        beat_len,
        window_len,
        n_windows: 2 * config.windows.q,
    })
}

fn check_beats(beats: &[Beat], frame: &Frame, config: &RunConfig, need_labels: bool) -> Result<()> {
    if beats.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    for (i, beat) in beats.iter().enumerate() {
        if beat.samples.len() != frame.beat_len {
            return Err(Error::Config(format!(
                "beat {i}: {} samples, configuration expects {}",
                beat.samples.len(),
                frame.beat_len
            )));
        }
        if beat.fs != config.data.fs {
            return Err(Error::Config(format!(
                "beat {i}: fs {} does not match data.fs {}",
                beat.fs, config.data.fs
            )));
        }
        if need_labels && beat.label.is_none() {
            return Err(Error::Data(format!("beat {i} has no label")));
        }
    }
    Ok(())
}

/// Gaussian-layer forward for all windows of a beat.
fn gaussian_forward(
    layer: &GaussianLayer,
    trains: &[SpikeTrain],
    config: &RunConfig,
) -> Result<Vec<SpikeTrain>> {
    trains
        .iter()
        .enumerate()
        .map(|(w, train)| layer.run_window(w, train, &config.lif))
        .collect()
}

/// Frozen STDP forward: plain weighted layers, inhibition off.
fn stdp_forward_frozen(
    weights: &[crate::matrix::Matrix],
    trains: &[SpikeTrain],
    config: &RunConfig,
) -> Result<Vec<SpikeTrain>> {
    weights
        .iter()
        .zip(trains)
        .map(|(w, train)| run_layer(w, train, &config.lif))
        .collect()
}

/// Concatenates per-window trains into one train over the global neuron
/// index `window * neurons_per_window + neuron`.
fn concat_trains(trains: &[SpikeTrain], neurons_per_window: usize) -> Result<SpikeTrain> {
    let horizon = trains.first().map_or(0, |t| t.horizon());
    let total = trains.len() * neurons_per_window;
    let mut events = Vec::new();
    for (w, train) in trains.iter().enumerate() {
        let base = (w * neurons_per_window) as u32;
        for e in train.events() {
            events.push(crate::lif::SpikeEvent {
                neuron: base + e.neuron,
                t: e.t,
            });
        }
    }
    SpikeTrain::from_events(events, total, horizon)
}

/// Per-stage summary returned alongside the trained model.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub gaussian: GaussianReport,
    pub stdp_epochs: Vec<StdpEpochStats>,
    pub rstdp_accuracy: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains all stages in order and assembles the model artifact.
/// Deterministic for a given config + data: every random stream derives from
/// the master seed.
pub fn train_full(
    train_beats: &[Beat],
    config: &RunConfig,
    mut progress: impl FnMut(&str),
) -> Result<(Model, TrainReport)> {
    config.validate()?;
    let frame = frame_of(config)?;
    check_beats(train_beats, &frame, config, true)?;
    let seed = config.run.seed;
    let n_beats = train_beats.len();
    let classes = config.classes.order.clone();
    for beat in train_beats {
        let label = beat.label.as_deref().unwrap();
        if !classes.iter().any(|c| c == label) {
            return Err(Error::Data(format!(
                "unknown label '{label}' in training set"
            )));
        }
    }
    let mut warnings = Vec::new();

    // Stage 1: Gaussian gain layer.
    progress(&format!(
        "gaussian: training {} windows on {n_beats} beats (target {} spikes/beat)",
        frame.n_windows, config.gaussian.r_target
    ));
    let mut gaussian = GaussianLayer::new(frame.window_len, frame.n_windows);
    let gaussian_report = if config.gaussian.max_epochs == 0 {
        GaussianReport {
            epochs: 0,
            converged: true,
            final_errors: vec![],
            final_rates: vec![],
        }
    } else {
        let encode = |b: usize, epoch: u32| -> Result<Vec<SpikeTrain>> {
            let mut rng = stream(seed, &[stage::GAUSSIAN, epoch as u64, TAG_ENCODE, b as u64]);
            encode_beat(
                &train_beats[b],
                config.windows.q,
                &config.encoder,
                config.lif.dt,
                &mut rng,
            )
        };
        train_gaussian(
            n_beats,
            encode,
            &mut gaussian,
            &config.lif,
            &config.gaussian,
        )?
    };
    progress(&format!(
        "gaussian: {} after {} epochs (max error {:.4})",
        if gaussian_report.converged {
            "converged"
        } else {
            "NOT converged"
        },
        gaussian_report.epochs,
        gaussian_report
            .final_errors
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    ));
    if !gaussian_report.converged {
        warnings.push(format!(
            "gaussian stage hit the epoch cap ({}) before all windows reached the rate band",
            gaussian_report.epochs
        ));
    }

    // Stage 2: STDP + inhibitory layers, trained together.
    let mut stdp_state = StdpLayerState::init(
        frame.n_windows,
        frame.window_len,
        &config.stdp,
        &mut stream(seed, &[stage::WEIGHT_INIT, 1]),
    );
    let mut stdp_epochs = Vec::new();
    for epoch in 0..config.stdp.epochs {
        let order = epoch_order(n_beats, seed, stage::STDP, epoch);
        let inputs = |slot: usize| -> Result<Vec<SpikeTrain>> {
            let b = order[slot];
            let mut rng = stream(seed, &[stage::STDP, epoch as u64, TAG_ENCODE, b as u64]);
            let routed = encode_beat(
                &train_beats[b],
                config.windows.q,
                &config.encoder,
                config.lif.dt,
                &mut rng,
            )?;
            gaussian_forward(&gaussian, &routed, config)
        };
        let mut mask_rng = stream(seed, &[stage::STDP, epoch as u64, TAG_MASK]);
        let stats = train_stdp_epoch(
            n_beats,
            inputs,
            &mut stdp_state,
            &config.lif,
            &config.stdp,
            &config.inhib,
            &mut mask_rng,
        )?;
        progress(&format!(
            "stdp: epoch {}/{}: {} spikes, total |dw| {:.3}, dropped {:?}",
            epoch + 1,
            config.stdp.epochs,
            stats.spikes,
            stats.total_abs_dw,
            stats.dropped
        ));
        stdp_epochs.push(stats);
    }

    // Stage 3: R-STDP classifier on the frozen feature layers.
    let stdp_weights: Vec<_> = stdp_state.windows.iter().map(|w| w.w.clone()).collect();
    let mut classifier = ClassifierState::init(
        frame.n_windows * config.stdp.neurons_per_window,
        classes.clone(),
        config.rstdp.psi_max,
        &mut stream(seed, &[stage::WEIGHT_INIT, 2]),
    );
    let mut rstdp_accuracy = Vec::new();
    // The bistable rule keeps sharpening weights past the useful point, so
    // the weights that ship are the snapshot from the best training epoch.
    let mut best: Option<(f64, crate::matrix::Matrix)> = None;
    for epoch in 0..config.rstdp.epochs {
        let order = epoch_order(n_beats, seed, stage::RSTDP, epoch);
        let inputs = |slot: usize| -> Result<(SpikeTrain, String)> {
            let b = order[slot];
            let mut rng = stream(seed, &[stage::RSTDP, epoch as u64, TAG_ENCODE, b as u64]);
            let routed = encode_beat(
                &train_beats[b],
                config.windows.q,
                &config.encoder,
                config.lif.dt,
                &mut rng,
            )?;
            let gained = gaussian_forward(&gaussian, &routed, config)?;
            let features = stdp_forward_frozen(&stdp_weights, &gained, config)?;
            let train = concat_trains(&features, config.stdp.neurons_per_window)?;
            Ok((train, train_beats[b].label.clone().unwrap()))
        };
        let accuracy =
            train_rstdp_epoch(n_beats, inputs, &mut classifier, &config.lif, &config.rstdp)?;
        progress(&format!(
            "rstdp: epoch {}/{}: training accuracy {:.3}",
            epoch + 1,
            config.rstdp.epochs,
            accuracy
        ));
        rstdp_accuracy.push(accuracy);
        if best.as_ref().is_none_or(|(a, _)| accuracy > *a) {
            best = Some((accuracy, classifier.psi.clone()));
        }
    }
    if let Some((_, psi)) = best {
        classifier.psi = psi;
    }

    let model = Model {
        config_snapshot: config.to_canonical_toml(),
        provenance: Provenance {
            seed,
            dataset_digest: digest_beats(train_beats),
            gaussian_epochs: gaussian_report.epochs,
            gaussian_converged: gaussian_report.converged,
            stdp_epochs: config.stdp.epochs,
            rstdp_epochs: config.rstdp.epochs,
            warnings: warnings.clone(),
        },
        topology: Topology {
            q_pairs: config.windows.q,
            beat_len: frame.beat_len,
            window_len: frame.window_len,
            neurons_per_window: config.stdp.neurons_per_window,
            horizon: config.encoder.horizon,
            fs: config.data.fs,
        },
        betas: gaussian.betas.clone(),
        stdp_weights,
        inhib_weights: stdp_state
            .windows
            .iter()
            .map(|w| w.w_inhib.clone())
            .collect(),
        psi: classifier.psi.clone(),
        classes,
    };
    let report = TrainReport {
        gaussian: gaussian_report,
        stdp_epochs,
        rstdp_accuracy,
        warnings,
    };
    Ok((model, report))
}

/// Spikes fired per layer during one inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LayerSpikes {
    pub encoder: u64,
    pub gaussian: u64,
    pub stdp: u64,
    pub classifier: u64,
}

/// Result of classifying one beat.
#[derive(Clone, Debug, Serialize)]
pub struct InferenceOutcome {
    pub class_index: usize,
    pub label: String,
    pub energy: EnergyReport,
    pub layer_spikes: LayerSpikes,
    pub class_counts: Vec<u32>,
}

/// A loaded model plus the pieces rebuilt from its config snapshot.
pub struct Runtime {
    pub model: Model,
    pub config: RunConfig,
    gaussian: GaussianLayer,
}

impl Runtime {
    pub fn new(model: Model) -> Result<Runtime> {
        let config = RunConfig::from_toml_str(&model.config_snapshot)
            .map_err(|e| Error::ModelFormat(format!("embedded config snapshot invalid: {e}")))?;
        let gaussian = GaussianLayer::with_betas(model.topology.window_len, model.betas.clone());
        Ok(Runtime {
            model,
            config,
            gaussian,
        })
    }

    /// Checks that an evaluation configuration agrees with the trained
    /// topology.
    pub fn check_compatible(&self, eval: &RunConfig) -> Result<()> {
        let mut mismatches = Vec::new();
        let t = &self.model.topology;
        if eval.windows.q != t.q_pairs {
            mismatches.push(format!(
                "windows.q {} vs model {}",
                eval.windows.q, t.q_pairs
            ));
        }
        if eval.data.fs != t.fs {
            mismatches.push(format!("data.fs {} vs model {}", eval.data.fs, t.fs));
        }
        if eval.encoder.horizon != t.horizon {
            mismatches.push(format!(
                "encoder.horizon {} vs model {}",
                eval.encoder.horizon, t.horizon
            ));
        }
        if eval.stdp.neurons_per_window != t.neurons_per_window {
            mismatches.push(format!(
                "stdp.neurons_per_window {} vs model {}",
                eval.stdp.neurons_per_window, t.neurons_per_window
            ));
        }
        if eval.classes.order != self.model.classes {
            mismatches.push("classes.order differs from the model's label set".into());
        }
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Error::ModelMismatch(mismatches.join("; ")))
        }
    }

    /// Runs the frozen feature stack on a beat and returns the classifier
    /// input train (all windows' STDP outputs on the global neuron index).
    pub fn forward_features(&self, beat: &Beat, rng: &mut impl Rng) -> Result<SpikeTrain> {
        let t = &self.model.topology;
        let routed = encode_beat(
            beat,
            t.q_pairs,
            &self.config.encoder,
            self.config.lif.dt,
            rng,
        )?;
        let gained = gaussian_forward(&self.gaussian, &routed, &self.config)?;
        let features = stdp_forward_frozen(&self.model.stdp_weights, &gained, &self.config)?;
        concat_trains(&features, t.neurons_per_window)
    }

    /// Classifies one beat: runs exactly `horizon` timesteps with the
    /// inhibitory layer inactive and tallies energy per layer.
    pub fn infer_beat(&self, beat: &Beat, rng: &mut impl Rng) -> Result<InferenceOutcome> {
        let t = &self.model.topology;
        if beat.samples.len() != t.beat_len {
            return Err(Error::Config(format!(
                "beat has {} samples, model expects {}",
                beat.samples.len(),
                t.beat_len
            )));
        }
        let n_classes = self.model.classes.len();
        let mut tally = EnergyTally::default();
        let mut spikes = LayerSpikes::default();

        let routed = encode_beat(
            beat,
            t.q_pairs,
            &self.config.encoder,
            self.config.lif.dt,
            rng,
        )?;
        for train in &routed {
            spikes.encoder += train.len() as u64;
        }
        tally.add_spikes(spikes.encoder, 1);

        let gained = gaussian_forward(&self.gaussian, &routed, &self.config)?;
        for train in &gained {
            spikes.gaussian += train.len() as u64;
        }
        tally.add_spikes(spikes.gaussian, t.neurons_per_window as u64);

        let features = stdp_forward_frozen(&self.model.stdp_weights, &gained, &self.config)?;
        for train in &features {
            spikes.stdp += train.len() as u64;
        }
        tally.add_spikes(spikes.stdp, n_classes as u64);

        let concat = concat_trains(&features, t.neurons_per_window)?;
        let fwd = run_classifier(&concat, &self.model.psi, &self.config.lif)?;
        spikes.classifier = fwd.train.len() as u64;
        tally.add_spikes(spikes.classifier, 0);

        let class_index = predict(&fwd.counts, &fwd.final_potentials);
        Ok(InferenceOutcome {
            class_index,
            label: self.model.classes[class_index].clone(),
            energy: tally.report(),
            layer_spikes: spikes,
            class_counts: fwd.counts,
        })
    }
}

/// One evaluated beat.
#[derive(Clone, Debug, Serialize)]
pub struct BeatResult {
    pub index: usize,
    pub record: String,
    pub label: String,
    pub predicted: String,
    pub correct: bool,
    pub spikes: u64,
    pub synaptic_events: u64,
    pub energy_pj: f64,
    pub wall_ms: f64,
}

/// Per-record accuracy aggregate.
#[derive(Clone, Debug, Serialize)]
pub struct RecordSummary {
    pub record: String,
    pub beats: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Aggregate metrics over a labeled beat set.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub beats: usize,
    pub accuracy: f64,
    /// Rows: true class, columns: predicted class, in model class order.
    pub confusion: Vec<Vec<u32>>,
    pub classes: Vec<String>,
    pub mean_energy_pj: f64,
    pub mean_energy_uj: f64,
    pub mean_wall_ms: f64,
    pub beats_per_minute_capacity: f64,
    pub total_energy: EnergyReport,
    pub per_record: Vec<RecordSummary>,
    pub per_beat: Vec<BeatResult>,
}

/// Evaluates a trained model on labeled beats. Beat-parallel; per-beat
/// random streams derive from (seed, beat index), so the thread count never
/// changes any metric except wall time.
pub fn evaluate(runtime: &Runtime, beats: &[Beat], seed: u64) -> Result<Evaluation> {
    if beats.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let classes = &runtime.model.classes;
    for (i, beat) in beats.iter().enumerate() {
        let Some(label) = beat.label.as_deref() else {
            return Err(Error::Data(format!("test beat {i} has no label")));
        };
        if !classes.iter().any(|c| c == label) {
            return Err(Error::Data(format!(
                "test beat {i}: unknown label '{label}'"
            )));
        }
    }
    let results: Vec<BeatResult> = beats
        .par_iter()
        .enumerate()
        .map(|(i, beat)| -> Result<BeatResult> {
            let mut rng = stream(seed, &[stage::EVAL, i as u64]);
            let started = Instant::now();
            let outcome = runtime.infer_beat(beat, &mut rng)?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            let label = beat.label.clone().unwrap();
            Ok(BeatResult {
                index: i,
                record: beat.record.clone(),
                correct: outcome.label == label,
                label,
                predicted: outcome.label,
                spikes: outcome.energy.spike_count,
                synaptic_events: outcome.energy.synaptic_events,
                energy_pj: outcome.energy.energy_pj,
                wall_ms,
            })
        })
        .collect::<Result<_>>()?;

    let n = results.len();
    let mut confusion = vec![vec![0u32; classes.len()]; classes.len()];
    let mut correct = 0usize;
    let mut spikes = 0u64;
    let mut events = 0u64;
    let mut wall = 0.0;
    let mut per_record: Vec<RecordSummary> = Vec::new();
    for r in &results {
        let ti = classes.iter().position(|c| c == &r.label).unwrap();
        let pi = classes.iter().position(|c| c == &r.predicted).unwrap();
        confusion[ti][pi] += 1;
        if r.correct {
            correct += 1;
        }
        spikes += r.spikes;
        events += r.synaptic_events;
        wall += r.wall_ms;
        match per_record.iter_mut().find(|s| s.record == r.record) {
            Some(s) => {
                s.beats += 1;
                s.correct += r.correct as usize;
            }
            None => per_record.push(RecordSummary {
                record: r.record.clone(),
                beats: 1,
                correct: r.correct as usize,
                accuracy: 0.0,
            }),
        }
    }
    for s in &mut per_record {
        s.accuracy = s.correct as f64 / s.beats as f64;
    }
    let total_energy = tally_energy(spikes, events);
    Ok(Evaluation {
        beats: n,
        accuracy: correct as f64 / n as f64,
        confusion,
        classes: classes.clone(),
        mean_energy_pj: total_energy.energy_pj / n as f64,
        mean_energy_uj: total_energy.energy_pj / n as f64 * 1e-6,
        mean_wall_ms: wall / n as f64,
        beats_per_minute_capacity: beats_per_minute_capacity(
            runtime.model.topology.horizon,
            runtime.config.lif.dt,
        ),
        total_energy,
        per_record,
        per_beat: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_at_default_clock() {
        assert_eq!(beats_per_minute_capacity(200, 1.0), 300.0);
    }

    #[test]
    fn frame_for_mit_bih_defaults() {
        let config = RunConfig::default();
        let frame = frame_of(&config).unwrap();
        assert_eq!(frame.beat_len, 252);
        assert_eq!(frame.window_len, 84);
        assert_eq!(frame.n_windows, 12);
        // the window-length rule at Q = 4: ceil(252 / ceil(4/2)) = 126
        let mut q4 = config;
        q4.windows.q = 4;
        let frame = frame_of(&q4).unwrap();
        assert_eq!(frame.window_len, 126);
        assert_eq!(frame.n_windows, 8);
    }

    #[test]
    fn concat_indexing() {
        use crate::lif::SpikeEvent;
        let a = SpikeTrain::from_events(vec![SpikeEvent { neuron: 1, t: 3 }], 2, 10).unwrap();
        let b = SpikeTrain::from_events(vec![SpikeEvent { neuron: 0, t: 5 }], 2, 10).unwrap();
        let joined = concat_trains(&[a, b], 2).unwrap();
        assert_eq!(joined.neurons(), 4);
        let events = joined.events();
        assert_eq!(events[0].neuron, 1);
        assert_eq!(events[1].neuron, 2);
    }
}

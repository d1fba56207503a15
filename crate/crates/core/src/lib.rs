//! Spiking neural network engine for ECG heartbeat classification.
//!
//! The network is a fixed-timestep (1 ms) pipeline of leaky integrate-and-fire
//! layers: heartbeats are segmented around the R peak, split into overlapping
//! windows, rate-coded into dual-polarity Poisson spike trains, scaled by a
//! Gaussian gain layer with trainable per-window amplitudes, feature-extracted
//! by an STDP layer with lateral inhibition, and classified by a
//! reward-modulated STDP output layer. Every stage runs in the spike domain so
//! energy can be accounted per spike and per synaptic event.

// Validation comparisons are written negated (`!(x > 0.0)`) so NaN inputs
// fail them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod encoder;
pub mod energy;
pub mod error;
pub mod gaussian;
pub mod lif;
pub mod matrix;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod rstdp;
pub mod stdp;
pub mod synth;

pub use error::{Error, Result};

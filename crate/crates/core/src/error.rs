//! Error type shared by all engine modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A membrane potential overflowed to a non-finite value. Fatal: the
    /// simulation cannot continue with NaN/inf state.
    #[error("non-finite membrane potential in layer '{layer}' at neuron {neuron}")]
    NonFinitePotential { layer: String, neuron: usize },

    /// Dimension disagreement between a weight matrix and the trains/states
    /// it is wired to.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A beat whose segmentation window falls outside the recorded signal.
    /// Callers skip the beat and record the diagnostic.
    #[error("truncated beat: r peak at sample {r_peak} does not admit the segmentation window")]
    TruncatedBeat { r_peak: usize },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A dataset pass that produced nothing to measure.
    #[error("undefined rate: no beats processed in measurement pass")]
    UndefinedRate,

    /// Evaluation requested on an empty test set.
    #[error("no test beats")]
    EmptyTestSet,

    /// Corrupt or unsupported model file.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// A loaded model that disagrees with the active configuration topology.
    #[error("model/config mismatch: {0}")]
    ModelMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Attaches a layer name to potential-overflow errors raised by the LIF
/// kernel, which does not know which layer it is stepping.
pub trait InLayer {
    fn in_layer(self, name: &str) -> Self;
}

impl<T> InLayer for Result<T> {
    fn in_layer(self, name: &str) -> Self {
        self.map_err(|e| match e {
            Error::NonFinitePotential { layer, neuron } if layer.is_empty() => {
                Error::NonFinitePotential {
                    layer: name.to_string(),
                    neuron,
                }
            }
            other => other,
        })
    }
}

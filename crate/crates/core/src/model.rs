//! The trained model artifact and its file format.
//!
//! A model file is a single self-describing binary container: fixed magic and
//! format version, training provenance (seed, dataset digest, per-stage epoch
//! counts), the network topology, the effective configuration as embedded
//! TOML text, and every weight tensor as little-endian f64. Writing is fully
//! deterministic, so identical training runs produce byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::Beat;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"ECGSNN01";
const FORMAT_VERSION: u32 = 1;

/// How the model came to be: everything needed to reproduce or audit a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    /// FNV-1a digest of the training beats.
    pub dataset_digest: u64,
    pub gaussian_epochs: u32,
    pub gaussian_converged: bool,
    pub stdp_epochs: u32,
    pub rstdp_epochs: u32,
    pub warnings: Vec<String>,
}

/// Shape of the trained network.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// Q: window pairs; the layer count is 2Q.
    pub q_pairs: usize,
    pub beat_len: usize,
    pub window_len: usize,
    pub neurons_per_window: usize,
    pub horizon: u32,
    pub fs: f64,
}

impl Topology {
    pub fn n_windows(&self) -> usize {
        2 * self.q_pairs
    }

    pub fn classifier_inputs(&self) -> usize {
        self.n_windows() * self.neurons_per_window
    }
}

/// The trained artifact: gains, feature weights, classifier weights, labels,
/// plus the configuration snapshot that rebuilds the exact topology.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config_snapshot: String,
    pub provenance: Provenance,
    pub topology: Topology,
    /// Trained Gaussian beta per window channel (2Q).
    pub betas: Vec<f64>,
    /// Forward STDP weights per window channel, (window_len x neurons).
    pub stdp_weights: Vec<Matrix>,
    /// Inhibitory backward weights per window channel, (neurons x neurons).
    pub inhib_weights: Vec<Matrix>,
    /// Classifier weights, (2Q * neurons_per_window x classes).
    pub psi: Matrix,
    pub classes: Vec<String>,
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        put_u64(w, self.provenance.seed)?;
        put_u64(w, self.provenance.dataset_digest)?;
        put_u32(w, self.provenance.gaussian_epochs)?;
        w.write_all(&[self.provenance.gaussian_converged as u8])?;
        put_u32(w, self.provenance.stdp_epochs)?;
        put_u32(w, self.provenance.rstdp_epochs)?;
        put_u32(w, self.topology.q_pairs as u32)?;
        put_u32(w, self.topology.beat_len as u32)?;
        put_u32(w, self.topology.window_len as u32)?;
        put_u32(w, self.topology.neurons_per_window as u32)?;
        put_u32(w, self.topology.horizon)?;
        put_f64(w, self.topology.fs)?;
        put_string(w, &self.config_snapshot)?;
        put_u32(w, self.provenance.warnings.len() as u32)?;
        for warning in &self.provenance.warnings {
            put_string(w, warning)?;
        }
        put_u32(w, self.classes.len() as u32)?;
        for class in &self.classes {
            put_string(w, class)?;
        }
        put_f64_vec(w, &self.betas)?;
        put_u32(w, self.stdp_weights.len() as u32)?;
        for m in &self.stdp_weights {
            put_matrix(w, m)?;
        }
        put_u32(w, self.inhib_weights.len() as u32)?;
        for m in &self.inhib_weights {
            put_matrix(w, m)?;
        }
        put_matrix(w, &self.psi)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Model> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::ModelFormat("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic; not a model file".into()));
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let seed = get_u64(r)?;
        let dataset_digest = get_u64(r)?;
        let gaussian_epochs = get_u32(r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)
            .map_err(|_| Error::ModelFormat("truncated file".into()))?;
        let gaussian_converged = flag[0] != 0;
        let stdp_epochs = get_u32(r)?;
        let rstdp_epochs = get_u32(r)?;
        let q_pairs = get_u32(r)? as usize;
        let beat_len = get_u32(r)? as usize;
        let window_len = get_u32(r)? as usize;
        let neurons_per_window = get_u32(r)? as usize;
        let horizon = get_u32(r)?;
        let fs = get_f64(r)?;
        let config_snapshot = get_string(r)?;
        let n_warnings = get_u32(r)? as usize;
        let warnings = (0..n_warnings)
            .map(|_| get_string(r))
            .collect::<Result<_>>()?;
        let n_classes = get_u32(r)? as usize;
        let classes: Vec<String> = (0..n_classes)
            .map(|_| get_string(r))
            .collect::<Result<_>>()?;
        let betas = get_f64_vec(r)?;
        let n_stdp = get_u32(r)? as usize;
        let stdp_weights: Vec<Matrix> =
            (0..n_stdp).map(|_| get_matrix(r)).collect::<Result<_>>()?;
        let n_inhib = get_u32(r)? as usize;
        let inhib_weights: Vec<Matrix> =
            (0..n_inhib).map(|_| get_matrix(r)).collect::<Result<_>>()?;
        let psi = get_matrix(r)?;

        let model = Model {
            config_snapshot,
            provenance: Provenance {
                seed,
                dataset_digest,
                gaussian_epochs,
                gaussian_converged,
                stdp_epochs,
                rstdp_epochs,
                warnings,
            },
            topology: Topology {
                q_pairs,
                beat_len,
                window_len,
                neurons_per_window,
                horizon,
                fs,
            },
            betas,
            stdp_weights,
            inhib_weights,
            psi,
            classes,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let t = &self.topology;
        let n_windows = t.n_windows();
        if self.betas.len() != n_windows {
            return Err(Error::ModelFormat(format!(
                "betas: expected {n_windows} entries, found {}",
                self.betas.len()
            )));
        }
        if self.stdp_weights.len() != n_windows || self.inhib_weights.len() != n_windows {
            return Err(Error::ModelFormat("weight tensor count mismatch".into()));
        }
        for m in &self.stdp_weights {
            if m.rows() != t.window_len || m.cols() != t.neurons_per_window {
                return Err(Error::ModelFormat("stdp weight shape mismatch".into()));
            }
        }
        for m in &self.inhib_weights {
            if m.rows() != t.neurons_per_window || m.cols() != t.neurons_per_window {
                return Err(Error::ModelFormat(
                    "inhibitory weight shape mismatch".into(),
                ));
            }
        }
        if self.psi.rows() != t.classifier_inputs() || self.psi.cols() != self.classes.len() {
            return Err(Error::ModelFormat(
                "classifier weight shape mismatch".into(),
            ));
        }
        Ok(())
    }
}

/// FNV-1a over the training beats, recorded as provenance.
pub fn digest_beats(beats: &[Beat]) -> u64 {
    let mut h = Fnv::new();
    for beat in beats {
        h.update(&(beat.samples.len() as u64).to_le_bytes());
        for s in &beat.samples {
            h.update(&s.to_le_bytes());
        }
        h.update(&beat.fs.to_le_bytes());
        h.update(&(beat.r_index as u64).to_le_bytes());
        match &beat.label {
            Some(l) => {
                h.update(&[1]);
                h.update(l.as_bytes());
            }
            None => h.update(&[0]),
        }
        h.update(beat.record.as_bytes());
    }
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_string(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_f64_vec(w: &mut impl Write, v: &[f64]) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        put_f64(w, *x)?;
    }
    Ok(())
}

fn put_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    put_u32(w, m.rows() as u32)?;
    put_u32(w, m.cols() as u32)?;
    for x in m.data() {
        put_f64(w, *x)?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::ModelFormat("truncated file".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::ModelFormat("truncated file".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::ModelFormat("truncated file".into()))?;
    Ok(f64::from_le_bytes(buf))
}

fn get_string(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    if len > 64 * 1024 * 1024 {
        return Err(Error::ModelFormat("unreasonable string length".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::ModelFormat("truncated file".into()))?;
    String::from_utf8(buf).map_err(|_| Error::ModelFormat("invalid utf-8 string".into()))
}

fn get_f64_vec(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = get_u64(r)? as usize;
    if len > 1 << 32 {
        return Err(Error::ModelFormat("unreasonable tensor length".into()));
    }
    (0..len).map(|_| get_f64(r)).collect()
}

fn get_matrix(r: &mut impl Read) -> Result<Matrix> {
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    if rows.saturating_mul(cols) > 1 << 32 {
        return Err(Error::ModelFormat("unreasonable matrix size".into()));
    }
    let data = (0..rows * cols)
        .map(|_| get_f64(r))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Matrix::from_vec(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> Model {
        let q_pairs = 2;
        let window_len = 5;
        let npw = 3;
        let n_windows = 2 * q_pairs;
        Model {
            config_snapshot: "[lif]\ntau_m = 10.0\n".into(),
            provenance: Provenance {
                seed: 42,
                dataset_digest: 0xdead_beef,
                gaussian_epochs: 7,
                gaussian_converged: true,
                stdp_epochs: 3,
                rstdp_epochs: 11,
                warnings: vec!["gaussian window 2 late".into()],
            },
            topology: Topology {
                q_pairs,
                beat_len: 10,
                window_len,
                neurons_per_window: npw,
                horizon: 200,
                fs: 360.0,
            },
            betas: (0..n_windows).map(|i| 1.5 + i as f64).collect(),
            stdp_weights: (0..n_windows)
                .map(|w| Matrix::from_fn(window_len, npw, |r, c| (w + r + c) as f64 * 0.01))
                .collect(),
            inhib_weights: (0..n_windows)
                .map(|w| Matrix::from_fn(npw, npw, |r, c| -((w + r + c) as f64) * 0.1))
                .collect(),
            psi: Matrix::from_fn(n_windows * npw, 2, |r, c| (r * 2 + c) as f64 * 0.05),
            classes: vec!["normal".into(), "other".into()],
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let model = sample_model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let back = Model::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn serialization_is_deterministic() {
        let model = sample_model();
        let mut a = Vec::new();
        let mut b = Vec::new();
        model.write_to(&mut a).unwrap();
        model.write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let model = sample_model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        bytes[0] = b'X';
        let err = Model::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::ModelFormat(_)));
    }

    #[test]
    fn truncation_is_rejected() {
        let model = sample_model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        for cut in [4usize, 40, bytes.len() / 2, bytes.len() - 3] {
            let mut slice: &[u8] = &bytes[..cut];
            let err = Model::read_from(&mut slice).unwrap_err();
            assert!(
                matches!(err, Error::ModelFormat(_)),
                "cut at {cut} not caught"
            );
        }
    }

    #[test]
    fn shape_inconsistency_is_rejected() {
        let mut model = sample_model();
        model.betas.pop();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let err = Model::read_from(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(err, Error::ModelFormat(_)));
    }

    #[test]
    fn digest_sees_every_field() {
        let beat = Beat {
            samples: vec![0.5, -0.25],
            fs: 360.0,
            r_index: 1,
            label: Some("normal".into()),
            record: "r1".into(),
        };
        let base = digest_beats(std::slice::from_ref(&beat));
        let mut changed = beat.clone();
        changed.samples[0] = 0.5000001;
        assert_ne!(base, digest_beats(&[changed]));
        let mut relabeled = beat.clone();
        relabeled.label = None;
        assert_ne!(base, digest_beats(&[relabeled]));
        assert_eq!(base, digest_beats(&[beat]));
    }
}

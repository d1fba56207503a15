//! Synthetic ECG generator for desk-scale testing.
//!
//! Beats are sums of three Gaussian bumps (P, QRS, T) around an annotated R
//! peak, on a uniform noise floor. Each class has a fixed documented
//! morphology; per-beat amplitude and width jitter plus the noise floor make
//! individual beats distinct while keeping classes well separated.

use rand::Rng;

use crate::data::{Annotation, ECGRecord};
use crate::error::{Error, Result};

/// One Gaussian bump: amplitude (mV), centre offset from the R peak (s),
/// width as the Gaussian sigma (s). Zero amplitude disables the bump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub amp: f64,
    pub offset: f64,
    pub sigma: f64,
}

/// A synthetic beat class: name, annotation symbol and its three bumps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthClass {
    pub name: &'static str,
    pub symbol: char,
    pub p: Bump,
    pub qrs: Bump,
    pub t: Bump,
}

/// QRS sigma of the normal morphology (s).
pub const QRS_SIGMA_NORMAL: f64 = 0.012;
/// Width factor of the wide-QRS class relative to normal: its QRS sigma is
/// exactly this multiple of `QRS_SIGMA_NORMAL`.
pub const QRS_WIDTH_FACTOR_WIDE: f64 = 3.0;
/// Beat-to-beat spacing (s).
pub const RR_SECONDS: f64 = 0.8;
/// Uniform noise floor half-width (mV).
pub const NOISE_HALF_WIDTH: f64 = 0.15;
/// Silence kept before the first and after the last beat (s).
pub const PAD_SECONDS: f64 = 1.0;

/// The generator's class table.
pub fn synth_classes() -> &'static [SynthClass] {
    const CLASSES: [SynthClass; 3] = [
        SynthClass {
            name: "normal",
            symbol: 'N',
            p: Bump {
                amp: 0.15,
                offset: -0.17,
                sigma: 0.018,
            },
            qrs: Bump {
                amp: 1.2,
                offset: 0.0,
                sigma: QRS_SIGMA_NORMAL,
            },
            t: Bump {
                amp: 0.35,
                offset: 0.27,
                sigma: 0.045,
            },
        },
        SynthClass {
            name: "wide-qrs",
            symbol: 'V',
            p: Bump {
                amp: 0.0,
                offset: -0.17,
                sigma: 0.018,
            },
            qrs: Bump {
                amp: 0.9,
                offset: 0.0,
                sigma: QRS_SIGMA_NORMAL * QRS_WIDTH_FACTOR_WIDE,
            },
            t: Bump {
                amp: -0.4,
                offset: 0.3,
                sigma: 0.05,
            },
        },
        SynthClass {
            name: "inverted-qrs",
            symbol: 'I',
            p: Bump {
                amp: 0.1,
                offset: -0.16,
                sigma: 0.018,
            },
            qrs: Bump {
                amp: -1.1,
                offset: 0.0,
                sigma: QRS_SIGMA_NORMAL,
            },
            t: Bump {
                amp: 0.4,
                offset: 0.27,
                sigma: 0.045,
            },
        },
    ];
    &CLASSES
}

pub fn class_by_name(name: &str) -> Option<(usize, &'static SynthClass)> {
    synth_classes()
        .iter()
        .enumerate()
        .find(|(_, c)| c.name == name)
}

/// Generates one record of `n_beats` annotated beats of a single class.
/// Records are padded so every annotation admits the full segmentation
/// window. Deterministic for a given rng stream.
pub fn synth_ecg(
    class_id: usize,
    n_beats: usize,
    fs: f64,
    rng: &mut impl Rng,
) -> Result<ECGRecord> {
    let classes = synth_classes();
    let class = classes.get(class_id).ok_or_else(|| {
        Error::Config(format!(
            "unknown synthetic class id {class_id}; have {}",
            classes.len()
        ))
    })?;
    if !(fs > 0.0) {
        return Err(Error::Config("synth fs must be positive".into()));
    }
    let n = ((2.0 * PAD_SECONDS + RR_SECONDS * n_beats as f64) * fs).ceil() as usize;
    let mut samples: Vec<f64> = (0..n)
        .map(|_| rng.random_range(-NOISE_HALF_WIDTH..NOISE_HALF_WIDTH))
        .collect();
    let mut annotations = Vec::with_capacity(n_beats);
    for k in 0..n_beats {
        let r_time = PAD_SECONDS + RR_SECONDS * (k as f64 + 0.5);
        let r_sample = (r_time * fs).round() as usize;
        annotations.push(Annotation {
            sample: r_sample,
            symbol: class.symbol,
        });
        for bump in [class.p, class.qrs, class.t] {
            if bump.amp == 0.0 {
                continue;
            }
            let amp = bump.amp * rng.random_range(0.95..1.05);
            let sigma = bump.sigma * rng.random_range(0.95..1.05);
            let centre = r_time + bump.offset;
            let lo = ((centre - 4.0 * sigma) * fs).floor().max(0.0) as usize;
            let hi = (((centre + 4.0 * sigma) * fs).ceil() as usize).min(n - 1);
            for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let t = i as f64 / fs;
                let z = (t - centre) / sigma;
                *s += amp * (-0.5 * z * z).exp();
            }
        }
    }
    let record = ECGRecord {
        record_id: format!("synth-{}", class.name),
        fs,
        samples,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

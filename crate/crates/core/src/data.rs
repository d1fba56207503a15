//! Annotated ECG record ingestion and train/test split construction.
//!
//! Records are plain CSV: signal rows `index,amplitude` (millivolts) and
//! annotation rows `index,symbol`, UTF-8, newline-terminated, no header.
//! The split follows the patient-specific evaluation protocol: listed test
//! records contribute their first five minutes to the training side and the
//! remainder to the test side, while the DS1 pool contributes a per-class
//! random sample of representative beats.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{robust_normalize, segment_beat, Beat};
use crate::error::{Error, Result};
use crate::rng::{stage, stream};

/// One beat annotation: sample index of the R peak and its label symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub sample: usize,
    pub symbol: char,
}

/// A full annotated recording.
#[derive(Clone, Debug, PartialEq)]
pub struct ECGRecord {
    pub record_id: String,
    pub fs: f64,
    pub samples: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl ECGRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::Data(format!(
                "record {}: fs must be positive",
                self.record_id
            )));
        }
        let mut prev: Option<usize> = None;
        for a in &self.annotations {
            if a.sample >= self.samples.len() {
                return Err(Error::Data(format!(
                    "record {}: annotation at sample {} beyond signal length {}",
                    self.record_id,
                    a.sample,
                    self.samples.len()
                )));
            }
            if let Some(p) = prev {
                if a.sample <= p {
                    return Err(Error::Data(format!(
                        "record {}: annotation indices not strictly increasing at {}",
                        self.record_id, a.sample
                    )));
                }
            }
            prev = Some(a.sample);
        }
        Ok(())
    }
}

/// Loads a record from its signal and annotation CSV files.
pub fn load_record(
    signal_path: &Path,
    ann_path: &Path,
    record_id: &str,
    fs: f64,
) -> Result<ECGRecord> {
    let signal_text = fs::read_to_string(signal_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", signal_path.display())))?;
    let mut samples = Vec::new();
    for (lineno, line) in signal_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (idx, amp) = split_row(line).ok_or_else(|| {
            Error::Data(format!(
                "{}: line {}: expected 'index,amplitude'",
                signal_path.display(),
                lineno + 1
            ))
        })?;
        let idx: usize = idx.parse().map_err(|_| {
            Error::Data(format!(
                "{}: line {}: bad index '{idx}'",
                signal_path.display(),
                lineno + 1
            ))
        })?;
        if idx != samples.len() {
            return Err(Error::Data(format!(
                "{}: line {}: index {idx} out of order (expected {})",
                signal_path.display(),
                lineno + 1,
                samples.len()
            )));
        }
        let amp: f64 = amp.parse().map_err(|_| {
            Error::Data(format!(
                "{}: line {}: bad amplitude '{amp}'",
                signal_path.display(),
                lineno + 1
            ))
        })?;
        samples.push(amp);
    }

    let ann_text = fs::read_to_string(ann_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", ann_path.display())))?;
    let mut annotations = Vec::new();
    for (lineno, line) in ann_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (idx, sym) = split_row(line).ok_or_else(|| {
            Error::Data(format!(
                "{}: line {}: expected 'index,symbol'",
                ann_path.display(),
                lineno + 1
            ))
        })?;
        let sample: usize = idx.parse().map_err(|_| {
            Error::Data(format!(
                "{}: line {}: bad index '{idx}'",
                ann_path.display(),
                lineno + 1
            ))
        })?;
        let mut chars = sym.chars();
        let symbol = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::Data(format!(
                    "{}: line {}: label must be a single symbol, got '{sym}'",
                    ann_path.display(),
                    lineno + 1
                )))
            }
        };
        annotations.push(Annotation { sample, symbol });
    }

    let record = ECGRecord {
        record_id: record_id.to_string(),
        fs,
        samples,
        annotations,
    };
    record.validate()?;
    Ok(record)
}

fn split_row(line: &str) -> Option<(&str, &str)> {
    let mut parts = line.split(',');
    let a = parts.next()?;
    let b = parts.next()?;
    if parts.next().is_some() {
        return None;
    }
    Some((a, b))
}

/// Writes a record back to the CSV pair. Amplitudes use the shortest
/// round-tripping decimal form, so a load of the written files reproduces the
/// samples bit-exactly.
pub fn write_record(record: &ECGRecord, signal_path: &Path, ann_path: &Path) -> Result<()> {
    let mut signal = fs::File::create(signal_path)?;
    let mut buf = String::new();
    for (i, s) in record.samples.iter().enumerate() {
        buf.push_str(&format!("{i},{s}\n"));
    }
    signal.write_all(buf.as_bytes())?;
    let mut ann = fs::File::create(ann_path)?;
    let mut buf = String::new();
    for a in &record.annotations {
        buf.push_str(&format!("{},{}\n", a.sample, a.symbol));
    }
    ann.write_all(buf.as_bytes())?;
    Ok(())
}

/// Which records feed which side of the evaluation, and how the DS1 pool is
/// sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    /// Test records: everything after `skip_seconds` is test data, the
    /// beginning goes to the training side.
    pub test_records: Vec<String>,
    /// Pool of representative records sampled per class into the training
    /// side. Empty disables pool sampling.
    pub ds1_records: Vec<String>,
    /// Beats sampled per class from the DS1 pool, where available.
    pub per_class_train: usize,
    /// The patient-specific lead-in taken from each test record (seconds).
    pub skip_seconds: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_records: mit_bih_ds2_test().iter().map(|s| s.to_string()).collect(),
            ds1_records: mit_bih_ds1().iter().map(|s| s.to_string()).collect(),
            per_class_train: 150,
            skip_seconds: 300.0,
        }
    }
}

/// The 24 DS2 test records of the patient-specific protocol.
pub fn mit_bih_ds2_test() -> &'static [&'static str] {
    &[
        "200", "201", "202", "203", "205", "207", "208", "209", "210", "212", "213", "214", "215",
        "219", "220", "221", "222", "223", "228", "230", "231", "232", "233", "234",
    ]
}

/// The representative-signal group of the database (the 100-series records).
pub fn mit_bih_ds1() -> &'static [&'static str] {
    &[
        "100", "101", "102", "103", "104", "105", "106", "107", "108", "109", "111", "112", "113",
        "114", "115", "116", "117", "118", "119", "121", "122", "123", "124",
    ]
}

/// Symbol-to-class table. Symbols missing from the table are skipped and
/// counted, not errors: real records carry non-beat annotations.
pub type ClassMap = BTreeMap<char, String>;

/// Output of [`make_split`].
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<Beat>,
    pub test: Vec<Beat>,
    /// Beats skipped because the segmentation window fell outside the signal.
    pub truncated_beats: usize,
    /// Annotations skipped because their symbol has no class mapping.
    pub unmapped_symbols: usize,
}

/// Builds the train/test beat sets. Deterministic given the seed; train and
/// test are disjoint by construction (every annotation lands on exactly one
/// side).
pub fn make_split(
    records: &[ECGRecord],
    spec: &SplitSpec,
    class_map: &ClassMap,
    classes: &[String],
    normalize: bool,
    seed: u64,
) -> Result<Split> {
    let by_id: BTreeMap<&str, &ECGRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    for id in spec.test_records.iter().chain(&spec.ds1_records) {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::Data(format!(
                "record '{id}' referenced by split but not loaded"
            )));
        }
    }

    let mut split = Split::default();

    let beats_of = |record: &ECGRecord, split: &mut Split| -> Vec<(Beat, f64)> {
        let samples = if normalize {
            robust_normalize(&record.samples)
        } else {
            record.samples.clone()
        };
        let mut beats = Vec::new();
        for a in &record.annotations {
            let Some(class) = class_map.get(&a.symbol) else {
                split.unmapped_symbols += 1;
                continue;
            };
            match segment_beat(&samples, a.sample, record.fs) {
                Ok(mut beat) => {
                    beat.label = Some(class.clone());
                    beat.record = record.record_id.clone();
                    let t = a.sample as f64 / record.fs;
                    beats.push((beat, t));
                }
                Err(Error::TruncatedBeat { .. }) => split.truncated_beats += 1,
                Err(e) => panic!("unexpected segmentation error: {e}"),
            }
        }
        beats
    };

    // Test records: five-minute lead-in to train, the rest to test.
    for id in &spec.test_records {
        let record = by_id[id.as_str()];
        for (beat, t) in beats_of(record, &mut split) {
            if t < spec.skip_seconds {
                split.train.push(beat);
            } else {
                split.test.push(beat);
            }
        }
    }

    // DS1 pool: per-class sampling into the training side.
    if !spec.ds1_records.is_empty() && spec.per_class_train > 0 {
        let mut pool: BTreeMap<String, Vec<Beat>> = BTreeMap::new();
        for id in &spec.ds1_records {
            let record = by_id[id.as_str()];
            for (beat, _) in beats_of(record, &mut split) {
                let class = beat.label.clone().unwrap();
                pool.entry(class).or_default().push(beat);
            }
        }
        for (class_idx, class) in classes.iter().enumerate() {
            let beats = pool.remove(class).unwrap_or_default();
            if beats.is_empty() {
                return Err(Error::Data(format!(
                    "class '{class}' requested for training but absent from the DS1 pool"
                )));
            }
            if beats.len() <= spec.per_class_train {
                split.train.extend(beats);
            } else {
                let mut rng = stream(seed, &[stage::SPLIT, class_idx as u64]);
                // partial Fisher-Yates: the first k slots become the sample
                let mut indices: Vec<usize> = (0..beats.len()).collect();
                for i in 0..spec.per_class_train {
                    let j = rng.random_range(i..indices.len());
                    indices.swap(i, j);
                }
                let mut chosen = indices[..spec.per_class_train].to_vec();
                chosen.sort_unstable();
                for idx in chosen {
                    split.train.push(beats[idx].clone());
                }
            }
        }
    }

    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream as rng_stream;
    use rand::Rng;

    fn write_files(
        dir: &Path,
        name: &str,
        signal: &str,
        ann: &str,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let s = dir.join(format!("{name}.csv"));
        let a = dir.join(format!("{name}.ann"));
        fs::write(&s, signal).unwrap();
        fs::write(&a, ann).unwrap();
        (s, a)
    }

    #[test]
    fn loads_minimal_record() {
        let dir = tempfile::tempdir().unwrap();
        let (s, a) = write_files(dir.path(), "r", "0,0.5\n1,-0.25\n", "1,N\n");
        let record = load_record(&s, &a, "r", 360.0).unwrap();
        assert_eq!(record.samples, vec![0.5, -0.25]);
        assert_eq!(
            record.annotations,
            vec![Annotation {
                sample: 1,
                symbol: 'N'
            }]
        );
    }

    #[test]
    fn rejects_non_monotone_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let (s, a) = write_files(dir.path(), "r", "0,0.1\n1,0.2\n2,0.3\n", "2,N\n1,V\n");
        let err = load_record(&s, &a, "r", 360.0).unwrap_err();
        assert!(err.to_string().contains("strictly increasing"));
    }

    #[test]
    fn rejects_out_of_bounds_annotation() {
        let dir = tempfile::tempdir().unwrap();
        let (s, a) = write_files(dir.path(), "r", "0,0.1\n", "5,N\n");
        assert!(load_record(&s, &a, "r", 360.0).is_err());
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let (s, a) = write_files(dir.path(), "r", "0,0.1\nbogus\n", "0,N\n");
        let err = load_record(&s, &a, "r", 360.0).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let (s, a) = write_files(dir.path(), "r2", "0,0.1\n", "0,NSR\n");
        let err = load_record(&s, &a, "r2", 360.0).unwrap_err();
        assert!(err.to_string().contains("single symbol"));
    }

    #[test]
    fn segmentation_length_from_fs() {
        // at 360 Hz a segmentable annotation yields the 252-sample beat
        let n = 2000usize;
        let samples: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        let record = ECGRecord {
            record_id: "r".into(),
            fs: 360.0,
            samples,
            annotations: vec![Annotation {
                sample: 1000,
                symbol: 'N',
            }],
        };
        let beat = segment_beat(&record.samples, 1000, record.fs).unwrap();
        assert_eq!(beat.samples.len(), 252);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rng_stream(11, &[1]);
        let samples: Vec<f64> = (0..500).map(|_| rng.random_range(-2.0..2.0)).collect();
        let record = ECGRecord {
            record_id: "rt".into(),
            fs: 250.0,
            samples,
            annotations: vec![
                Annotation {
                    sample: 100,
                    symbol: 'N',
                },
                Annotation {
                    sample: 300,
                    symbol: 'V',
                },
            ],
        };
        let s = dir.path().join("rt.csv");
        let a = dir.path().join("rt.ann");
        write_record(&record, &s, &a).unwrap();
        let back = load_record(&s, &a, "rt", 250.0).unwrap();
        assert_eq!(record.samples.len(), back.samples.len());
        for (x, y) in record.samples.iter().zip(&back.samples) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(record.annotations, back.annotations);
    }

    fn toy_record(id: &str, fs: f64, n_beats: usize, symbol: char) -> ECGRecord {
        // beats every second, 1s lead-in/out; aperiodic samples so every
        // segmentation window is unique
        let rr = fs as usize;
        let n = rr * (n_beats + 2);
        let samples: Vec<f64> = (0..n)
            .map(|i| (i as f64 * 0.37).sin() * 0.5 + i as f64 * 1e-5)
            .collect();
        let annotations = (0..n_beats)
            .map(|k| Annotation {
                sample: rr * (k + 1),
                symbol,
            })
            .collect();
        ECGRecord {
            record_id: id.into(),
            fs,
            samples,
            annotations,
        }
    }

    fn simple_map() -> ClassMap {
        let mut m = ClassMap::new();
        m.insert('N', "normal".to_string());
        m.insert('V', "ventricular".to_string());
        m
    }

    #[test]
    fn five_minute_boundary() {
        let fs = 10.0; // keep the record small: 300 s = sample 3000
        let mut record = toy_record("t", fs, 0, 'N');
        record.samples = vec![0.0; 4000];
        // 299.9 s -> sample 2999 (train side), 300.1 s -> sample 3001 (test)
        record.annotations = vec![
            Annotation {
                sample: 2999,
                symbol: 'N',
            },
            Annotation {
                sample: 3001,
                symbol: 'N',
            },
        ];
        let spec = SplitSpec {
            test_records: vec!["t".into()],
            ds1_records: vec![],
            per_class_train: 0,
            skip_seconds: 300.0,
        };
        let split = make_split(
            &[record],
            &spec,
            &simple_map(),
            &["normal".into()],
            false,
            1,
        )
        .unwrap();
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.test.len(), 1);
    }

    #[test]
    fn degenerate_spec_keeps_only_lead_in_beats() {
        let record = toy_record("t", 100.0, 8, 'N');
        let spec = SplitSpec {
            test_records: vec!["t".into()],
            ds1_records: vec![],
            per_class_train: 0,
            skip_seconds: 5.5,
        };
        let split =
            make_split(&[record], &spec, &simple_map(), &["normal".into()], true, 1).unwrap();
        // beats at 1..=8 s; t < 5.5 -> train
        assert_eq!(split.train.len(), 5);
        assert_eq!(split.test.len(), 3);
        assert!(split
            .train
            .iter()
            .all(|b| b.label.as_deref() == Some("normal")));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let records = vec![
            toy_record("a", 100.0, 40, 'N'),
            toy_record("b", 100.0, 40, 'V'),
            toy_record("t", 100.0, 10, 'N'),
        ];
        let spec = SplitSpec {
            test_records: vec!["t".into()],
            ds1_records: vec!["a".into(), "b".into()],
            per_class_train: 15,
            skip_seconds: 4.0,
        };
        let classes = vec!["normal".to_string(), "ventricular".to_string()];
        let s1 = make_split(&records, &spec, &simple_map(), &classes, true, 7).unwrap();
        let s2 = make_split(&records, &spec, &simple_map(), &classes, true, 7).unwrap();
        assert_eq!(s1.train, s2.train);
        assert_eq!(s1.test, s2.test);
        // 15 sampled per class + 3 lead-in beats of the test record
        assert_eq!(s1.train.len(), 15 * 2 + 3);
        let key = |b: &Beat| (b.record.clone(), b.r_index, b.samples.len());
        for tr in &s1.train {
            for te in &s1.test {
                assert_ne!((key(tr), tr.samples.clone()), (key(te), te.samples.clone()));
            }
        }
        let s3 = make_split(&records, &spec, &simple_map(), &classes, true, 8).unwrap();
        assert_eq!(s3.train.len(), s1.train.len());
    }

    #[test]
    fn absent_class_is_reported() {
        let records = vec![
            toy_record("a", 100.0, 10, 'N'),
            toy_record("t", 100.0, 4, 'N'),
        ];
        let spec = SplitSpec {
            test_records: vec!["t".into()],
            ds1_records: vec!["a".into()],
            per_class_train: 5,
            skip_seconds: 2.0,
        };
        let classes = vec!["normal".to_string(), "ventricular".to_string()];
        let err = make_split(&records, &spec, &simple_map(), &classes, true, 7).unwrap_err();
        assert!(err.to_string().contains("ventricular"));
    }

    #[test]
    fn missing_record_is_reported() {
        let spec = SplitSpec {
            test_records: vec!["ghost".into()],
            ds1_records: vec![],
            per_class_train: 0,
            skip_seconds: 300.0,
        };
        let err = make_split(&[], &spec, &simple_map(), &[], true, 1).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn unmapped_symbols_and_truncated_beats_are_counted() {
        let mut record = toy_record("t", 100.0, 6, 'N');
        record.annotations.push(Annotation {
            sample: record.samples.len() - 2,
            symbol: 'N',
        });
        record.annotations.insert(
            0,
            Annotation {
                sample: 3,
                symbol: 'N',
            },
        );
        record.annotations[2].symbol = '+'; // rhythm marker, unmapped
        let spec = SplitSpec {
            test_records: vec!["t".into()],
            ds1_records: vec![],
            per_class_train: 0,
            skip_seconds: 0.0,
        };
        let split = make_split(
            &[record],
            &spec,
            &simple_map(),
            &["normal".into()],
            false,
            1,
        )
        .unwrap();
        assert_eq!(split.truncated_beats, 2);
        assert_eq!(split.unmapped_symbols, 1);
        assert_eq!(split.test.len(), 5);
    }
}

//! Shared fixtures for the integration and acceptance suites.

use snn_ecg_core::config::RunConfig;
use snn_ecg_core::data::{make_split, ECGRecord, SplitSpec};
use snn_ecg_core::encoder::{pre_samples, Beat};
use snn_ecg_core::rng::{stage, stream};
use snn_ecg_core::synth::{synth_classes, synth_ecg};

/// Generates the three-class synthetic dataset: per class one training
/// record and one test record, split via the standard split machinery.
pub fn synth_dataset(
    seed: u64,
    train_per_class: usize,
    test_per_class: usize,
) -> (Vec<Beat>, Vec<Beat>, RunConfig) {
    let config = RunConfig::synthetic("unused", seed);
    let mut records: Vec<ECGRecord> = Vec::new();
    let mut test_ids = Vec::new();
    let mut train_ids = Vec::new();
    for (cid, class) in synth_classes().iter().enumerate() {
        let mut r = synth_ecg(
            cid,
            train_per_class,
            config.data.fs,
            &mut stream(seed, &[stage::SYNTH, cid as u64, 0]),
        )
        .unwrap();
        r.record_id = format!("synth-{}-train", class.name);
        train_ids.push(r.record_id.clone());
        records.push(r);
        let mut r = synth_ecg(
            cid,
            test_per_class,
            config.data.fs,
            &mut stream(seed, &[stage::SYNTH, cid as u64, 1]),
        )
        .unwrap();
        r.record_id = format!("synth-{}-test", class.name);
        test_ids.push(r.record_id.clone());
        records.push(r);
    }
    let spec = SplitSpec {
        test_records: test_ids,
        ds1_records: train_ids,
        per_class_train: train_per_class,
        skip_seconds: 0.0,
    };
    let class_map = config.class_map().unwrap();
    let split = make_split(
        &records,
        &spec,
        &class_map,
        &config.classes.order,
        config.data.normalize,
        seed,
    )
    .unwrap();
    (split.train, split.test, config)
}

/// A beat of constant absolute amplitude with alternating sign, so both
/// polarity channels carry the same drive.
pub fn constant_amplitude_beat(amplitude: f64, fs: f64) -> Beat {
    let n = snn_ecg_core::encoder::beat_len(fs);
    Beat {
        samples: (0..n)
            .map(|i| if i % 2 == 0 { amplitude } else { -amplitude })
            .collect(),
        fs,
        r_index: pre_samples(fs),
        label: None,
        record: String::new(),
    }
}

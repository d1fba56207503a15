//! Command-line driver: training, evaluation, synthetic data generation and
//! energy re-tallying.
//!
//! Subcommands: `train`, `eval`, `synth`, `energy`. Any flag of the form
//! `--section.key=value` overrides the matching configuration key. Exit
//! codes: 0 success, 2 configuration error, 3 model/config mismatch, 4 empty
//! test data, 1 anything else.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use snn_ecg_core::config::RunConfig;
use snn_ecg_core::data::{load_record, make_split, write_record, ECGRecord, Split};
use snn_ecg_core::energy::tally_energy;
use snn_ecg_core::error::Error;
use snn_ecg_core::model::Model;
use snn_ecg_core::pipeline::{evaluate, train_full, Evaluation, Runtime};
use snn_ecg_core::rng::{stage, stream};
use snn_ecg_core::synth::{class_by_name, synth_classes, synth_ecg};

const EXIT_CONFIG: u8 = 2;
const EXIT_MISMATCH: u8 = 3;
const EXIT_EMPTY: u8 = 4;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::ModelMismatch(_) => EXIT_MISMATCH,
        Error::EmptyTestSet => EXIT_EMPTY,
        _ => 1,
    }
}

fn run(args: &[String]) -> Result<(), Error> {
    let Some(command) = args.first() else {
        return Err(Error::Config(usage()));
    };
    let rest = &args[1..];
    match command.as_str() {
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "synth" => cmd_synth(rest),
        "energy" => cmd_energy(rest),
        "--help" | "-h" | "help" => {
            println!("{}", usage());
            Ok(())
        }
        other => Err(Error::Config(format!(
            "unknown subcommand '{other}'\n{}",
            usage()
        ))),
    }
}

fn usage() -> String {
    "usage:\n  \
     snn-ecg train  --config <file> [--out <model.bin>] [--log <file>] [--section.key=value ...]\n  \
     snn-ecg eval   --model <model.bin> --config <file> [--out-prefix <prefix>] [--section.key=value ...]\n  \
     snn-ecg synth  --out-dir <dir> [--class <name>] [--train-beats <n>] [--test-beats <n>] [--fs <hz>] [--seed <n>]\n  \
     snn-ecg energy --log <prefix>beats.log"
        .to_string()
}

/// Parsed command line: plain `--flag value` / `--flag=value` options plus
/// dotted `--section.key=value` configuration overrides.
struct Parsed {
    options: BTreeMap<String, String>,
    overrides: Vec<(String, String)>,
}

fn parse_args(args: &[String], known: &[&str]) -> Result<Parsed, Error> {
    let mut options = BTreeMap::new();
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(body) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!(
                "unexpected argument '{arg}'\n{}",
                usage()
            )));
        };
        let (name, inline_value) = match body.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if name.contains('.') {
            let Some(value) = inline_value else {
                return Err(Error::Config(format!(
                    "override '--{name}' must use --section.key=value syntax"
                )));
            };
            overrides.push((name, value));
        } else if known.contains(&name.as_str()) {
            let value = match inline_value {
                Some(v) => v,
                None => {
                    i += 1;
                    args.get(i)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("flag '--{name}' needs a value")))?
                }
            };
            options.insert(name, value);
        } else {
            return Err(Error::Config(format!(
                "unknown flag '--{name}'\n{}",
                usage()
            )));
        }
        i += 1;
    }
    Ok(Parsed { options, overrides })
}

fn configure_threads(config: &RunConfig) {
    if config.run.threads > 0 {
        // Repeat initialisation in one process is ignored: pool size cannot
        // change results, only wall time.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.run.threads)
            .build_global();
    }
}

/// Loads every record referenced by the split spec from the data directory.
fn load_records(config: &RunConfig) -> Result<Vec<ECGRecord>, Error> {
    let dir = Path::new(&config.data.dir);
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "data.dir '{}' is not a directory",
            config.data.dir
        )));
    }
    let mut ids: Vec<&String> = config
        .split
        .test_records
        .iter()
        .chain(&config.split.ds1_records)
        .collect();
    ids.sort();
    ids.dedup();
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        let signal = dir.join(format!("{id}.csv"));
        let ann = dir.join(format!("{id}.ann"));
        records.push(load_record(&signal, &ann, id, config.data.fs)?);
    }
    Ok(records)
}

fn build_split(config: &RunConfig) -> Result<Split, Error> {
    let records = load_records(config)?;
    let class_map = config.class_map()?;
    make_split(
        &records,
        &config.split,
        &class_map,
        &config.classes.order,
        config.data.normalize,
        config.run.seed,
    )
}

fn cmd_train(args: &[String]) -> Result<(), Error> {
    let parsed = parse_args(args, &["config", "out", "log"])?;
    let config_path = parsed
        .options
        .get("config")
        .ok_or_else(|| Error::Config("train: --config is required".into()))?;
    let out_path = PathBuf::from(
        parsed
            .options
            .get("out")
            .cloned()
            .unwrap_or_else(|| "model.bin".into()),
    );
    let log_path = parsed
        .options
        .get("log")
        .map(PathBuf::from)
        .unwrap_or_else(|| out_path.with_extension("log"));

    let config = RunConfig::load(Path::new(config_path), &parsed.overrides)?;
    configure_threads(&config);
    let split = build_split(&config)?;
    if split.truncated_beats > 0 || split.unmapped_symbols > 0 {
        eprintln!(
            "note: skipped {} truncated beats, {} unmapped annotation symbols",
            split.truncated_beats, split.unmapped_symbols
        );
    }
    eprintln!(
        "training on {} beats ({} test beats held out)",
        split.train.len(),
        split.test.len()
    );
    let mut log_lines: Vec<String> = Vec::new();
    let (model, report) = train_full(&split.train, &config, |msg| {
        eprintln!("{msg}");
        log_lines.push(msg.to_string());
    })?;
    model.save(&out_path)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
        log_lines.push(format!("warning: {warning}"));
    }
    log_lines.push(format!(
        "done: model={} seed={} dataset_digest={:016x} train_beats={}",
        out_path.display(),
        model.provenance.seed,
        model.provenance.dataset_digest,
        split.train.len()
    ));
    fs::write(&log_path, log_lines.join("\n") + "\n")?;
    println!("model={}", out_path.display());
    println!("log={}", log_path.display());
    println!("train_beats={}", split.train.len());
    println!("gaussian_converged={}", model.provenance.gaussian_converged);
    Ok(())
}

fn print_and_format_eval(eval: &Evaluation) -> String {
    let mut lines = Vec::new();
    lines.push(format!("beats={}", eval.beats));
    lines.push(format!("accuracy={:.6}", eval.accuracy));
    lines.push(format!("mean_energy_uj={:.6}", eval.mean_energy_uj));
    lines.push(format!("mean_wall_ms={:.4}", eval.mean_wall_ms));
    lines.push(format!(
        "capacity_beats_per_minute={}",
        eval.beats_per_minute_capacity
    ));
    lines.push(format!("total_spikes={}", eval.total_energy.spike_count));
    lines.push(format!(
        "total_synaptic_events={}",
        eval.total_energy.synaptic_events
    ));
    for (i, row) in eval.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        lines.push(format!("confusion.{}={}", eval.classes[i], cells.join(",")));
    }
    for r in &eval.per_record {
        lines.push(format!(
            "record={} beats={} correct={} accuracy={:.6}",
            r.record, r.beats, r.correct, r.accuracy
        ));
    }
    let text = lines.join("\n");
    println!("{text}");
    text
}

fn cmd_eval(args: &[String]) -> Result<(), Error> {
    let parsed = parse_args(args, &["model", "config", "out-prefix"])?;
    let model_path = parsed
        .options
        .get("model")
        .ok_or_else(|| Error::Config("eval: --model is required".into()))?;
    let config_path = parsed
        .options
        .get("config")
        .ok_or_else(|| Error::Config("eval: --config is required".into()))?;
    let prefix = parsed
        .options
        .get("out-prefix")
        .cloned()
        .unwrap_or_else(|| "eval-".into());

    let eval_config = RunConfig::load(Path::new(config_path), &parsed.overrides)?;
    configure_threads(&eval_config);
    let model = Model::load(Path::new(model_path))?;
    let runtime = Runtime::new(model)?;
    runtime.check_compatible(&eval_config)?;

    let split = build_split(&eval_config)?;
    if split.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let eval = evaluate(&runtime, &split.test, eval_config.run.seed)?;

    let summary_text = print_and_format_eval(&eval);
    let summary_path = format!("{prefix}summary.json");
    let json = serde_json::to_string_pretty(&eval)
        .map_err(|e| Error::Data(format!("summary serialization failed: {e}")))?;
    fs::write(&summary_path, json)?;

    let beats_path = format!("{prefix}beats.log");
    let mut beats_file = fs::File::create(&beats_path)?;
    for b in &eval.per_beat {
        writeln!(
            beats_file,
            "beat={} record={} label={} pred={} correct={} spikes={} events={} energy_pj={} wall_ms={:.4}",
            b.index, b.record, b.label, b.predicted, b.correct, b.spikes, b.synaptic_events,
            b.energy_pj, b.wall_ms
        )?;
    }
    let metrics_path = format!("{prefix}metrics.txt");
    fs::write(&metrics_path, summary_text + "\n")?;
    eprintln!("wrote {summary_path}, {beats_path}, {metrics_path}");
    Ok(())
}

fn cmd_synth(args: &[String]) -> Result<(), Error> {
    let parsed = parse_args(
        args,
        &[
            "out-dir",
            "class",
            "train-beats",
            "test-beats",
            "fs",
            "seed",
        ],
    )?;
    let out_dir = parsed
        .options
        .get("out-dir")
        .ok_or_else(|| Error::Config("synth: --out-dir is required".into()))?;
    let train_beats: usize = parse_num(&parsed, "train-beats", 67)?;
    let test_beats: usize = parse_num(&parsed, "test-beats", 34)?;
    let fs_hz: f64 = parse_num(&parsed, "fs", 360.0)?;
    let seed: u64 = parse_num(&parsed, "seed", 42u64)?;

    let selected: Vec<usize> = match parsed.options.get("class") {
        Some(name) => {
            let (id, _) = class_by_name(name).ok_or_else(|| {
                let names: Vec<&str> = synth_classes().iter().map(|c| c.name).collect();
                Error::Config(format!("unknown class '{name}'; available: {names:?}"))
            })?;
            vec![id]
        }
        None => (0..synth_classes().len()).collect(),
    };

    let dir = Path::new(out_dir);
    fs::create_dir_all(dir)?;
    for &cid in &selected {
        let class = &synth_classes()[cid];
        for (suffix, n_beats, stream_tag) in
            [("train", train_beats, 0u64), ("test", test_beats, 1u64)]
        {
            let mut record = synth_ecg(
                cid,
                n_beats,
                fs_hz,
                &mut stream(seed, &[stage::SYNTH, cid as u64, stream_tag]),
            )?;
            record.record_id = format!("synth-{}-{suffix}", class.name);
            let signal = dir.join(format!("{}.csv", record.record_id));
            let ann = dir.join(format!("{}.ann", record.record_id));
            write_record(&record, &signal, &ann)?;
            println!(
                "wrote {} ({} beats, {} samples)",
                record.record_id,
                record.annotations.len(),
                record.samples.len()
            );
        }
    }

    // A ready-to-run configuration accompanies the full class set.
    if selected.len() == synth_classes().len() {
        let mut config = RunConfig::synthetic(out_dir, seed);
        config.data.fs = fs_hz;
        config.split.per_class_train = train_beats;
        let path = dir.join("synth-config.toml");
        fs::write(&path, config.to_canonical_toml())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(parsed: &Parsed, key: &str, default: T) -> Result<T, Error> {
    match parsed.options.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("--{key}: cannot parse '{raw}'"))),
    }
}

/// Re-tallies energy from a saved per-beat log (`spikes=` / `events=` fields).
fn cmd_energy(args: &[String]) -> Result<(), Error> {
    let parsed = parse_args(args, &["log"])?;
    let log_path = parsed
        .options
        .get("log")
        .ok_or_else(|| Error::Config("energy: --log is required".into()))?;
    let text = fs::read_to_string(log_path)?;
    let mut beats = 0u64;
    let mut spikes = 0u64;
    let mut events = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut line_spikes = None;
        let mut line_events = None;
        for field in line.split_whitespace() {
            if let Some(v) = field.strip_prefix("spikes=") {
                line_spikes = v.parse::<u64>().ok();
            } else if let Some(v) = field.strip_prefix("events=") {
                line_events = v.parse::<u64>().ok();
            }
        }
        let (Some(s), Some(e)) = (line_spikes, line_events) else {
            return Err(Error::Data(format!(
                "{log_path}: line {}: missing spikes=/events= fields",
                lineno + 1
            )));
        };
        beats += 1;
        spikes += s;
        events += e;
    }
    if beats == 0 {
        return Err(Error::Data(format!("{log_path}: no beat lines found")));
    }
    let total = tally_energy(spikes, events);
    println!("beats={beats}");
    println!("total_spikes={spikes}");
    println!("total_synaptic_events={events}");
    println!("total_energy_pj={}", total.energy_pj);
    println!(
        "mean_energy_pj_per_beat={:.4}",
        total.energy_pj / beats as f64
    );
    println!(
        "mean_energy_uj_per_beat={:.6}",
        total.energy_pj / beats as f64 * 1e-6
    );
    Ok(())
}

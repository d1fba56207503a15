//! Run configuration: one TOML file with a section per subsystem, strict
//! validation, and dotted-path overrides (`section.key=value`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassMap, SplitSpec};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::lif::LifParams;
use crate::rstdp::RstdpParams;
use crate::stdp::{InhibParams, StdpParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every random stream in a run derives from it.
    pub seed: u64,
    /// Worker threads for beat-parallel phases. 0 = library default.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowsSection {
    /// Number of overlapping windows a beat is split into.
    pub q: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self { q: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding `<record>.csv` / `<record>.ann` pairs.
    pub dir: String,
    /// Sampling rate of all records (Hz).
    pub fs: f64,
    /// Normalize each record to zero median, unit inter-quartile range.
    pub normalize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: "data".into(),
            fs: 360.0,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassesSection {
    /// Ordered class names; the classifier has one neuron per entry.
    pub order: Vec<String>,
    /// Annotation symbol to class name.
    pub map: BTreeMap<String, String>,
}

impl Default for ClassesSection {
    fn default() -> Self {
        // AAMI-style five-class grouping of the standard beat symbols.
        let pairs: &[(&str, &str)] = &[
            ("N", "N"),
            ("L", "N"),
            ("R", "N"),
            ("e", "N"),
            ("j", "N"),
            ("A", "S"),
            ("a", "S"),
            ("J", "S"),
            ("S", "S"),
            ("V", "V"),
            ("E", "V"),
            ("F", "F"),
            ("/", "Q"),
            ("f", "Q"),
            ("Q", "Q"),
        ];
        Self {
            order: ["N", "S", "V", "F", "Q"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            map: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

/// The complete, validated run configuration.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub lif: LifParams,
    pub windows: WindowsSection,
    pub encoder: EncoderParams,
    pub gaussian: GaussianParams,
    pub stdp: StdpParams,
    pub inhib: InhibParams,
    pub rstdp: RstdpParams,
    pub data: DataSection,
    pub split: SplitSpec,
    pub classes: ClassesSection,
}

impl RunConfig {
    /// Parses TOML text into a validated configuration.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        Self::from_table(value)
    }

    /// Loads a file and applies `section.key=value` overrides on top.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<RunConfig> {
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML serialization; embedded in model files as the config
    /// snapshot. Field order is fixed, so equal configs give equal text.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The symbol-to-class table with parsed char keys.
    pub fn class_map(&self) -> Result<ClassMap> {
        let mut map = ClassMap::new();
        for (k, v) in &self.classes.map {
            let mut chars = k.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::Config(format!(
                    "classes.map: key '{k}' must be a single symbol"
                )));
            };
            map.insert(c, v.clone());
        }
        Ok(map)
    }

    /// Validates every section and their interactions, reporting all
    /// violations keyed by section and field.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut push_err = |r: Result<()>| {
            if let Err(e) = r {
                problems.push(match e {
                    Error::Config(msg) => msg,
                    other => other.to_string(),
                });
            }
        };
        push_err(self.lif.validate());
        push_err(self.encoder.validate());
        push_err(self.gaussian.validate());
        push_err(self.stdp.validate());
        push_err(self.inhib.validate());
        push_err(self.rstdp.validate());
        if self.windows.q < 1 {
            problems.push("windows.q must be >= 1".into());
        }
        if !(self.data.fs > 0.0) {
            problems.push("data.fs must be positive".into());
        }
        if self.split.skip_seconds < 0.0 {
            problems.push("split.skip_seconds must be >= 0".into());
        }
        if self.classes.order.is_empty() {
            problems.push("classes.order must name at least one class".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for class in &self.classes.order {
            if !seen.insert(class) {
                problems.push(format!("classes.order: duplicate class '{class}'"));
            }
        }
        for (symbol, class) in &self.classes.map {
            if symbol.chars().count() != 1 {
                problems.push(format!(
                    "classes.map: key '{symbol}' must be a single symbol"
                ));
            }
            if !self.classes.order.iter().any(|c| c == class) {
                problems.push(format!(
                    "classes.map: '{symbol}' maps to '{class}' which is not in classes.order"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Ready-made configuration for the synthetic three-class generator.
    pub fn synthetic(data_dir: &str, seed: u64) -> RunConfig {
        let mut config = RunConfig::default();
        config.run.seed = seed;
        config.data.dir = data_dir.into();
        config.classes.order = vec!["normal".into(), "wide-qrs".into(), "inverted-qrs".into()];
        config.classes.map = [("N", "normal"), ("V", "wide-qrs"), ("I", "inverted-qrs")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        config.split = SplitSpec {
            test_records: vec![
                "synth-normal-test".into(),
                "synth-wide-qrs-test".into(),
                "synth-inverted-qrs-test".into(),
            ],
            ds1_records: vec![
                "synth-normal-train".into(),
                "synth-wide-qrs-train".into(),
                "synth-inverted-qrs-train".into(),
            ],
            per_class_train: 150,
            skip_seconds: 0.0,
        };
        config
    }
}

/// Sets one dotted-path key in the raw TOML table. The value text is parsed
/// as TOML when possible (numbers, booleans, arrays, quoted strings) and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, key_path: &str, value: &str) -> Result<()> {
    let segments: Vec<&str> = key_path.split('.').collect();
    if segments.len() < 2 || segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!(
            "override '{key_path}': expected section.key[=...] with at least two segments"
        )));
    }
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!("override '{key_path}': '{segment}' is not a table"))
            })?;
    }
    current.insert(segments.last().unwrap().to_string(), parsed);
    Ok(())
}

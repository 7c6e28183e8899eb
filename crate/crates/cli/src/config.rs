//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use qreal::scenarios::Params;

pub const DEFAULT_TRIALS: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Oracle {
    Ci,
    Unitary,
}

impl Oracle {
    pub fn name(self) -> &'static str {
        match self {
            Oracle::Ci => "ci",
            Oracle::Unitary => "unitary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// A record-flip fault: an unchecked level swap on `subsystem` inserted
/// before schedule step `step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub subsystem: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub parameters: Params,
    pub trials: u64,
    pub seed: u64,
    pub compare: Vec<Oracle>,
    pub format: Format,
    pub output: Option<PathBuf>,
    pub audit: bool,
    pub fault: Option<Fault>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(untagged)]
enum CompareField {
    #[default]
    None,
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    #[serde(default)]
    parameters: BTreeMap<String, toml::Value>,
    trials: Option<u64>,
    seed: Option<u64>,
    #[serde(default)]
    compare: CompareField,
    format: Option<String>,
    output: Option<PathBuf>,
    audit: Option<bool>,
}

/// Flag values; `None` means "not given on the command line".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub set: Vec<String>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub compare: Option<String>,
    pub format: Option<String>,
    pub output: Option<PathBuf>,
    pub audit: bool,
    pub fault: Option<String>,
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_compare(items: &[String]) -> Result<Vec<Oracle>, ConfigError> {
    let mut out = Vec::new();
    for item in items.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        let o = match item {
            "ci" => Oracle::Ci,
            "unitary" => Oracle::Unitary,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown comparison '{other}' (expected ci or unitary)"
                )))
            }
        };
        if !out.contains(&o) {
            out.push(o);
        }
    }
    Ok(out)
}

fn parse_format(s: &str) -> Result<Format, ConfigError> {
    match s.trim() {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        other => Err(ConfigError::Invalid(format!("unknown format '{other}' (expected json or csv)"))),
    }
}

fn parse_fault(s: &str) -> Result<Fault, ConfigError> {
    let bad = || ConfigError::Invalid(format!("fault must be SUBSYSTEM@STEP, got '{s}'"));
    let (a, b) = s.split_once('@').ok_or_else(bad)?;
    Ok(Fault {
        subsystem: a.trim().parse().map_err(|_| bad())?,
        step: b.trim().parse().map_err(|_| bad())?,
    })
}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    /// Loads the config file if one is given and applies flag overrides.
    pub fn resolve(o: &Overrides) -> Result<Self, ConfigError> {
        let file = match &o.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };

        let scenario = o
            .scenario
            .clone()
            .or(file.scenario)
            .ok_or_else(|| ConfigError::Invalid("no scenario given (use --scenario or a config file)".into()))?;

        let mut parameters: Params = file.parameters.iter().map(|(k, v)| (k.clone(), value_text(v))).collect();
        for kv in &o.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("--set expects key=value, got '{kv}'")))?;
            parameters.insert(k.trim().to_string(), v.trim().to_string());
        }

        let trials = o.trials.or(file.trials).unwrap_or(DEFAULT_TRIALS);
        if trials == 0 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }

        let compare = match &o.compare {
            Some(c) => parse_compare(std::slice::from_ref(c))?,
            None => match file.compare {
                CompareField::None => Vec::new(),
                CompareField::One(s) => parse_compare(&[s])?,
                CompareField::Many(v) => parse_compare(&v)?,
            },
        };

        let format = match o.format.as_deref().or(file.format.as_deref()) {
            Some(f) => parse_format(f)?,
            None => Format::Json,
        };

        Ok(RunConfig {
            scenario,
            parameters,
            trials,
            seed: o.seed.or(file.seed).unwrap_or(0),
            compare,
            format,
            output: o.output.clone().or(file.output),
            audit: o.audit || file.audit.unwrap_or(false),
            fault: o.fault.as_deref().map(parse_fault).transpose()?,
        })
    }
}

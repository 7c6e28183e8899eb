//! Finite-dimensional thought experiments and the trial runners that drive
//! them through dynamics, event detection and realization.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dynamics::Schedule;
use crate::error::{QrealError, Result};
use crate::events::Conditioning;
use crate::hilbert::{StateVector, SubsystemLayout};

mod builders;
pub mod gates;
mod runner;

pub use builders::{
    build_bound_pair, build_decay_counter, build_epr, build_grating, build_spectator,
    build_stern_gerlach, build_superposition_probe, build_wigner_chain, bound_pair_weights,
    GratingProfile,
};
pub use runner::{
    run_ensemble, run_trial, EnsembleResult, MarkerAnalysis, MarkerFrequency, PreparedScenario,
    TrialAudit, TrialSample,
};
pub(crate) use runner::branch_value as runner_branch_value;

/// Scenario parameters as given on the command line or in a config file.
pub type Params = BTreeMap<String, String>;

/// How a trial's realized records are condensed into one outcome label.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryRule {
    /// `n=<number of records reading 1>`.
    Count { records: Vec<usize> },
    /// One `+` (pointer 0) or `-` (pointer 1) per record.
    Signs { records: Vec<usize> },
    /// `<prefix>=<pointer>` of a single record.
    Position { record: usize, prefix: String },
    /// Pointer digits of every record, concatenated.
    Digits { records: Vec<usize> },
    /// `<prefix>=<j>` where `j` is the basis state of `subsystem` carried by
    /// the branch realized at the last marker. Used where no records exist.
    Branch { subsystem: usize, prefix: String },
}

impl SummaryRule {
    /// Summary from realized records and, for [`SummaryRule::Branch`], the
    /// basis value of the tracked subsystem.
    pub fn summarize(&self, records: &Conditioning, branch_value: Option<usize>) -> String {
        let get = |r: &usize| records.get(r).copied();
        match self {
            SummaryRule::Count { records: rs } => {
                format!("n={}", rs.iter().filter(|r| get(r) == Some(1)).count())
            }
            SummaryRule::Signs { records: rs } => rs
                .iter()
                .map(|r| match get(r) {
                    Some(0) => '+',
                    Some(_) => '-',
                    None => '?',
                })
                .collect(),
            SummaryRule::Position { record, prefix } => match get(record) {
                Some(v) => format!("{prefix}={v}"),
                None => format!("{prefix}=?"),
            },
            SummaryRule::Digits { records: rs } => rs
                .iter()
                .map(|r| get(r).map_or_else(|| "?".to_string(), |v| v.to_string()))
                .collect(),
            SummaryRule::Branch { prefix, .. } => match branch_value {
                Some(v) => format!("{prefix}={v}"),
                None => format!("{prefix}=?"),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    /// Effective parameter values, defaults included.
    pub parameters: Params,
    pub layout: Arc<SubsystemLayout>,
    pub initial_state: StateVector,
    pub schedule: Schedule,
    pub summary: SummaryRule,
    /// Set for models whose coupling is a modeling choice rather than a
    /// direct encoding.
    pub interpretive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub summary: String,
    pub records: Conditioning,
}

pub const STOCK_SCENARIOS: &[&str] = &[
    "grating",
    "decay_counter",
    "epr",
    "stern_gerlach",
    "wigner_chain",
    "bound_pair",
    "spectator",
    "superposition_probe",
];

fn reject_unknown(params: &Params, known: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !known.contains(&k.as_str()) {
            return Err(QrealError::ConfigError(format!(
                "unknown parameter '{k}' (expected one of: {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(params: &Params, key: &str, default: T) -> Result<T> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| QrealError::ConfigError(format!("cannot parse {key}={v}"))),
    }
}

fn parse_list(params: &Params, key: &str) -> Result<Option<Vec<f64>>> {
    params
        .get(key)
        .map(|v| {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| QrealError::ConfigError(format!("cannot parse {key}={v}")))
                })
                .collect()
        })
        .transpose()
}

fn axis(params: &Params, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
    match parse_list(params, key)? {
        None => Ok(default),
        Some(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
        Some(_) => Err(QrealError::ConfigError(format!("{key} needs three components"))),
    }
}

/// Builds a stock scenario from string parameters. Missing parameters take
/// the defaults documented in the README.
pub fn build_named(name: &str, params: &Params) -> Result<ScenarioSpec> {
    match name {
        "grating" => {
            reject_unknown(params, &["n_paths", "profile", "propagate"])?;
            let n = parse(params, "n_paths", 4usize)?;
            let profile = match parse_list(params, "profile")? {
                None => GratingProfile::Uniform,
                Some(v) => GratingProfile::Amplitudes(v),
            };
            build_grating(n, &profile, parse(params, "propagate", false)?)
        }
        "decay_counter" => {
            reject_unknown(params, &["m_atoms", "p_decay", "p_detect"])?;
            build_decay_counter(
                parse(params, "m_atoms", 8usize)?,
                parse(params, "p_decay", 0.5)?,
                parse(params, "p_detect", 1.0)?,
            )
        }
        "epr" => {
            reject_unknown(params, &["axis_a", "axis_b", "theta_deg"])?;
            let a = axis(params, "axis_a", [0.0, 0.0, 1.0])?;
            let b = match params.get("theta_deg") {
                Some(_) => {
                    let t = parse(params, "theta_deg", 0.0f64)?.to_radians();
                    [t.sin(), 0.0, t.cos()]
                }
                None => axis(params, "axis_b", [0.0, 0.0, 1.0])?,
            };
            build_epr(a, b)
        }
        "stern_gerlach" => {
            reject_unknown(params, &["recohere", "marks_environment"])?;
            build_stern_gerlach(
                parse(params, "recohere", true)?,
                parse(params, "marks_environment", true)?,
            )
        }
        "wigner_chain" => {
            reject_unknown(params, &["k", "p_right"])?;
            build_wigner_chain(parse(params, "k", 5usize)?, parse(params, "p_right", 0.5)?)
        }
        "bound_pair" => {
            reject_unknown(params, &["d", "hop", "binding", "steps", "dt"])?;
            build_bound_pair(
                parse(params, "d", 4usize)?,
                parse(params, "hop", 1.0)?,
                parse(params, "binding", 1.0)?,
                parse(params, "steps", 8usize)?,
                parse(params, "dt", 0.35)?,
            )
        }
        "spectator" => {
            reject_unknown(params, &["delta"])?;
            build_spectator(parse(params, "delta", 0.5)?)
        }
        "superposition_probe" => {
            reject_unknown(params, &["p", "theta"])?;
            let p: f64 = parse(params, "p", 0.1)?;
            let default_theta = 2.0 * p.clamp(0.0, 1.0).sqrt().asin();
            build_superposition_probe(p, parse(params, "theta", default_theta)?)
        }
        other => Err(QrealError::ConfigError(format!(
            "unknown scenario '{other}' (expected one of: {})",
            STOCK_SCENARIOS.join(", ")
        ))),
    }
}

/// Every stock scenario at its default parameters.
pub fn stock_specs() -> Result<Vec<ScenarioSpec>> {
    STOCK_SCENARIOS
        .iter()
        .map(|n| build_named(n, &Params::new()))
        .collect()
}

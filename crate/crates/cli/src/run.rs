use std::collections::BTreeMap;

use qreal::dynamics::{check_unitarity, EvolutionStep};
use qreal::oracle::{compare_distributions, compare_histograms, run_full_unitary, CiOracle, Comparison, CI_SEED_OFFSET};
use qreal::reality::{audit_ledger, constituent_consistency, reality_value, BranchQuery};
use qreal::scenarios::{build_named, gates, EnsembleResult, PreparedScenario, ScenarioSpec, TrialSample};
use qreal::{QrealError, Tolerances};

use crate::config::{Oracle, RunConfig};
use crate::CliError;

/// A comparison is flagged as divergent when the homogeneity or
/// goodness-of-fit test rejects at this level and the distance is material.
pub const DIVERGENCE_P: f64 = 1e-3;
pub const DIVERGENCE_TV: f64 = 0.02;
pub const NORM_DRIFT_LIMIT: f64 = 1e-9;

pub struct OracleComparison {
    pub oracle: Oracle,
    /// Counts for sampled oracles, probabilities for the unitary one.
    pub counts: Option<BTreeMap<String, u64>>,
    pub probabilities: Option<BTreeMap<String, f64>>,
    pub comparison: Comparison,
    pub divergent: bool,
}

pub struct Counterexample {
    pub seed: u64,
    pub violations: Vec<String>,
    pub ledger_lines: String,
}

pub struct Invariant {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub counterexample: Option<Counterexample>,
}

pub struct RunOutcome {
    pub ensemble: EnsembleResult,
    pub comparisons: Vec<OracleComparison>,
    pub invariants: Option<Vec<Invariant>>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.ensemble.audit_violations == 0
            && self.invariants.as_ref().is_none_or(|v| v.iter().all(|i| i.passed))
    }
}

pub struct AuditReport {
    pub invariants: Vec<Invariant>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }
}

pub fn build_spec(cfg: &RunConfig) -> Result<ScenarioSpec, CliError> {
    let mut spec = build_named(&cfg.scenario, &cfg.parameters)?;
    if let Some(f) = cfg.fault {
        if f.subsystem >= spec.layout.len() {
            return Err(QrealError::IndexError(format!("fault subsystem {} out of range", f.subsystem)).into());
        }
        let d = spec.layout.dim(f.subsystem);
        let flip = EvolutionStep::unitary(vec![f.subsystem], gates::swap_levels(d, 0, 1))?.labeled("injected flip");
        spec.schedule.inject_unchecked_step(f.step, flip);
    }
    Ok(spec)
}

fn compare(spec: &ScenarioSpec, cfg: &RunConfig, observed: &BTreeMap<String, u64>, oracle: Oracle) -> Result<OracleComparison, CliError> {
    let (counts, probabilities, comparison) = match oracle {
        Oracle::Ci => {
            let ci = CiOracle::new(spec.clone())?.ensemble(cfg.trials, cfg.seed.wrapping_add(CI_SEED_OFFSET))?;
            let c = compare_histograms(observed, &ci)?;
            (Some(ci), None, c)
        }
        Oracle::Unitary => {
            let p = run_full_unitary(spec)?;
            let c = compare_distributions(observed, &p)?;
            (None, Some(p), c)
        }
    };
    let divergent = comparison.chi_square_p_value < DIVERGENCE_P && comparison.total_variation >= DIVERGENCE_TV;
    Ok(OracleComparison {
        oracle,
        counts,
        probabilities,
        comparison,
        divergent,
    })
}

pub fn run(spec: &ScenarioSpec, cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let prepared = PreparedScenario::new(spec.clone())?;
    let ensemble = prepared.ensemble(cfg.trials, cfg.seed)?;
    let comparisons = cfg
        .compare
        .iter()
        .map(|&o| compare(spec, cfg, &ensemble.histogram, o))
        .collect::<Result<Vec<_>, _>>()?;

    let mut warnings = Vec::new();
    for c in comparisons.iter().filter(|c| c.divergent) {
        warnings.push(format!(
            "trajectory distribution diverges from the {} oracle (TV {:.4}, p {:.3e})",
            c.oracle.name(),
            c.comparison.total_variation,
            c.comparison.chi_square_p_value
        ));
    }
    if ensemble.unverifiable_entries > 0 {
        warnings.push(format!(
            "{} ledger entries realized at markers whose branches later recohered",
            ensemble.unverifiable_entries
        ));
    }
    if spec.interpretive {
        warnings.push(format!("scenario '{}' uses an interpretive coupling model", spec.name));
    }
    let invariants = if cfg.audit { Some(invariants(&prepared, cfg)?) } else { None };
    Ok(RunOutcome {
        ensemble,
        comparisons,
        invariants,
        warnings,
    })
}

pub fn audit(spec: &ScenarioSpec, cfg: &RunConfig) -> Result<AuditReport, CliError> {
    let prepared = PreparedScenario::new(spec.clone())?;
    Ok(AuditReport {
        invariants: invariants(&prepared, cfg)?,
    })
}

/// Violations of the one-realized-branch rule in one trial.
fn realized_violations(s: &TrialSample) -> Vec<String> {
    let mut v = Vec::new();
    for e in &s.ledger.entries {
        if e.branch >= e.retained_branches {
            v.push(format!("epoch {}: realized branch {} of {}", e.epoch, e.branch, e.retained_branches));
        }
    }
    if let Some(last) = s.ledger.entries.last() {
        if s.token.epoch != last.epoch {
            v.push(format!("token at epoch {} after ledger epoch {}", s.token.epoch, last.epoch));
        }
        let mut total = 0u32;
        for index in 0..last.retained_branches {
            match reality_value(&s.token, BranchQuery { epoch: last.epoch, index }) {
                Ok(x) => total += u32::from(x),
                Err(e) => v.push(e.to_string()),
            }
        }
        if total != 1 {
            v.push(format!("epoch {}: {total} branches carry reality value 1", last.epoch));
        }
    }
    v
}

/// Quantization and conservation violations in one trial.
fn conservation_violations(s: &TrialSample, tol: &Tolerances) -> Vec<String> {
    let mut v = audit_ledger(&s.ledger).violations;
    let mut records = BTreeMap::new();
    for e in &s.ledger.entries {
        records.extend(e.records.iter().copied());
    }
    if records != s.token.realized_records {
        v.push("token records differ from the ledger's realized records".into());
    }
    if !constituent_consistency(&s.token, tol) {
        v.push("realized branch factors are inconsistent".into());
    }
    v
}

struct Tally {
    name: &'static str,
    failing: u64,
    first: Option<Counterexample>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, failing: 0, first: None }
    }

    fn add(&mut self, seed: u64, violations: Vec<String>, ledger: impl FnOnce() -> String) {
        if violations.is_empty() {
            return;
        }
        self.failing += 1;
        if self.first.is_none() {
            self.first = Some(Counterexample {
                seed,
                violations,
                ledger_lines: ledger(),
            });
        }
    }

    fn finish(self, trials: u64) -> Invariant {
        Invariant {
            name: self.name,
            passed: self.failing == 0,
            detail: format!("{} of {trials} trials violate", self.failing),
            counterexample: self.first,
        }
    }
}

fn invariants(prepared: &PreparedScenario, cfg: &RunConfig) -> Result<Vec<Invariant>, CliError> {
    let tol = *prepared.tolerances();
    let mut one = Tally::new("exactly_one_realized");
    let mut cons = Tally::new("reality_conservation");
    let mut hist = Tally::new("record_history");
    for i in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(i);
        match prepared.sample(seed) {
            Ok(s) => {
                one.add(seed, realized_violations(&s), || s.ledger.to_lines());
                cons.add(seed, conservation_violations(&s, &tol), || s.ledger.to_lines());
            }
            Err(e @ QrealError::HistoryInconsistent { .. }) => hist.add(seed, vec![e.to_string()], String::new),
            Err(e) => return Err(e.into()),
        }
    }

    let spec = prepared.spec();
    let report = check_unitarity(&spec.schedule, &spec.initial_state)?;
    let norm = Invariant {
        name: "norm",
        passed: report.max_norm_drift <= NORM_DRIFT_LIMIT && report.max_unitarity_deviation <= tol.unit,
        detail: format!(
            "max norm drift {:.3e}, max unitarity deviation {:.3e} over {} steps",
            report.max_norm_drift, report.max_unitarity_deviation, report.steps
        ),
        counterexample: None,
    };

    let seeds = [cfg.seed, cfg.seed.wrapping_add(1)];
    let finals: Vec<Result<Vec<u8>, QrealError>> = seeds
        .iter()
        .map(|&s| prepared.trajectory(s).map(|(t, _)| t.final_state.to_bytes()))
        .collect();
    let seed_independence = match (&finals[0], &finals[1]) {
        (Ok(a), Ok(b)) => Invariant {
            name: "seed_independence",
            passed: a == b,
            detail: format!(
                "final state ({} bytes) {} for seeds {} and {}",
                a.len(),
                if a == b { "identical" } else { "differs" },
                seeds[0],
                seeds[1]
            ),
            counterexample: None,
        },
        (Err(e), _) | (_, Err(e)) => Invariant {
            name: "seed_independence",
            passed: false,
            detail: format!("trajectory failed: {e}"),
            counterexample: None,
        },
    };

    Ok(vec![
        one.finish(cfg.trials),
        cons.finish(cfg.trials),
        hist.finish(cfg.trials),
        norm,
        seed_independence,
    ])
}

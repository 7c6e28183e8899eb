//! JSON and CSV rendering. Maps are sorted, so output bytes depend only on
//! the configuration, the seed and the program version.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::{json, Map, Value};

use qreal::oracle::frequencies;
use qreal::scenarios::ScenarioSpec;

use crate::config::{Format, RunConfig};
use crate::run::{Counterexample, Invariant, OracleComparison, RunOutcome, DIVERGENCE_P, DIVERGENCE_TV};

pub const RUN_SCHEMA: &str = "qreal.run/1";
pub const AUDIT_SCHEMA: &str = "qreal.audit/1";

fn run_definitions() -> Value {
    json!({
        "trials": "count of trajectories; trial i uses seed + i",
        "seed": "seed of the first trajectory (unitless integer)",
        "histogram": "count of trajectories per outcome summary",
        "frequencies": "fraction of trajectories per outcome summary, in [0, 1]",
        "mean_info_bits": "mean over trajectories of the total information, in bits (-log2 of each realized branch probability)",
        "max_info_bits_by_epoch": "largest information gained at each epoch over all trajectories, in bits",
        "markers.step": "schedule step index after which the marker fires",
        "markers.realized": "count of trajectories in which the marker realized a branch",
        "markers.branch_counts": "count of trajectories per realized branch label",
        "unverifiable_entries": "count of ledger entries whose branches later recohered",
        "audit.trials": "count of audited trajectories",
        "audit.violations": "count of invariant violations over all audited trajectories",
        "comparisons.*.histogram": "oracle count per outcome summary, same trial count",
        "comparisons.*.probabilities": "oracle Born probability per outcome summary, in [0, 1]",
        "comparisons.*.total_variation": "half the L1 distance between outcome distributions, in [0, 1]",
        "comparisons.*.chi_square": "Pearson statistic after pooling sparse bins; null means infinite",
        "comparisons.*.degrees_of_freedom": "degrees of freedom of the chi-square test",
        "comparisons.*.p_value": "upper-tail chi-square probability, in [0, 1]",
        "comparisons.*.divergent": format!("true when p_value < {DIVERGENCE_P:e} and total_variation >= {DIVERGENCE_TV}"),
        "invariants.*.passed": "true when no trajectory violates the invariant",
    })
}

fn audit_definitions() -> Value {
    json!({
        "trials": "count of audited trajectories; trial i uses seed + i",
        "seed": "seed of the first trajectory (unitless integer)",
        "invariants.*.passed": "true when the invariant holds on every audited trajectory",
        "invariants.*.counterexample.seed": "seed of the first violating trajectory",
        "invariants.*.counterexample.ledger": "ledger lines: epoch step branch probability info_bits cumulative_bits",
    })
}

fn counterexample_json(seed: u64, violations: &[String], ledger_lines: &str) -> Value {
    json!({
        "seed": seed,
        "violations": violations,
        "ledger": ledger_lines.lines().collect::<Vec<_>>(),
    })
}

fn invariants_json(v: &[Invariant]) -> Value {
    let mut m = Map::new();
    for i in v {
        m.insert(
            i.name.to_string(),
            json!({
                "passed": i.passed,
                "detail": i.detail,
                "counterexample": i.counterexample.as_ref().map(|c: &Counterexample| counterexample_json(c.seed, &c.violations, &c.ledger_lines)),
            }),
        );
    }
    Value::Object(m)
}

fn comparison_json(c: &OracleComparison) -> Value {
    let mut m = Map::new();
    if let Some(h) = &c.counts {
        m.insert("histogram".into(), json!(h));
    }
    if let Some(p) = &c.probabilities {
        m.insert("probabilities".into(), json!(p));
    }
    m.insert("total_variation".into(), json!(c.comparison.total_variation));
    m.insert("chi_square".into(), json!(c.comparison.chi_square));
    m.insert("degrees_of_freedom".into(), json!(c.comparison.degrees_of_freedom));
    m.insert("p_value".into(), json!(c.comparison.chi_square_p_value));
    m.insert("pooled".into(), json!(c.comparison.pooled));
    m.insert("divergent".into(), json!(c.divergent));
    Value::Object(m)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

pub fn render_run(cfg: &RunConfig, spec: &ScenarioSpec, out: &RunOutcome) -> String {
    match cfg.format {
        Format::Json => pretty(&run_json(cfg, spec, out)),
        Format::Csv => run_csv(out),
    }
}

fn run_json(cfg: &RunConfig, spec: &ScenarioSpec, out: &RunOutcome) -> Value {
    let e = &out.ensemble;
    let markers: Vec<Value> = e
        .marker_frequencies
        .iter()
        .map(|m| json!({"marker": m.marker, "step": m.step, "realized": m.realized, "branch_counts": m.branch_counts}))
        .collect();
    let comparisons: Map<String, Value> = out
        .comparisons
        .iter()
        .map(|c| (c.oracle.name().to_string(), comparison_json(c)))
        .collect();
    json!({
        "schema": RUN_SCHEMA,
        "definitions": run_definitions(),
        "scenario": e.scenario,
        "parameters": e.parameters,
        "interpretive": spec.interpretive,
        "trials": e.n_trials,
        "seed": cfg.seed,
        "histogram": e.histogram,
        "frequencies": frequencies(&e.histogram),
        "mean_info_bits": e.mean_info_bits,
        "max_info_bits_by_epoch": e.max_info_bits_by_epoch,
        "markers": markers,
        "unverifiable_entries": e.unverifiable_entries,
        "audit": {
            "trials": e.audited_trials,
            "violations": e.audit_violations,
            "passed": e.audit_violations == 0,
            "counterexample": e.counterexample.as_ref().map(|c| counterexample_json(c.seed, &c.violations, &c.ledger_lines)),
        },
        "comparisons": comparisons,
        "invariants": out.invariants.as_deref().map(invariants_json),
        "warnings": out.warnings,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-format table: one row per (source, outcome), ready for plotting.
fn run_csv(out: &RunOutcome) -> String {
    let mut s = String::from("source,outcome,count,value\n");
    let mut hist = |source: &str, counts: &BTreeMap<String, u64>| {
        for (k, f) in frequencies(counts) {
            let _ = writeln!(s, "{source},{},{},{f}", csv_field(&k), counts[&k]);
        }
    };
    hist("trajectories", &out.ensemble.histogram);
    for c in &out.comparisons {
        if let Some(h) = &c.counts {
            hist(c.oracle.name(), h);
        }
    }
    for c in &out.comparisons {
        if let Some(p) = &c.probabilities {
            for (k, v) in p {
                let _ = writeln!(s, "{},{},,{v}", c.oracle.name(), csv_field(k));
            }
        }
    }
    let e = &out.ensemble;
    let _ = writeln!(s, "metric,mean_info_bits,,{}", e.mean_info_bits);
    let _ = writeln!(s, "metric,audit_violations,{},", e.audit_violations);
    let _ = writeln!(s, "metric,unverifiable_entries,{},", e.unverifiable_entries);
    for c in &out.comparisons {
        let n = c.oracle.name();
        let _ = writeln!(s, "metric,{n}_total_variation,,{}", c.comparison.total_variation);
        let _ = writeln!(s, "metric,{n}_p_value,,{}", c.comparison.chi_square_p_value);
        let _ = writeln!(s, "metric,{n}_divergent,{},", u8::from(c.divergent));
    }
    if let Some(inv) = &out.invariants {
        for i in inv {
            let _ = writeln!(s, "invariant,{},{},", i.name, u8::from(i.passed));
        }
    }
    s
}

pub fn render_audit(cfg: &RunConfig, audit: &crate::run::AuditReport) -> String {
    match cfg.format {
        Format::Json => pretty(&json!({
            "schema": AUDIT_SCHEMA,
            "definitions": audit_definitions(),
            "scenario": cfg.scenario,
            "parameters": cfg.parameters,
            "trials": cfg.trials,
            "seed": cfg.seed,
            "passed": audit.passed(),
            "invariants": invariants_json(&audit.invariants),
        })),
        Format::Csv => {
            let mut s = String::from("invariant,passed,detail\n");
            for i in &audit.invariants {
                let _ = writeln!(s, "{},{},{}", i.name, u8::from(i.passed), csv_field(&i.detail));
            }
            s
        }
    }
}

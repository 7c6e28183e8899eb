use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Params, ScenarioOutcome, ScenarioSpec, SummaryRule};
use crate::dynamics::{evolve_reference, evolve_step};
use crate::error::{QrealError, Result};
use crate::events::{detect_event, subsystem_marginal, Conditioning, EventRecord};
use crate::hilbert::StateVector;
use crate::reality::{
    audit_ledger, constituent_consistency, realize_branch, recoherence_monitor, with_epoch,
    RealityLedger, RealityToken, Trajectory,
};
use crate::tolerance::Tolerances;

/// Event analysis of one marker under one realized-record history.
#[derive(Debug, Clone)]
pub struct MarkerAnalysis {
    pub event: Arc<EventRecord>,
    /// Whether a branch is realized here: the marker is an event or
    /// designates records.
    pub realizes: bool,
    /// First later step after which the event's branches have recohered.
    pub recohered_at: Option<usize>,
    /// Label of each retained branch, in retained order.
    pub labels: Vec<String>,
    /// Basis value of the summary's tracked subsystem in each retained
    /// branch, for [`SummaryRule::Branch`].
    pub branch_values: Vec<Option<usize>>,
}

type AnalysisKey = (usize, Vec<(usize, usize)>);

/// A scenario with its seed-independent global trajectory precomputed.
/// Marker analyses are memoized by realized-record history and shared by
/// every trial.
#[derive(Debug)]
pub struct PreparedScenario {
    spec: Arc<ScenarioSpec>,
    tol: Tolerances,
    /// Global state after each step.
    states: Vec<StateVector>,
    /// Reference post-state at each marker.
    references: Vec<StateVector>,
    cache: RwLock<HashMap<AnalysisKey, Arc<MarkerAnalysis>>>,
}

/// Realized history of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSample {
    pub ledger: RealityLedger,
    pub token: RealityToken,
    pub outcome: ScenarioOutcome,
    /// `(marker, branch label)` for every realization.
    pub labels: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialAudit {
    pub seed: u64,
    pub violations: Vec<String>,
    pub ledger_lines: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkerFrequency {
    pub marker: usize,
    pub step: usize,
    /// Trials that realized a branch at this marker.
    pub realized: u64,
    pub branch_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub scenario: String,
    pub parameters: Params,
    pub n_trials: u64,
    pub seed_base: u64,
    pub histogram: BTreeMap<String, u64>,
    pub mean_info_bits: f64,
    /// Largest information increment seen at each epoch (index 0 is epoch 1).
    pub max_info_bits_by_epoch: Vec<f64>,
    pub marker_frequencies: Vec<MarkerFrequency>,
    pub audited_trials: u64,
    pub audit_violations: u64,
    pub counterexample: Option<TrialAudit>,
    pub unverifiable_entries: u64,
}

impl EnsembleResult {
    pub fn frequency(&self, summary: &str) -> f64 {
        self.histogram.get(summary).copied().unwrap_or(0) as f64 / self.n_trials as f64
    }
}

/// Basis value of `subsystem` carried by retained branch `k`, read from the
/// branch factor that contains it.
pub(crate) fn branch_value(event: &EventRecord, member: usize, subsystem: usize) -> Option<usize> {
    let b = &event.branches;
    let v = b.kept.iter().position(|&s| s == subsystem)?;
    let m = &b.members[member];
    let (state, pos) = match b.view_split.side_a().iter().position(|&s| s == v) {
        Some(p) => (&m.left, p),
        None => (&m.right, b.view_split.side_b().iter().position(|&s| s == v)?),
    };
    subsystem_marginal(state, pos)
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

fn dominant_index(state: &StateVector) -> usize {
    state
        .amplitudes()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .map_or(0, |(i, _)| i)
}

pub(crate) fn branch_labels(spec: &ScenarioSpec, event: &EventRecord) -> (Vec<String>, Vec<Option<usize>>) {
    let tracked = match &spec.summary {
        SummaryRule::Branch { subsystem, .. } => Some(*subsystem),
        _ => None,
    };
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for k in event.branches.retained() {
        let m = &event.branches.members[k];
        let value = tracked.and_then(|s| branch_value(event, k, s));
        let label = match (&m.records, value) {
            (Some(r), _) if !r.is_empty() => r
                .iter()
                .map(|(s, v)| format!("{}={v}", spec.layout.label(*s)))
                .collect::<Vec<_>>()
                .join(","),
            (_, Some(v)) => v.to_string(),
            _ => format!("L{}", dominant_index(&m.left)),
        };
        labels.push(label);
        values.push(value);
    }
    (labels, values)
}

struct TrialStats {
    summary: String,
    bits: Vec<f64>,
    total_bits: f64,
    labels: Vec<(usize, String)>,
    violations: Vec<String>,
    ledger_lines: String,
    unverifiable: u64,
}

impl PreparedScenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        Self::with_tolerances(spec, Tolerances::default())
    }

    pub fn with_tolerances(spec: ScenarioSpec, tol: Tolerances) -> Result<Self> {
        spec.initial_state.require_normalized(tol.norm)?;
        let steps = spec.schedule.steps();
        let mut states = Vec::with_capacity(steps.len());
        let mut references = Vec::with_capacity(spec.schedule.markers().len());
        let mut current = spec.initial_state.clone();
        for (i, step) in steps.iter().enumerate() {
            let next = evolve_step(&current, step)?;
            if spec.schedule.marker_at(i).is_some() {
                references.push(evolve_reference(&current, step)?);
            }
            states.push(next.clone());
            current = next;
        }
        Ok(Self {
            spec: Arc::new(spec),
            tol,
            states,
            references,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    /// Global state after every step; identical for every trial.
    pub fn final_state(&self) -> &StateVector {
        self.states.last().unwrap_or(&self.spec.initial_state)
    }

    pub fn state_after(&self, step: usize) -> Option<&StateVector> {
        self.states.get(step)
    }

    /// Event analysis of marker `marker` conditioned on `conditioning`.
    pub fn analysis(&self, marker: usize, conditioning: &Conditioning) -> Result<Arc<MarkerAnalysis>> {
        let key: AnalysisKey = (marker, conditioning.iter().map(|(&a, &b)| (a, b)).collect());
        if let Some(a) = self.cache.read().expect("analysis cache poisoned").get(&key) {
            return Ok(a.clone());
        }
        let computed = Arc::new(self.analyze(marker, conditioning)?);
        let mut w = self.cache.write().expect("analysis cache poisoned");
        Ok(w.entry(key).or_insert(computed).clone())
    }

    fn analyze(&self, marker: usize, conditioning: &Conditioning) -> Result<MarkerAnalysis> {
        let m = self
            .spec
            .schedule
            .markers()
            .get(marker)
            .ok_or_else(|| QrealError::IndexError(format!("marker {marker}")))?;
        let event = Arc::new(detect_event(
            &self.states[m.step],
            &self.references[marker],
            &m.split,
            conditioning,
            &m.records,
            m.step,
            &self.tol,
        )?);
        let realizes = event.is_event || !m.records.is_empty();
        let recohered_at = if event.is_event && m.records.is_empty() {
            self.recoherence_step(&event)?
        } else {
            None
        };
        let (labels, branch_values) = branch_labels(&self.spec, &event);
        Ok(MarkerAnalysis {
            event,
            realizes,
            recohered_at,
            labels,
            branch_values,
        })
    }

    /// Evolves each retained branch component through the remaining steps
    /// and reports the first step after which they have recohered.
    fn recoherence_step(&self, event: &EventRecord) -> Result<Option<usize>> {
        let b = &event.branches;
        let layout = &self.spec.layout;
        let view_layout = Arc::new(layout.sub_layout(&b.kept)?);
        let fixed: Vec<(usize, usize)> = event.conditioning.iter().map(|(&a, &v)| (a, v)).collect();
        let mut comps = b
            .retained()
            .into_iter()
            .map(|k| b.component(k, &view_layout)?.embed(layout, &b.kept, &fixed))
            .collect::<Result<Vec<_>>>()?;
        let steps = self.spec.schedule.steps();
        for (i, step) in steps.iter().enumerate().skip(event.step_index + 1) {
            comps = comps.iter().map(|c| evolve_step(c, step)).collect::<Result<_>>()?;
            if recoherence_monitor(&comps, event, self.tol.record)?.recohered {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

    /// One trajectory: realizes a branch at every marker that calls for it,
    /// drawing from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64) -> Result<TrialSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut token = RealityToken::new();
        let mut ledger = RealityLedger::new(seed);
        let mut labels = Vec::new();
        let mut value = None;
        for step in 0..self.spec.schedule.len() {
            let Some((mi, _)) = self.spec.schedule.marker_at(step) else {
                token.mark_unobserved();
                continue;
            };
            let a = self
                .analysis(mi, &token.realized_records)
                .map_err(|e| with_epoch(e, token.epoch + 1))?;
            if !a.realizes {
                continue;
            }
            let (next, mut entry) = realize_branch(&a.event, mi, &token, &mut rng)?;
            entry.verifiable = a.recohered_at.is_none();
            labels.push((mi, a.labels[entry.branch].clone()));
            value = a.branch_values[entry.branch];
            ledger.push(entry);
            token = next;
        }
        let outcome = ScenarioOutcome {
            summary: self.spec.summary.summarize(&token.realized_records, value),
            records: token.realized_records.clone(),
        };
        Ok(TrialSample {
            ledger,
            token,
            outcome,
            labels,
        })
    }

    /// Ledger audit plus constituent consistency of the final token.
    pub fn audit(&self, sample: &TrialSample) -> Vec<String> {
        let mut v = audit_ledger(&sample.ledger).violations;
        if !constituent_consistency(&sample.token, &self.tol) {
            v.push("realized branch factors are inconsistent".into());
        }
        v
    }

    pub fn trajectory(&self, seed: u64) -> Result<(Trajectory, ScenarioOutcome)> {
        let s = self.sample(seed)?;
        Ok((
            Trajectory {
                final_state: self.final_state().clone(),
                ledger: s.ledger,
                token: s.token,
            },
            s.outcome,
        ))
    }

    fn trial_stats(&self, seed: u64) -> Result<TrialStats> {
        let s = self.sample(seed)?;
        let violations = self.audit(&s);
        let ledger_lines = if violations.is_empty() { String::new() } else { s.ledger.to_lines() };
        Ok(TrialStats {
            summary: s.outcome.summary,
            bits: s.ledger.entries.iter().map(|e| e.info_bits).collect(),
            total_bits: s.ledger.entries.last().map_or(0.0, |e| e.cumulative_bits),
            unverifiable: s.ledger.entries.iter().filter(|e| !e.verifiable).count() as u64,
            labels: s.labels,
            violations,
            ledger_lines,
        })
    }

    /// Runs trials with seeds `seed_base + i` in parallel and aggregates
    /// them in seed order.
    pub fn ensemble(&self, n_trials: u64, seed_base: u64) -> Result<EnsembleResult> {
        if n_trials == 0 {
            return Err(QrealError::InvalidParameter("n_trials must be at least 1".into()));
        }
        let stats: Vec<Result<TrialStats>> = (0..n_trials)
            .into_par_iter()
            .map(|i| self.trial_stats(seed_base.wrapping_add(i)))
            .collect();

        let markers = self.spec.schedule.markers();
        let mut freq: Vec<MarkerFrequency> = markers
            .iter()
            .enumerate()
            .map(|(i, m)| MarkerFrequency {
                marker: i,
                step: m.step,
                ..Default::default()
            })
            .collect();
        let mut histogram = BTreeMap::new();
        let mut total_bits = 0.0;
        let mut max_bits: Vec<f64> = Vec::new();
        let mut violations = 0;
        let mut counterexample = None;
        let mut unverifiable = 0;
        for (i, s) in stats.into_iter().enumerate() {
            let s = s?;
            *histogram.entry(s.summary).or_insert(0) += 1;
            total_bits += s.total_bits;
            for (e, b) in s.bits.iter().enumerate() {
                if max_bits.len() <= e {
                    max_bits.push(0.0);
                }
                max_bits[e] = max_bits[e].max(*b);
            }
            for (m, label) in s.labels {
                freq[m].realized += 1;
                *freq[m].branch_counts.entry(label).or_insert(0) += 1;
            }
            unverifiable += s.unverifiable;
            if !s.violations.is_empty() {
                violations += s.violations.len() as u64;
                if counterexample.is_none() {
                    counterexample = Some(TrialAudit {
                        seed: seed_base.wrapping_add(i as u64),
                        violations: s.violations,
                        ledger_lines: s.ledger_lines,
                    });
                }
            }
        }
        Ok(EnsembleResult {
            scenario: self.spec.name.clone(),
            parameters: self.spec.parameters.clone(),
            n_trials,
            seed_base,
            histogram,
            mean_info_bits: total_bits / n_trials as f64,
            max_info_bits_by_epoch: max_bits,
            marker_frequencies: freq,
            audited_trials: n_trials,
            audit_violations: violations,
            counterexample,
            unverifiable_entries: unverifiable,
        })
    }
}

/// One trajectory of `spec` with the given seed.
pub fn run_trial(spec: &ScenarioSpec, seed: u64) -> Result<(Trajectory, ScenarioOutcome)> {
    PreparedScenario::new(spec.clone())?.trajectory(seed)
}

/// `n_trials` trajectories with seeds `seed_base + i`.
pub fn run_ensemble(spec: &ScenarioSpec, n_trials: u64, seed_base: u64) -> Result<EnsembleResult> {
    PreparedScenario::new(spec.clone())?.ensemble(n_trials, seed_base)
}

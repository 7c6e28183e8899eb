//! Reference semantics for comparison: projective collapse at every event,
//! and the Born distribution of the never-collapsed final state.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{evolve_reference, evolve_step};
use crate::error::{QrealError, Result};
use crate::events::{detect_event, subsystem_marginal, Conditioning, EventRecord};
use crate::hilbert::{StateVector, C64};
use crate::reality::{realize_branch, RealityToken};
use crate::scenarios::{ScenarioOutcome, ScenarioSpec, SummaryRule};
use crate::tolerance::Tolerances;

/// Offset added to an ensemble's seed base to give collapse-oracle trials a
/// seed range disjoint from the trajectories they are compared with.
pub const CI_SEED_OFFSET: u64 = 1 << 40;

/// Minimum expected count per chi-square bin.
pub const MIN_EXPECTED: f64 = 5.0;

/// (marker index, branch chosen at each earlier marker)
type NodeKey = (usize, Vec<usize>);

#[derive(Debug)]
struct CiNode {
    event: Arc<EventRecord>,
    collapses: bool,
}

/// Collapse semantics over a fixed scenario. Nodes of the outcome tree are
/// memoized by `(marker, choices so far)`; states are not kept, and a trial
/// that reaches an unexplored node replays its own history from the root.
#[derive(Debug)]
pub struct CiOracle {
    spec: Arc<ScenarioSpec>,
    tol: Tolerances,
    nodes: RwLock<HashMap<NodeKey, Arc<CiNode>>>,
}

impl CiOracle {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let tol = Tolerances::default();
        spec.initial_state.require_normalized(tol.norm)?;
        Ok(Self {
            spec: Arc::new(spec),
            tol,
            nodes: RwLock::new(HashMap::new()),
        })
    }

    fn node(&self, marker: usize, history: &[usize]) -> Option<Arc<CiNode>> {
        self.nodes
            .read()
            .expect("oracle cache poisoned")
            .get(&(marker, history.to_vec()))
            .cloned()
    }

    fn build_node(&self, marker: usize, history: &[usize], pre: &StateVector, post: &StateVector) -> Result<Arc<CiNode>> {
        let m = &self.spec.schedule.markers()[marker];
        let step = &self.spec.schedule.steps()[m.step];
        let reference = evolve_reference(pre, step)?;
        let event = detect_event(post, &reference, &m.split, &Conditioning::new(), &m.records, m.step, &self.tol)?;
        let node = Arc::new(CiNode {
            collapses: event.is_event || !m.records.is_empty(),
            event: Arc::new(event),
        });
        let mut w = self.nodes.write().expect("oracle cache poisoned");
        Ok(w.entry((marker, history.to_vec())).or_insert(node).clone())
    }

    /// `(|L><L| (x) I) state`, renormalized, for retained branch `k`.
    fn project(&self, state: &StateVector, event: &EventRecord, k: usize) -> Result<StateVector> {
        let b = &event.branches;
        let left = &b.members[b.retained()[k]].left;
        let v = nalgebra::DVector::from_column_slice(left.amplitudes());
        let p: DMatrix<C64> = &v * v.adjoint();
        state.apply_local(event.split.side_a(), &p)?.normalized()
    }

    /// State just before step `upto`, following the recorded choices.
    fn replay(&self, upto: usize, history: &[usize]) -> Result<StateVector> {
        let mut s = self.spec.initial_state.clone();
        let mut h: Vec<usize> = Vec::new();
        for (i, step) in self.spec.schedule.steps()[..upto].iter().enumerate() {
            s = evolve_step(&s, step)?;
            if let Some((mi, _)) = self.spec.schedule.marker_at(i) {
                let node = self
                    .node(mi, &h)
                    .ok_or_else(|| QrealError::NumericalFailure("oracle replay lost a node".into()))?;
                if node.collapses {
                    let k = history[h.len()];
                    s = self.project(&s, &node.event, k)?;
                    h.push(k);
                }
            }
        }
        Ok(s)
    }

    /// One collapse trajectory: at each marker that is an event or holds
    /// records, a branch is sampled and the state is projected onto it.
    pub fn run(&self, seed: u64) -> Result<ScenarioOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut token = RealityToken::new();
        let mut history: Vec<usize> = Vec::new();
        let mut state: Option<StateVector> = None;
        let mut value = None;
        for (i, step) in self.spec.schedule.steps().iter().enumerate() {
            let marker = self.spec.schedule.marker_at(i).map(|(mi, _)| mi);
            let cached = marker.and_then(|mi| self.node(mi, &history));
            let node = match (marker, cached) {
                (None, _) => {
                    if let Some(s) = state.take() {
                        state = Some(evolve_step(&s, step)?);
                    }
                    continue;
                }
                (Some(_), Some(n)) => {
                    if let Some(s) = state.take() {
                        state = Some(evolve_step(&s, step)?);
                    }
                    n
                }
                (Some(mi), None) => {
                    let pre = match state.take() {
                        Some(s) => s,
                        None => self.replay(i, &history)?,
                    };
                    let post = evolve_step(&pre, step)?;
                    let n = self.build_node(mi, &history, &pre, &post)?;
                    state = Some(post);
                    n
                }
            };
            if !node.collapses {
                continue;
            }
            // conditioning is empty on a collapsed state, so the token
            // only carries the sampled record values
            let (next, entry) = realize_branch(&node.event, i, &RealityToken::new(), &mut rng)?;
            for (r, v) in next.realized_records {
                token.realized_records.insert(r, v);
            }
            if let SummaryRule::Branch { subsystem, .. } = &self.spec.summary {
                let member = node.event.branches.retained()[entry.branch];
                value = crate::scenarios::runner_branch_value(&node.event, member, *subsystem);
            }
            history.push(entry.branch);
            if let Some(s) = state.take() {
                state = Some(self.project(&s, &node.event, entry.branch)?);
            }
        }
        Ok(ScenarioOutcome {
            summary: self.spec.summary.summarize(&token.realized_records, value),
            records: token.realized_records,
        })
    }

    /// Histogram of `n_trials` collapse trajectories with seeds
    /// `seed_base + i`.
    pub fn ensemble(&self, n_trials: u64, seed_base: u64) -> Result<BTreeMap<String, u64>> {
        if n_trials == 0 {
            return Err(QrealError::InvalidParameter("n_trials must be at least 1".into()));
        }
        let outcomes: Vec<Result<ScenarioOutcome>> = (0..n_trials)
            .into_par_iter()
            .map(|i| self.run(seed_base.wrapping_add(i)))
            .collect();
        let mut h = BTreeMap::new();
        for o in outcomes {
            *h.entry(o?.summary).or_insert(0) += 1;
        }
        Ok(h)
    }
}

/// One collapse trajectory of `spec`.
pub fn run_ci_collapse(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioOutcome> {
    CiOracle::new(spec.clone())?.run(seed)
}

/// Born distribution over outcome summaries of the final, never-collapsed
/// state. Record scenarios read the joint record configuration; branch
/// scenarios read the tracked subsystem's marginal.
pub fn run_full_unitary(spec: &ScenarioSpec) -> Result<BTreeMap<String, f64>> {
    let state = spec.schedule.evolve(&spec.initial_state)?;
    let mut out = BTreeMap::new();
    if let SummaryRule::Branch { subsystem, .. } = &spec.summary {
        for (v, p) in subsystem_marginal(&state, *subsystem).into_iter().enumerate() {
            *out.entry(spec.summary.summarize(&Conditioning::new(), Some(v))).or_insert(0.0) += p;
        }
        return Ok(out);
    }
    let records = spec.schedule.records();
    let layout = state.layout();
    for (i, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        if p == 0.0 {
            continue;
        }
        let cond: Conditioning = records.iter().map(|&r| (r, layout.digit(i, r))).collect();
        *out.entry(spec.summary.summarize(&cond, None)).or_insert(0.0) += p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub total_variation: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub chi_square_p_value: f64,
    /// Outcome labels folded into a pooled bin because their expected count
    /// fell below [`MIN_EXPECTED`].
    pub pooled: Vec<String>,
}

/// `1/2 sum |p - q|` over the union of supports.
pub fn total_variation(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let mut keys: Vec<&String> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

pub fn frequencies(h: &BTreeMap<String, u64>) -> BTreeMap<String, f64> {
    let n: u64 = h.values().sum();
    h.iter().map(|(k, &v)| (k.clone(), v as f64 / n as f64)).collect()
}

/// A bin of a chi-square table: label and one column per sample.
type Bin = (String, Vec<f64>, Vec<f64>);

/// Pools bins whose smallest expected count is below [`MIN_EXPECTED`]. A
/// pooled bin that is still too small joins the remaining bin with the
/// smallest expected count.
fn pool(bins: Vec<Bin>) -> (Vec<Bin>, Vec<String>) {
    let small = |b: &Bin| b.2.iter().copied().fold(f64::INFINITY, f64::min) < MIN_EXPECTED;
    let (mut small_bins, mut keep): (Vec<Bin>, Vec<Bin>) = bins.into_iter().partition(small);
    let pooled: Vec<String> = small_bins.iter().map(|b| b.0.clone()).collect();
    if small_bins.is_empty() {
        return (keep, pooled);
    }
    let width = small_bins[0].1.len();
    let mut acc: Bin = ("pooled".into(), vec![0.0; width], vec![0.0; width]);
    for b in small_bins.drain(..) {
        for j in 0..width {
            acc.1[j] += b.1[j];
            acc.2[j] += b.2[j];
        }
    }
    if small(&acc) && !keep.is_empty() {
        let target = keep
            .iter_mut()
            .min_by(|a, b| a.2.iter().sum::<f64>().total_cmp(&b.2.iter().sum::<f64>()))
            .expect("nonempty");
        for j in 0..width {
            target.1[j] += acc.1[j];
            target.2[j] += acc.2[j];
        }
    } else {
        keep.push(acc);
    }
    (keep, pooled)
}

fn chi_square_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    if !stat.is_finite() {
        return 0.0;
    }
    ChiSquared::new(dof as f64).map_or(0.0, |d| d.sf(stat))
}

/// Goodness of fit of observed counts to expected probabilities.
///
/// Outcomes with zero expected probability and no observations are
/// dropped; an observation of a zero-probability outcome gives an infinite
/// statistic and p-value 0. Sparse bins are pooled as in [`pool`].
pub fn compare_distributions(
    observed: &BTreeMap<String, u64>,
    expected: &BTreeMap<String, f64>,
) -> Result<Comparison> {
    let n: u64 = observed.values().sum();
    if n == 0 {
        return Err(QrealError::InvalidParameter("no observations".into()));
    }
    let tv = total_variation(&frequencies(observed), expected);
    let mut keys: Vec<&String> = observed.keys().chain(expected.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut bins = Vec::new();
    let mut impossible = false;
    for k in keys {
        let o = observed.get(k).copied().unwrap_or(0) as f64;
        let e = expected.get(k).copied().unwrap_or(0.0) * n as f64;
        if e == 0.0 {
            impossible |= o > 0.0;
            continue;
        }
        bins.push((k.clone(), vec![o], vec![e]));
    }
    let (bins, pooled) = pool(bins);
    let dof = bins.len().saturating_sub(1);
    let stat = if impossible {
        f64::INFINITY
    } else {
        bins.iter().map(|b| (b.1[0] - b.2[0]).powi(2) / b.2[0]).sum()
    };
    Ok(Comparison {
        total_variation: tv,
        chi_square: stat,
        degrees_of_freedom: dof,
        chi_square_p_value: if impossible { 0.0 } else { chi_square_p(stat, dof) },
        pooled,
    })
}

/// Two-sample homogeneity test between histograms.
pub fn compare_histograms(a: &BTreeMap<String, u64>, b: &BTreeMap<String, u64>) -> Result<Comparison> {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return Err(QrealError::InvalidParameter("no observations".into()));
    }
    let tv = total_variation(&frequencies(a), &frequencies(b));
    let n = (na + nb) as f64;
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let bins: Vec<Bin> = keys
        .into_iter()
        .map(|k| {
            let oa = a.get(k).copied().unwrap_or(0) as f64;
            let ob = b.get(k).copied().unwrap_or(0) as f64;
            let total = oa + ob;
            (
                k.clone(),
                vec![oa, ob],
                vec![total * na as f64 / n, total * nb as f64 / n],
            )
        })
        .collect();
    let (bins, pooled) = pool(bins);
    let dof = bins.len().saturating_sub(1);
    let stat = bins
        .iter()
        .map(|b| (0..2).map(|j| (b.1[j] - b.2[j]).powi(2) / b.2[j]).sum::<f64>())
        .sum();
    Ok(Comparison {
        total_variation: tv,
        chi_square: stat,
        degrees_of_freedom: dof,
        chi_square_p_value: chi_square_p(stat, dof),
        pooled,
    })
}

//! Event detection and branch structure.
//!
//! All branch analysis runs on a *conditioned view*: the global state
//! contracted against the realized pointer values of earlier records. The
//! global state itself is never projected.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{QrealError, Result};
use crate::hilbert::{
    global_phase_equal, partial_inner, schmidt_unchecked, BipartiteSplit, StateVector, C64,
};
use crate::tolerance::Tolerances;

/// Realized pointer values of record subsystems, keyed by full-layout index.
pub type Conditioning = BTreeMap<usize, usize>;

/// The global state contracted against `conditioning`, together with the
/// full-layout indices of the subsystems it still covers (ascending).
pub fn conditioned_view(
    state: &StateVector,
    conditioning: &Conditioning,
) -> Result<(StateVector, Vec<usize>)> {
    let subsystems: Vec<usize> = conditioning.keys().copied().collect();
    let assignment: Vec<usize> = conditioning.values().copied().collect();
    let view = partial_inner(state, &subsystems, &assignment)?;
    let kept = state.layout().complement(&subsystems);
    Ok((view, kept))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchMember {
    pub coefficient: f64,
    pub left: Arc<StateVector>,
    pub right: Arc<StateVector>,
    pub retained: bool,
    /// Pointer value of each designated record in this branch, or `None`
    /// when the branch was pruned and not read out.
    pub records: Option<Vec<(usize, usize)>>,
}

impl BranchMember {
    pub fn weight(&self) -> f64 {
        self.coefficient * self.coefficient
    }
}

/// Schmidt terms of a normalized conditioned view.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    pub members: Vec<BranchMember>,
    /// The split re-expressed on the view.
    pub view_split: BipartiteSplit,
    /// Full-layout index of each view subsystem.
    pub kept: Vec<usize>,
    /// Squared norm of the view before normalization.
    pub view_norm_sqr: f64,
}

impl BranchSet {
    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(BranchMember::weight).collect()
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&k| self.members[k].retained)
            .collect()
    }

    pub fn retained_count(&self) -> usize {
        self.members.iter().filter(|m| m.retained).count()
    }

    /// Probabilities over retained members, renormalized to sum to one.
    pub fn retained_distribution(&self) -> Vec<f64> {
        let total: f64 = self
            .members
            .iter()
            .filter(|m| m.retained)
            .map(BranchMember::weight)
            .sum();
        self.members
            .iter()
            .filter(|m| m.retained)
            .map(|m| m.weight() / total)
            .collect()
    }

    /// `c_k |left_k> |right_k>` laid out on the view.
    pub fn component(&self, k: usize, view_layout: &Arc<crate::hilbert::SubsystemLayout>) -> Result<StateVector> {
        let m = &self.members[k];
        let rows = view_layout.offsets(self.view_split.side_a());
        let cols = view_layout.offsets(self.view_split.side_b());
        let mut amps = vec![C64::new(0.0, 0.0); view_layout.total_dim()];
        for (i, &r) in rows.iter().enumerate() {
            let l = m.left.amplitude(i) * m.coefficient;
            if l.re == 0.0 && l.im == 0.0 {
                continue;
            }
            for (j, &c) in cols.iter().enumerate() {
                amps[r + c] = l * m.right.amplitude(j);
            }
        }
        StateVector::new(view_layout.clone(), amps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub step_index: usize,
    /// Split over the full layout.
    pub split: BipartiteSplit,
    pub branches: BranchSet,
    pub is_event: bool,
    /// Records made permanent at this marker (full-layout indices).
    pub record_designation: Vec<usize>,
    /// Record values the analysis was conditioned on.
    pub conditioning: Conditioning,
    /// Whether the full post state differs from the reference beyond a
    /// global phase.
    pub amplitude_changed: bool,
}

/// Decides whether the interaction that produced `post` is an event.
///
/// An event requires the post state to differ from `reference_post` by more
/// than a global phase, and the conditioned view to be entangled across the
/// split. Branches are always decomposed, since a non-event marker with
/// records still reads its single branch.
pub fn detect_event(
    post: &StateVector,
    reference_post: &StateVector,
    split: &BipartiteSplit,
    conditioning: &Conditioning,
    records: &[usize],
    step_index: usize,
    tol: &Tolerances,
) -> Result<EventRecord> {
    let amplitude_changed = !global_phase_equal(post, reference_post, tol.phase)?;
    let branches = branch_decompose(post, split, conditioning, records, tol)?;
    let entangled = branches.retained_count() >= 2;
    Ok(EventRecord {
        step_index,
        split: split.clone(),
        branches,
        is_event: amplitude_changed && entangled,
        record_designation: records.to_vec(),
        conditioning: conditioning.clone(),
        amplitude_changed,
    })
}

/// Schmidt decomposition of the normalized conditioned view. Members at or
/// below `tol.branch` are flagged as pruned but kept.
pub fn branch_decompose(
    state: &StateVector,
    split: &BipartiteSplit,
    conditioning: &Conditioning,
    records: &[usize],
    tol: &Tolerances,
) -> Result<BranchSet> {
    for r in records {
        if conditioning.contains_key(r) {
            return Err(QrealError::InvalidSchedule(format!(
                "record {r} is already realized"
            )));
        }
    }
    let (view, kept) = conditioned_view(state, conditioning)?;
    let norm_sqr = view.norm_sqr();
    if norm_sqr <= tol.null {
        return Err(QrealError::HistoryInconsistent { epoch: 0, norm_sqr });
    }
    let view = view.normalized()?;
    let view_split = split.restricted_to(&kept)?;
    let schmidt = schmidt_unchecked(&view, &view_split)?;

    // where each designated record lives: (side is a, position within side)
    let mut locations = Vec::with_capacity(records.len());
    for &r in records {
        let v = kept.iter().position(|&k| k == r).ok_or_else(|| {
            QrealError::IndexError(format!("record {r} not in view"))
        })?;
        let loc = if let Some(p) = view_split.side_a().iter().position(|&s| s == v) {
            (true, p)
        } else {
            let p = view_split.side_b().iter().position(|&s| s == v).ok_or_else(|| {
                QrealError::IndexError(format!("record {r} not covered by split"))
            })?;
            (false, p)
        };
        locations.push((r, loc));
    }

    let mut members = Vec::with_capacity(schmidt.rank());
    let parts = schmidt
        .coefficients
        .into_iter()
        .zip(schmidt.left_states)
        .zip(schmidt.right_states);
    for (k, ((c, left), right)) in parts.enumerate() {
        let retained = c * c > tol.branch;
        let readout = if retained {
            let mut values = Vec::with_capacity(locations.len());
            for &(r, (in_a, pos)) in &locations {
                let side = if in_a { &left } else { &right };
                let marginal = subsystem_marginal(side, pos);
                let (value, p) = marginal
                    .iter()
                    .copied()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap_or((0, 0.0));
                if p < 1.0 - tol.record {
                    return Err(QrealError::UnsupportedRecord { subsystem: r, branch: k });
                }
                values.push((r, value));
            }
            Some(values)
        } else {
            None
        };
        members.push(BranchMember {
            coefficient: c,
            left: Arc::new(left),
            right: Arc::new(right),
            retained,
            records: readout,
        });
    }

    Ok(BranchSet {
        members,
        view_split,
        kept,
        view_norm_sqr: norm_sqr,
    })
}

/// Born distribution of one subsystem's computational basis.
pub fn subsystem_marginal(state: &StateVector, subsystem: usize) -> Vec<f64> {
    let layout = state.layout();
    let mut p = vec![0.0; layout.dim(subsystem)];
    for (i, a) in state.amplitudes().iter().enumerate() {
        p[layout.digit(i, subsystem)] += a.norm_sqr();
    }
    p
}

/// Grouping of an instrument's basis indices into readable macrostates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacrostatePartition {
    groups: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl MacrostatePartition {
    pub fn new(groups: Vec<Vec<usize>>, labels: Vec<String>, dim: usize) -> Result<Self> {
        if groups.len() != labels.len() {
            return Err(QrealError::InvalidParameter(
                "one label per macrostate group required".into(),
            ));
        }
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(QrealError::InvalidParameter("empty macrostate group".into()));
            }
            for &m in g {
                if m >= dim || seen[m] {
                    return Err(QrealError::InvalidParameter(format!(
                        "microstate {m} out of range or in two groups"
                    )));
                }
                seen[m] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(QrealError::InvalidParameter(
                "macrostate groups do not cover the instrument basis".into(),
            ));
        }
        Ok(Self { groups, labels })
    }

    /// One macrostate per pointer basis state.
    pub fn pointer(dim: usize) -> Self {
        Self {
            groups: (0..dim).map(|m| vec![m]).collect(),
            labels: (0..dim).map(|m| m.to_string()).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeState {
    pub macrostate: usize,
    /// Square root of the macrostate's Born weight.
    pub alpha: f64,
    /// Normalized object-side state correlated with the macrostate.
    pub xi: StateVector,
    /// Purity of the conditional object state for this macrostate.
    pub purity: f64,
}

struct MacroBlock {
    weight: f64,
    columns: Vec<StateVector>,
}

fn macro_blocks(
    state: &StateVector,
    instrument: usize,
    partition: &MacrostatePartition,
) -> Result<Vec<MacroBlock>> {
    let dim = state.layout().dim(instrument);
    let covered: usize = partition.groups.iter().map(Vec::len).sum();
    if covered != dim {
        return Err(QrealError::InvalidParameter(format!(
            "partition covers {covered} microstates, instrument has {dim}"
        )));
    }
    partition
        .groups
        .iter()
        .map(|g| {
            let columns = g
                .iter()
                .map(|&m| partial_inner(state, &[instrument], &[m]))
                .collect::<Result<Vec<_>>>()?;
            let weight = columns.iter().map(StateVector::norm_sqr).sum();
            Ok(MacroBlock { weight, columns })
        })
        .collect()
}

/// Object-side states relative to each instrument macrostate with nonzero
/// weight. The `xi` are not mutually orthogonal in general.
pub fn relative_states(
    state: &StateVector,
    instrument: usize,
    partition: &MacrostatePartition,
) -> Result<Vec<RelativeState>> {
    let tol = Tolerances::default();
    let blocks = macro_blocks(state, instrument, partition)?;
    let mut out = Vec::new();
    for (k, block) in blocks.into_iter().enumerate() {
        if block.weight <= tol.null {
            continue;
        }
        let (xi, purity) = if block.columns.len() == 1 {
            (block.columns[0].normalized()?, 1.0)
        } else {
            principal_component(&block.columns, block.weight)?
        };
        out.push(RelativeState {
            macrostate: k,
            alpha: block.weight.sqrt(),
            xi,
            purity,
        });
    }
    Ok(out)
}

/// Dominant eigenvector and purity of `sum_m |x_m><x_m| / w`, computed via
/// the small Gram matrix.
fn principal_component(columns: &[StateVector], weight: f64) -> Result<(StateVector, f64)> {
    let g = columns.len();
    let gram = DMatrix::from_fn(g, g, |i, j| {
        columns[i].inner(&columns[j]).unwrap_or_default()
    });
    let purity = gram.iter().map(|x| x.norm_sqr()).sum::<f64>() / (weight * weight);
    let eig = gram.symmetric_eigen();
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let coeffs = eig.eigenvectors.column(top);
    let mut amps = vec![C64::new(0.0, 0.0); columns[0].len()];
    for (x, c) in columns.iter().zip(coeffs.iter()) {
        for (a, b) in amps.iter_mut().zip(x.amplitudes()) {
            *a += b * c;
        }
    }
    if let Some(p) = amps.iter().find(|a| a.norm() > 1e-8).copied() {
        let phase = p.conj() / p.norm();
        amps.iter_mut().for_each(|a| *a *= phase);
    }
    let xi = columns[0].with_amplitudes(amps).normalized()?;
    Ok((xi, purity))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstrumentMetrics {
    pub faithfulness: f64,
    pub distinguishability: f64,
    pub memory: f64,
    /// Fewer than two macrostates carry weight, so distinguishability is
    /// undefined and reported as zero.
    pub degenerate: bool,
}

/// Scores an instrument. `later` are snapshots of the same system at later
/// times; memory is the worst Bhattacharyya overlap between the macrostate
/// distribution now and at each snapshot (one when there are none).
pub fn instrument_metrics(
    state: &StateVector,
    instrument: usize,
    partition: &MacrostatePartition,
    later: &[StateVector],
) -> Result<InstrumentMetrics> {
    let rel = relative_states(state, instrument, partition)?;
    let faithfulness = rel.iter().map(|r| r.purity).fold(1.0, f64::min);
    let degenerate = rel.len() < 2;
    let mut max_overlap: f64 = 0.0;
    for i in 0..rel.len() {
        for j in i + 1..rel.len() {
            max_overlap = max_overlap.max(rel[i].xi.inner(&rel[j].xi)?.norm());
        }
    }
    let distinguishability = if degenerate { 0.0 } else { 1.0 - max_overlap };

    let weights = |s: &StateVector| -> Result<Vec<f64>> {
        Ok(macro_blocks(s, instrument, partition)?
            .into_iter()
            .map(|b| b.weight)
            .collect())
    };
    let w0 = weights(state)?;
    let mut memory: f64 = 1.0;
    for snap in later {
        let wt = weights(snap)?;
        let bc: f64 = w0.iter().zip(&wt).map(|(a, b)| (a * b).sqrt()).sum();
        memory = memory.min(bc * bc);
    }
    Ok(InstrumentMetrics {
        faithfulness,
        distinguishability,
        memory: memory.min(1.0),
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{Role, Subsystem, SubsystemLayout};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn layout(spec: &[(usize, Role)]) -> Arc<SubsystemLayout> {
        Arc::new(
            SubsystemLayout::new(
                spec.iter()
                    .enumerate()
                    .map(|(i, &(d, r))| Subsystem::new(format!("s{i}"), d, r))
                    .collect(),
            )
            .unwrap(),
        )
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn phase_only_change_is_not_an_event() {
        // ground state in a fixed well, partner untouched: only a phase
        let l = layout(&[(2, Role::Object), (2, Role::Object)]);
        let ground = StateVector::basis(l, &[0, 0]).unwrap();
        let post = ground.scaled(C64::from_polar(1.0, 0.7));
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let ev = detect_event(&post, &ground, &split, &Conditioning::new(), &[], 0, &tol()).unwrap();
        assert!(!ev.is_event);
        assert!(!ev.amplitude_changed);
    }

    #[test]
    fn scattering_with_two_outcomes_is_an_event() {
        // alpha |no-change>|partner0> + beta |deflected>|partner1>
        let l = layout(&[(2, Role::Object), (2, Role::Object)]);
        let (alpha, beta) = (0.95f64.sqrt(), 0.05f64.sqrt());
        let post = StateVector::from_real(l.clone(), &[alpha, 0.0, 0.0, beta]).unwrap();
        let reference = StateVector::basis(l, &[0, 0]).unwrap();
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let ev =
            detect_event(&post, &reference, &split, &Conditioning::new(), &[], 0, &tol()).unwrap();
        assert!(ev.is_event);
        let w = ev.branches.weights();
        assert!((w[0] - 0.95).abs() < 1e-14 && (w[1] - 0.05).abs() < 1e-14);
    }

    #[test]
    fn identical_post_and_reference() {
        let l = layout(&[(2, Role::Object), (2, Role::Object)]);
        let s = StateVector::from_real(l, &[0.0, FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.0]).unwrap();
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let ev = detect_event(&s, &s, &split, &Conditioning::new(), &[], 0, &tol()).unwrap();
        assert!(!ev.is_event);
        assert_eq!(ev.branches.retained_count(), 2);
    }

    #[test]
    fn singlet_and_product_branches() {
        let l = layout(&[(2, Role::Object), (2, Role::Object)]);
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let singlet =
            StateVector::from_real(l.clone(), &[0.0, FRAC_1_SQRT_2, -FRAC_1_SQRT_2, 0.0]).unwrap();
        let b = branch_decompose(&singlet, &split, &Conditioning::new(), &[], &tol()).unwrap();
        for w in b.weights() {
            assert!((w - 0.5).abs() < 1e-14);
        }
        let product = StateVector::basis(l, &[1, 0]).unwrap();
        let b = branch_decompose(&product, &split, &Conditioning::new(), &[], &tol()).unwrap();
        assert_eq!(b.members.len(), 1);
        assert!((b.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn null_conditioning_is_history_inconsistent() {
        let l = layout(&[(2, Role::Object), (2, Role::Record)]);
        let s = StateVector::basis(l, &[0, 0]).unwrap();
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let cond = Conditioning::from([(1, 1)]);
        assert!(matches!(
            branch_decompose(&s, &split, &cond, &[], &tol()),
            Err(QrealError::HistoryInconsistent { .. })
        ));
    }

    #[test]
    fn pruned_branches_are_kept() {
        let l = layout(&[(2, Role::Object), (2, Role::Object)]);
        let eps: f64 = 1e-11;
        let s = StateVector::from_real(l, &[(1.0 - eps).sqrt(), 0.0, 0.0, eps.sqrt()]).unwrap();
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let b = branch_decompose(&s, &split, &Conditioning::new(), &[], &tol()).unwrap();
        assert_eq!(b.members.len(), 2);
        assert_eq!(b.retained_count(), 1);
        assert!(!b.members[1].retained);
        let total: f64 = b.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(b.retained_distribution(), vec![1.0]);
    }

    #[test]
    fn record_readout_per_branch() {
        // object-record correlation (0.6|0,0> + 0.8|1,1>)
        let l = layout(&[(2, Role::Object), (2, Role::Record)]);
        let s = StateVector::from_real(l, &[0.6, 0.0, 0.0, 0.8]).unwrap();
        let split = BipartiteSplit::new(vec![1], 2).unwrap();
        let b = branch_decompose(&s, &split, &Conditioning::new(), &[1], &tol()).unwrap();
        assert_eq!(b.members[0].records, Some(vec![(1, 1)]));
        assert_eq!(b.members[1].records, Some(vec![(1, 0)]));
    }

    #[test]
    fn undecohered_record_is_unsupported() {
        // record in superposition but uncorrelated: single branch, indefinite
        let l = layout(&[(2, Role::Object), (2, Role::Record)]);
        let s = StateVector::from_real(l, &[FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0, 0.0]).unwrap();
        let split = BipartiteSplit::new(vec![1], 2).unwrap();
        assert!(matches!(
            branch_decompose(&s, &split, &Conditioning::new(), &[1], &tol()),
            Err(QrealError::UnsupportedRecord { subsystem: 1, branch: 0 })
        ));
    }

    #[test]
    fn faithful_instrument_relative_states() {
        // sum_k a_k psi_k phi_k with object first, instrument second
        let l = layout(&[(3, Role::Object), (3, Role::Instrument)]);
        let a = [0.5f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt()];
        let mut amps = vec![0.0; 9];
        for k in 0..3 {
            amps[k * 3 + k] = a[k];
        }
        let s = StateVector::from_real(l.clone(), &amps).unwrap();
        let rel = relative_states(&s, 1, &MacrostatePartition::pointer(3)).unwrap();
        assert_eq!(rel.len(), 3);
        for (k, r) in rel.iter().enumerate() {
            assert!((r.alpha - a[k]).abs() < 1e-15);
            assert!((r.xi.amplitude(k).norm() - 1.0).abs() < 1e-15);
        }
        let m = instrument_metrics(&s, 1, &MacrostatePartition::pointer(3), std::slice::from_ref(&s)).unwrap();
        assert!((m.faithfulness - 1.0).abs() < 1e-14);
        assert!((m.distinguishability - 1.0).abs() < 1e-14);
        assert!((m.memory - 1.0).abs() < 1e-14);
        assert!(!m.degenerate);
    }

    #[test]
    fn uncorrelated_instrument() {
        let l = layout(&[(2, Role::Object), (2, Role::Instrument)]);
        // object (0.6, 0.8), instrument (|0> + |1>)/sqrt2: xi identical
        let amps: Vec<f64> = [0.6, 0.8]
            .iter()
            .flat_map(|o| [o * FRAC_1_SQRT_2, o * FRAC_1_SQRT_2])
            .collect();
        let s = StateVector::from_real(l.clone(), &amps).unwrap();
        let rel = relative_states(&s, 1, &MacrostatePartition::pointer(2)).unwrap();
        assert!((rel[0].xi.inner(&rel[1].xi).unwrap().norm() - 1.0).abs() < 1e-14);

        // instrument stuck in its ready state: one effective macrostate
        let s = StateVector::from_real(l, &[0.6, 0.0, 0.8, 0.0]).unwrap();
        let m = instrument_metrics(&s, 1, &MacrostatePartition::pointer(2), &[]).unwrap();
        assert!((m.faithfulness - 1.0).abs() < 1e-14);
        assert_eq!(m.distinguishability, 0.0);
        assert!(m.degenerate);
    }

    #[test]
    fn noisy_coupling_distinguishability_closed_form() {
        // xi_0 = |0>, xi_1 = cos t |0> + sin t |1>: overlap |cos t|
        let l = layout(&[(2, Role::Object), (2, Role::Instrument)]);
        for &t in &[0.1, 0.4, 1.0, 1.3, 2.5] {
            let h = FRAC_1_SQRT_2;
            let s = StateVector::from_real(
                l.clone(),
                &[h, h * f64::cos(t), 0.0, h * f64::sin(t)],
            )
            .unwrap();
            let m = instrument_metrics(&s, 1, &MacrostatePartition::pointer(2), &[]).unwrap();
            assert!((m.distinguishability - (1.0 - f64::cos(t).abs())).abs() < 1e-14);
        }
    }

    #[test]
    fn coarse_macrostate_purity() {
        // instrument microstates {0,1} form one macrostate carrying two
        // orthogonal object states: purity 1/2
        let l = layout(&[(2, Role::Object), (3, Role::Instrument)]);
        let h = FRAC_1_SQRT_2;
        let s = StateVector::from_real(l, &[h, 0.0, 0.0, 0.0, h, 0.0]).unwrap();
        let p = MacrostatePartition::new(
            vec![vec![0, 1], vec![2]],
            vec!["low".into(), "high".into()],
            3,
        )
        .unwrap();
        let rel = relative_states(&s, 1, &p).unwrap();
        assert_eq!(rel.len(), 1);
        assert!((rel[0].purity - 0.5).abs() < 1e-14);
        assert!(MacrostatePartition::new(vec![vec![0], vec![0, 1]], vec!["a".into(), "b".into()], 3).is_err());
    }
}

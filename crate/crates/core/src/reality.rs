//! The single realized branch and its history.
//!
//! A [`RealityToken`] names the one realized branch of the latest event and
//! the permanent pointer values of every realized record. Sampling reads
//! probabilities from a conditioned view of the global state; it never
//! writes to that state.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{QrealError, Result};
use crate::events::{branch_decompose, Conditioning, EventRecord};
use crate::hilbert::{StateVector, C64};
use crate::tolerance::Tolerances;

/// One tensor factor of the realized branch, on the listed full-layout
/// subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedFactor {
    pub subsystems: Vec<usize>,
    pub state: Arc<StateVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedBranch {
    pub epoch: u64,
    pub index: usize,
    pub event: Arc<EventRecord>,
    pub factors: Vec<RealizedFactor>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealityToken {
    pub realized_records: Conditioning,
    pub realized_branch: Option<RealizedBranch>,
    pub epoch: u64,
    /// False once the state has evolved past the realizing marker without a
    /// new probe; the branch identity is carried but cannot be ascertained.
    pub observable: bool,
}

impl RealityToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_unobserved(&mut self) {
        self.observable = false;
    }
}

/// Identifies a branch of a given epoch's event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchQuery {
    pub epoch: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub epoch: u64,
    pub marker: usize,
    pub step: usize,
    pub branch: usize,
    pub probability: f64,
    pub info_bits: f64,
    pub cumulative_bits: f64,
    pub retained_branches: usize,
    pub is_event: bool,
    /// Records realized at this epoch.
    pub records: Vec<(usize, usize)>,
    /// Cleared when the event's branches later recohere: the realized
    /// value is kept for audit but no record in the world can confirm it.
    pub verifiable: bool,
    pub event: Arc<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealityLedger {
    pub entries: Vec<LedgerEntry>,
    pub rng_seed: u64,
}

impl RealityLedger {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            rng_seed,
        }
    }

    pub fn push(&mut self, mut entry: LedgerEntry) {
        let prev = self.entries.last().map_or(0.0, |e| e.cumulative_bits);
        entry.cumulative_bits = prev + entry.info_bits;
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One line per entry: epoch, event step, branch index, probability,
    /// info bits, cumulative bits. Reals use 17 significant digits.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{} {} {} {:.16e} {:.16e} {:.16e}",
                e.epoch, e.step, e.branch, e.probability, e.info_bits, e.cumulative_bits
            );
        }
        out
    }
}

/// Parses one line written by [`RealityLedger::to_lines`].
pub fn parse_ledger_line(line: &str) -> Result<(u64, usize, usize, f64, f64, f64)> {
    let bad = || QrealError::ConfigError(format!("malformed ledger line: {line}"));
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(bad());
    }
    Ok((
        f[0].parse().map_err(|_| bad())?,
        f[1].parse().map_err(|_| bad())?,
        f[2].parse().map_err(|_| bad())?,
        f[3].parse().map_err(|_| bad())?,
        f[4].parse().map_err(|_| bad())?,
        f[5].parse().map_err(|_| bad())?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// The uncollapsed global state after the full schedule.
    pub final_state: StateVector,
    pub ledger: RealityLedger,
    pub token: RealityToken,
}

/// Born probabilities of the event's retained branches, recomputed on the
/// view of `state` conditioned on the token's realized records.
pub fn conditional_branch_distribution(
    state: &StateVector,
    event: &EventRecord,
    token: &RealityToken,
    tol: &Tolerances,
) -> Result<Vec<f64>> {
    if !event.is_event {
        return Err(QrealError::NotAnEvent {
            step: event.step_index,
        });
    }
    let branches = branch_decompose(
        state,
        &event.split,
        &token.realized_records,
        &event.record_designation,
        tol,
    )
    .map_err(|e| with_epoch(e, token.epoch + 1))?;
    Ok(branches.retained_distribution())
}

pub(crate) fn with_epoch(e: QrealError, epoch: u64) -> QrealError {
    match e {
        QrealError::HistoryInconsistent { norm_sqr, .. } => {
            QrealError::HistoryInconsistent { epoch, norm_sqr }
        }
        other => other,
    }
}

/// Samples one retained branch of `event` and advances the token.
///
/// Exactly one uniform draw is consumed per call. The event must already be
/// conditioned on `token`'s records; a marker that is not an event but
/// designates records is accepted when it has a single retained branch,
/// yielding a probability-one entry.
pub fn realize_branch<R: Rng + ?Sized>(
    event: &Arc<EventRecord>,
    marker: usize,
    token: &RealityToken,
    rng: &mut R,
) -> Result<(RealityToken, LedgerEntry)> {
    let retained = event.branches.retained();
    if retained.is_empty() || (!event.is_event && retained.len() > 1) {
        return Err(QrealError::NotAnEvent {
            step: event.step_index,
        });
    }
    let probs = event.branches.retained_distribution();
    let u: f64 = rng.gen();
    let mut chosen = probs.len() - 1;
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = k;
            break;
        }
    }
    let p = probs[chosen];
    let index = retained[chosen];
    let member = &event.branches.members[index];
    let records = member.records.clone().unwrap_or_default();

    let mut next = token.clone();
    for &(r, v) in &records {
        next.realized_records.insert(r, v);
    }
    next.epoch = token.epoch + 1;
    let kept = &event.branches.kept;
    let split = &event.branches.view_split;
    next.realized_branch = Some(RealizedBranch {
        epoch: next.epoch,
        index: chosen,
        event: event.clone(),
        factors: vec![
            RealizedFactor {
                subsystems: split.side_a().iter().map(|&i| kept[i]).collect(),
                state: member.left.clone(),
            },
            RealizedFactor {
                subsystems: split.side_b().iter().map(|&i| kept[i]).collect(),
                state: member.right.clone(),
            },
        ],
    });
    next.observable = true;

    let info_bits = if p >= 1.0 { 0.0 } else { -p.log2() };
    let entry = LedgerEntry {
        epoch: next.epoch,
        marker,
        step: event.step_index,
        branch: chosen,
        probability: p,
        info_bits,
        cumulative_bits: 0.0,
        retained_branches: retained.len(),
        is_event: event.is_event,
        records,
        verifiable: true,
        event: event.clone(),
    };
    Ok((next, entry))
}

/// 1 for the realized branch of the token's current epoch, 0 otherwise.
pub fn reality_value(token: &RealityToken, query: BranchQuery) -> Result<u8> {
    if query.epoch != token.epoch {
        return Err(QrealError::EpochMismatch {
            requested: query.epoch,
            current: token.epoch,
        });
    }
    Ok(match &token.realized_branch {
        Some(b) if b.index == query.index => 1,
        _ => 0,
    })
}

/// Checks that the realized branch factors into exactly one realized factor
/// per constituent cluster, and that the product of factors reproduces the
/// branch state.
pub fn constituent_consistency(token: &RealityToken, tol: &Tolerances) -> bool {
    let Some(branch) = &token.realized_branch else {
        return true;
    };
    let kept = &branch.event.branches.kept;
    let mut seen: Vec<usize> = Vec::new();
    for f in &branch.factors {
        for s in &f.subsystems {
            if seen.contains(s) || !kept.contains(s) {
                return false;
            }
            seen.push(*s);
        }
        if f.state.layout().len() != f.subsystems.len() {
            return false;
        }
    }
    if seen.len() != kept.len() {
        return false;
    }
    let member = &branch.event.branches.members[branch.event.branches.retained()[branch.index]];
    let view_layout = match branch.event.branches.members.first() {
        Some(_) => {
            let subs: Vec<_> = kept
                .iter()
                .map(|&k| {
                    branch
                        .factors
                        .iter()
                        .find_map(|f| {
                            f.subsystems
                                .iter()
                                .position(|&s| s == k)
                                .map(|p| f.state.layout().subsystem(p).clone())
                        })
                        .expect("coverage checked above")
                })
                .collect();
            match crate::hilbert::SubsystemLayout::with_limit(subs, usize::MAX) {
                Ok(l) => Arc::new(l),
                Err(_) => return false,
            }
        }
        None => return false,
    };
    // product of factors, written into view order
    let mut amps = vec![C64::new(1.0, 0.0); view_layout.total_dim()];
    for (i, a) in amps.iter_mut().enumerate() {
        for f in &branch.factors {
            let mut local = 0;
            for (p, s) in f.subsystems.iter().enumerate() {
                let v = kept.iter().position(|k| k == s).expect("covered");
                local += view_layout.digit(i, v) * f.state.layout().stride(p);
            }
            *a *= f.state.amplitude(local);
        }
    }
    let expected = branch.event.branches.view_split.clone();
    let Ok(reference) = ({
        let tmp = crate::events::BranchSet {
            members: vec![crate::events::BranchMember {
                coefficient: 1.0,
                ..member.clone()
            }],
            view_split: expected,
            kept: kept.clone(),
            view_norm_sqr: 1.0,
        };
        tmp.component(0, &view_layout)
    }) else {
        return false;
    };
    amps.iter()
        .zip(reference.amplitudes())
        .all(|(a, b)| (a - b).norm() <= tol.recon)
}

/// Total information, in bits, of the realized history.
pub fn info_content(ledger: &RealityLedger) -> f64 {
    ledger.entries.iter().map(|e| e.info_bits).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoherenceDiagnostic {
    /// Root fidelity between the non-object reduced states of each pair of
    /// prior branches.
    pub overlaps: Vec<Vec<f64>>,
    pub min_overlap: f64,
    pub recohered: bool,
    /// The prior event designated records, which cannot recohere.
    pub frozen: bool,
}

/// Compares the non-object factors (side A of the prior event's split) of
/// the prior branches after evolution. `components` are the branch
/// components on the full layout, evolved to the present.
pub fn recoherence_monitor(
    components: &[StateVector],
    prior_event: &EventRecord,
    eps: f64,
) -> Result<RecoherenceDiagnostic> {
    let n = components.len();
    if !prior_event.record_designation.is_empty() {
        return Ok(RecoherenceDiagnostic {
            overlaps: vec![vec![0.0; n]; n],
            min_overlap: 0.0,
            recohered: false,
            frozen: true,
        });
    }
    let rhos = components
        .iter()
        .map(|c| reduced_density(c, prior_event.split.side_a()))
        .collect::<Result<Vec<_>>>()?;
    let mut overlaps = vec![vec![1.0; n]; n];
    let mut min_overlap: f64 = 1.0;
    for i in 0..n {
        for j in i + 1..n {
            let f = root_fidelity(&rhos[i], &rhos[j]);
            overlaps[i][j] = f;
            overlaps[j][i] = f;
            min_overlap = min_overlap.min(f);
        }
    }
    Ok(RecoherenceDiagnostic {
        recohered: n >= 2 && min_overlap >= 1.0 - eps,
        overlaps,
        min_overlap,
        frozen: false,
    })
}

fn reduced_density(state: &StateVector, side: &[usize]) -> Result<DMatrix<C64>> {
    let split = crate::hilbert::BipartiteSplit::new(side.to_vec(), state.layout().len())?;
    let m = state.to_matrix(&split)?;
    let rho = &m * m.adjoint();
    let tr: f64 = rho.diagonal().iter().map(|x| x.re).sum();
    if tr <= 0.0 {
        return Err(QrealError::NotNormalized { norm_sqr: tr });
    }
    Ok(rho / C64::new(tr, 0.0))
}

fn psd_sqrt(rho: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = rho.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::new(e.max(0.0).sqrt(), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// `Tr |sqrt(rho) sqrt(sigma)|`, equal to `|<a|b>|` for pure states.
fn root_fidelity(rho: &DMatrix<C64>, sigma: &DMatrix<C64>) -> f64 {
    let m = psd_sqrt(rho) * psd_sqrt(sigma);
    m.singular_values().iter().sum::<f64>().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LedgerAudit {
    pub epochs: usize,
    pub violations: Vec<String>,
}

impl LedgerAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Quantization and conservation audit of one trajectory's ledger: every
/// epoch has exactly one realized branch with reality values in {0, 1}
/// summing to one, probabilities lie in (0, 1], cumulative information never
/// decreases, and realized records only accumulate.
pub fn audit_ledger(ledger: &RealityLedger) -> LedgerAudit {
    let mut audit = LedgerAudit {
        epochs: ledger.entries.len(),
        violations: Vec::new(),
    };
    let mut records: BTreeMap<usize, usize> = BTreeMap::new();
    let mut token = RealityToken::new();
    let mut prev_bits = 0.0;
    for (k, e) in ledger.entries.iter().enumerate() {
        if e.epoch != k as u64 + 1 {
            audit.violations.push(format!("epoch {} out of sequence at entry {k}", e.epoch));
        }
        if !(e.probability > 0.0 && e.probability <= 1.0) {
            audit.violations.push(format!("epoch {}: probability {} outside (0, 1]", e.epoch, e.probability));
        }
        if e.branch >= e.retained_branches {
            audit.violations.push(format!("epoch {}: branch {} of {}", e.epoch, e.branch, e.retained_branches));
        }
        token.epoch = e.epoch;
        token.realized_branch = Some(RealizedBranch {
            epoch: e.epoch,
            index: e.branch,
            event: e.event.clone(),
            factors: Vec::new(),
        });
        let mut total = 0u32;
        for index in 0..e.retained_branches {
            match reality_value(&token, BranchQuery { epoch: e.epoch, index }) {
                Ok(v) if v <= 1 => total += u32::from(v),
                Ok(v) => audit.violations.push(format!("epoch {}: reality value {v}", e.epoch)),
                Err(err) => audit.violations.push(err.to_string()),
            }
        }
        if total != 1 {
            audit.violations.push(format!("epoch {}: {total} realized branches", e.epoch));
        }
        if e.cumulative_bits < prev_bits {
            audit.violations.push(format!("epoch {}: cumulative bits decreased", e.epoch));
        }
        prev_bits = e.cumulative_bits;
        for &(r, v) in &e.records {
            if let Some(old) = records.insert(r, v) {
                audit.violations.push(format!(
                    "epoch {}: record {r} realized again ({old} -> {v})",
                    e.epoch
                ));
            }
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::detect_event;
    use crate::hilbert::{BipartiteSplit, Role, Subsystem, SubsystemLayout};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record_pair(amps: &[f64]) -> (StateVector, BipartiteSplit) {
        let l = Arc::new(
            SubsystemLayout::new(vec![
                Subsystem::new("obj", 2, Role::Object),
                Subsystem::new("rec", 2, Role::Record),
            ])
            .unwrap(),
        );
        (
            StateVector::from_real(l, amps).unwrap(),
            BipartiteSplit::new(vec![1], 2).unwrap(),
        )
    }

    fn event_for(state: &StateVector, split: &BipartiteSplit) -> Arc<EventRecord> {
        let reference = StateVector::basis(state.layout_arc().clone(), &[0, 0]).unwrap();
        Arc::new(
            detect_event(state, &reference, split, &Conditioning::new(), &[1], 0, &Tolerances::default())
                .unwrap(),
        )
    }

    #[test]
    fn deterministic_branch_carries_no_information() {
        let (s, split) = record_pair(&[0.0, 0.0, 0.0, 1.0]);
        let ev = event_for(&s, &split);
        assert!(!ev.is_event);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tok, entry) = realize_branch(&ev, 0, &RealityToken::new(), &mut rng).unwrap();
        assert_eq!(entry.probability, 1.0);
        assert_eq!(entry.info_bits, 0.0);
        assert_eq!(tok.realized_records.get(&1), Some(&1));
    }

    #[test]
    fn fifty_fifty_is_reproducible_and_one_bit() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (s, split) = record_pair(&[h, 0.0, 0.0, h]);
        let ev = event_for(&s, &split);
        assert!(ev.is_event);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            realize_branch(&ev, 0, &RealityToken::new(), &mut rng).unwrap()
        };
        let (t1, e1) = run(99);
        let (t2, e2) = run(99);
        assert_eq!(t1.realized_records, t2.realized_records);
        assert_eq!(e1.branch, e2.branch);
        assert!((e1.info_bits - 1.0).abs() < 1e-12);

        let mut ledger = RealityLedger::new(99);
        ledger.push(e1);
        assert!((info_content(&ledger) - 1.0).abs() < 1e-12);
        assert_eq!(info_content(&RealityLedger::new(0)), 0.0);
    }

    #[test]
    fn reality_values_are_quantized() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (s, split) = record_pair(&[h, 0.0, 0.0, h]);
        let ev = event_for(&s, &split);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (tok, entry) = realize_branch(&ev, 0, &RealityToken::new(), &mut rng).unwrap();
        let values: Vec<u8> = (0..2)
            .map(|i| reality_value(&tok, BranchQuery { epoch: 1, index: i }).unwrap())
            .collect();
        assert_eq!(values.iter().map(|&v| u32::from(v)).sum::<u32>(), 1);
        assert_eq!(values[entry.branch], 1);
        assert!(matches!(
            reality_value(&tok, BranchQuery { epoch: 0, index: 0 }),
            Err(QrealError::EpochMismatch { requested: 0, current: 1 })
        ));
    }

    #[test]
    fn corrupted_token_fails_consistency() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (s, split) = record_pair(&[h, 0.0, 0.0, h]);
        let ev = event_for(&s, &split);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (tok, _) = realize_branch(&ev, 0, &RealityToken::new(), &mut rng).unwrap();
        let tol = Tolerances::default();
        assert!(constituent_consistency(&tok, &tol));

        let mut bad = tok.clone();
        let extra = bad.realized_branch.as_ref().unwrap().factors[0].clone();
        bad.realized_branch.as_mut().unwrap().factors.push(extra);
        assert!(!constituent_consistency(&bad, &tol));

        // swapping factor states breaks reconstruction
        let mut swapped = tok.clone();
        let rb = swapped.realized_branch.as_mut().unwrap();
        let other = ev.branches.members[1 - ev.branches.retained()[rb.index]].left.clone();
        rb.factors[0].state = other;
        assert!(!constituent_consistency(&swapped, &tol));
    }

    #[test]
    fn ledger_lines_round_trip_exactly() {
        let (s, split) = record_pair(&[0.6, 0.0, 0.0, 0.8]);
        let ev = event_for(&s, &split);
        let mut ledger = RealityLedger::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, e) = realize_branch(&ev, 0, &RealityToken::new(), &mut rng).unwrap();
        ledger.push(e);
        let text = ledger.to_lines();
        let (epoch, step, branch, p, bits, cum) = parse_ledger_line(text.trim()).unwrap();
        let e = &ledger.entries[0];
        assert_eq!((epoch, step, branch), (e.epoch, e.step, e.branch));
        assert_eq!(p.to_bits(), e.probability.to_bits());
        assert_eq!(bits.to_bits(), e.info_bits.to_bits());
        assert_eq!(cum.to_bits(), e.cumulative_bits.to_bits());
    }

    #[test]
    fn conditional_distribution_requires_event() {
        let (s, split) = record_pair(&[0.0, 0.0, 0.0, 1.0]);
        let ev = event_for(&s, &split);
        assert!(matches!(
            conditional_branch_distribution(&s, &ev, &RealityToken::new(), &Tolerances::default()),
            Err(QrealError::NotAnEvent { .. })
        ));
    }

    #[test]
    fn partial_overlap_is_not_recoherence() {
        // env factors with overlap 0.9 for the two branches
        let l = Arc::new(
            SubsystemLayout::new(vec![
                Subsystem::new("env", 2, Role::Environment),
                Subsystem::new("obj", 2, Role::Object),
            ])
            .unwrap(),
        );
        let t = f64::acos(0.9);
        let a = StateVector::from_real(l.clone(), &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = StateVector::from_real(l.clone(), &[0.0, t.cos(), 0.0, t.sin()]).unwrap();
        let split = BipartiteSplit::new(vec![0], 2).unwrap();
        let both = a.add(&b).unwrap().normalized().unwrap();
        let ev = detect_event(
            &both,
            &StateVector::basis(l.clone(), &[0, 0]).unwrap(),
            &split,
            &Conditioning::new(),
            &[],
            0,
            &Tolerances::default(),
        )
        .unwrap();
        let d = recoherence_monitor(&[a.clone(), b], &ev, 0.01).unwrap();
        assert!((d.min_overlap - 0.9).abs() < 1e-12);
        assert!(!d.recohered);
        let same = StateVector::from_real(l, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let d = recoherence_monitor(&[a, same], &ev, 0.01).unwrap();
        assert!(d.recohered);
    }
}

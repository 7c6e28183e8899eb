//! Collapse-free evolution of the global state under scheduled steps.
//!
//! Generators are exponentiated exactly by Hermitian eigendecomposition, and
//! the resulting unitary is cached on the step at construction.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{QrealError, Result};
use crate::hilbert::{BipartiteSplit, Role, StateVector, SubsystemLayout, C64};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    HermitianGenerator,
    ExplicitUnitary,
    Identity,
}

/// What the step would have done without its cross-subsystem coupling.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Undeclared,
    /// The step has no coupling to remove.
    Free,
    Counterpart(Box<EvolutionStep>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionStep {
    label: String,
    kind: StepKind,
    matrix: Option<Arc<DMatrix<C64>>>,
    duration: f64,
    target: Vec<usize>,
    unitary: Option<Arc<DMatrix<C64>>>,
    reference: Reference,
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Largest entry of `|H - H^dagger|`.
pub fn hermiticity_deviation(h: &DMatrix<C64>) -> f64 {
    max_abs(&(h - h.adjoint()))
}

/// Largest entry of `|U^dagger U - I|`.
pub fn unitarity_deviation(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - DMatrix::<C64>::identity(n, n)))
}

/// `exp(-i H t)` by spectral decomposition of a Hermitian `H`.
pub fn spectral_exponential(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = h.clone().symmetric_eigen();
    let phases = DMatrix::from_diagonal(
        &eig.eigenvalues
            .map(|e| C64::from_polar(1.0, -e * t)),
    );
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

impl EvolutionStep {
    pub fn identity(target: Vec<usize>) -> Self {
        Self {
            label: "identity".into(),
            kind: StepKind::Identity,
            matrix: None,
            duration: 0.0,
            target,
            unitary: None,
            reference: Reference::Free,
        }
    }

    pub fn generator(target: Vec<usize>, h: DMatrix<C64>, duration: f64) -> Result<Self> {
        Self::generator_with(target, h, duration, &Tolerances::default())
    }

    pub fn generator_with(
        target: Vec<usize>,
        h: DMatrix<C64>,
        duration: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        if !h.is_square() {
            return Err(QrealError::DimensionMismatch {
                expected: h.nrows(),
                got: h.ncols(),
            });
        }
        let deviation = hermiticity_deviation(&h);
        if deviation > tol.herm || !duration.is_finite() {
            return Err(QrealError::InvalidGenerator { deviation });
        }
        let u = spectral_exponential(&h, duration);
        Ok(Self {
            label: "generator".into(),
            kind: StepKind::HermitianGenerator,
            matrix: Some(Arc::new(h)),
            duration,
            target,
            unitary: Some(Arc::new(u)),
            reference: Reference::Undeclared,
        })
    }

    pub fn unitary(target: Vec<usize>, u: DMatrix<C64>) -> Result<Self> {
        Self::unitary_with(target, u, &Tolerances::default())
    }

    pub fn unitary_with(target: Vec<usize>, u: DMatrix<C64>, tol: &Tolerances) -> Result<Self> {
        if !u.is_square() {
            return Err(QrealError::DimensionMismatch {
                expected: u.nrows(),
                got: u.ncols(),
            });
        }
        let deviation = unitarity_deviation(&u);
        if deviation > tol.unit || deviation.is_nan() {
            return Err(QrealError::InvalidUnitary { deviation });
        }
        let u = Arc::new(u);
        Ok(Self {
            label: "unitary".into(),
            kind: StepKind::ExplicitUnitary,
            matrix: Some(u.clone()),
            duration: 0.0,
            target,
            unitary: Some(u),
            reference: Reference::Undeclared,
        })
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Declares that this step contains no coupling, so its reference
    /// evolution is itself.
    pub fn free(mut self) -> Self {
        self.reference = Reference::Free;
        self
    }

    pub fn with_reference(mut self, counterpart: EvolutionStep) -> Self {
        self.reference = Reference::Counterpart(Box::new(counterpart));
        self
    }

    /// Reference is the identity on the same target: the whole step is
    /// coupling.
    pub fn pure_coupling(self) -> Self {
        let id = EvolutionStep::identity(self.target.clone());
        self.with_reference(id)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn matrix(&self) -> Option<&DMatrix<C64>> {
        self.matrix.as_deref()
    }

    pub fn unitary_matrix(&self) -> Option<&DMatrix<C64>> {
        self.unitary.as_deref()
    }

    pub fn reference(&self) -> &Reference {
        &self.reference
    }

    /// True when the step leaves subsystem `r`'s pointer value untouched:
    /// either `r` is not targeted, or the unitary is block diagonal in `r`'s
    /// computational basis (it may use `r` as a control).
    pub fn reads_only(&self, r: usize, layout: &SubsystemLayout) -> bool {
        let Some(pos) = self.target.iter().position(|&t| t == r) else {
            return true;
        };
        let Some(u) = &self.unitary else {
            return true;
        };
        let inner: usize = self.target[pos + 1..].iter().map(|&t| layout.dim(t)).product();
        let d = layout.dim(r);
        let digit = |i: usize| (i / inner) % d;
        for i in 0..u.nrows() {
            for j in 0..u.ncols() {
                if digit(i) != digit(j) && u[(i, j)].norm() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    fn check_target(&self, layout: &SubsystemLayout) -> Result<()> {
        layout.check_indices(&self.target)?;
        if let Some(u) = &self.unitary {
            let d: usize = self.target.iter().map(|&t| layout.dim(t)).product();
            if u.nrows() != d {
                return Err(QrealError::DimensionMismatch {
                    expected: d,
                    got: u.nrows(),
                });
            }
        }
        Ok(())
    }
}

/// Applies the step's embedded unitary to the state.
pub fn evolve_step(state: &StateVector, step: &EvolutionStep) -> Result<StateVector> {
    step.check_target(state.layout())?;
    match &step.unitary {
        None => Ok(state.clone()),
        Some(u) => state.apply_local(&step.target, u),
    }
}

/// Evolves under the step's declared non-interacting counterpart.
pub fn evolve_reference(state: &StateVector, step: &EvolutionStep) -> Result<StateVector> {
    match &step.reference {
        Reference::Undeclared => Err(QrealError::MissingReference {
            step: step.label.clone(),
        }),
        Reference::Free => evolve_step(state, step),
        Reference::Counterpart(r) => evolve_step(state, r),
    }
}

/// A point in the schedule, after `step` has been applied, where event
/// detection runs across `split`. `records` are record-tagged subsystems
/// whose pointer value becomes permanent at this marker.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMarker {
    pub step: usize,
    pub split: BipartiteSplit,
    pub records: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: Vec<EvolutionStep>,
    markers: Vec<EventMarker>,
}

impl Schedule {
    /// Validated schedule. Rejects markers out of order, splits that do not
    /// cover the layout, records that are not record-tagged or designated
    /// twice, and any later step that can change a designated record.
    pub fn new(
        layout: &SubsystemLayout,
        steps: Vec<EvolutionStep>,
        markers: Vec<EventMarker>,
    ) -> Result<Self> {
        for step in &steps {
            step.check_target(layout)?;
        }
        let mut designated: Vec<(usize, usize)> = Vec::new();
        for (k, m) in markers.iter().enumerate() {
            if m.step >= steps.len() {
                return Err(QrealError::InvalidSchedule(format!(
                    "marker {k} refers to step {} of {}",
                    m.step,
                    steps.len()
                )));
            }
            if k > 0 && markers[k - 1].step >= m.step {
                return Err(QrealError::InvalidSchedule(
                    "markers must be strictly increasing in step".into(),
                ));
            }
            if m.split.n_subsystems() != layout.len() {
                return Err(QrealError::InvalidSplit(format!(
                    "marker {k} split covers {} of {} subsystems",
                    m.split.n_subsystems(),
                    layout.len()
                )));
            }
            for &r in &m.records {
                if r >= layout.len() || layout.role(r) != Role::Record {
                    return Err(QrealError::InvalidSchedule(format!(
                        "marker {k} designates subsystem {r}, which is not a record"
                    )));
                }
                if designated.iter().any(|&(s, _)| s == r) {
                    return Err(QrealError::InvalidSchedule(format!(
                        "record {r} designated twice"
                    )));
                }
                designated.push((r, m.step));
            }
        }
        for (i, step) in steps.iter().enumerate() {
            for &(r, at) in &designated {
                if i > at && !step.reads_only(r, layout) {
                    return Err(QrealError::FrozenRecord { subsystem: r, step: i });
                }
            }
        }
        Ok(Self { steps, markers })
    }

    pub fn steps(&self) -> &[EvolutionStep] {
        &self.steps
    }

    pub fn markers(&self) -> &[EventMarker] {
        &self.markers
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Marker attached to `step`, if any.
    pub fn marker_at(&self, step: usize) -> Option<(usize, &EventMarker)> {
        self.markers.iter().enumerate().find(|(_, m)| m.step == step)
    }

    /// All record subsystems in designation order.
    pub fn records(&self) -> Vec<usize> {
        self.markers.iter().flat_map(|m| m.records.iter().copied()).collect()
    }

    /// `self` followed by `other`, revalidated as a whole.
    pub fn concat(&self, other: &Schedule, layout: &SubsystemLayout) -> Result<Schedule> {
        let offset = self.steps.len();
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        let mut markers = self.markers.clone();
        markers.extend(other.markers.iter().map(|m| EventMarker {
            step: m.step + offset,
            ..m.clone()
        }));
        Schedule::new(layout, steps, markers)
    }

    /// Inserts a step at position `at` without any validation, shifting
    /// later markers. Fault-injection hook for audits: lets a test mutate a
    /// frozen record.
    pub fn inject_unchecked_step(&mut self, at: usize, step: EvolutionStep) {
        let at = at.min(self.steps.len());
        self.steps.insert(at, step);
        for m in &mut self.markers {
            if m.step >= at {
                m.step += 1;
            }
        }
    }

    /// Applies every step in order.
    pub fn evolve(&self, state: &StateVector) -> Result<StateVector> {
        let mut s = state.clone();
        for step in &self.steps {
            s = evolve_step(&s, step)?;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitarityReport {
    pub steps: usize,
    /// Largest `|‖psi_k‖ - 1|` along the schedule.
    pub max_norm_drift: f64,
    /// Largest entry of `|U^dagger U - I|` over the step unitaries.
    pub max_unitarity_deviation: f64,
}

/// Runs the full schedule and measures norm drift and step unitarity.
pub fn check_unitarity(schedule: &Schedule, state: &StateVector) -> Result<UnitarityReport> {
    let mut s = state.clone();
    let mut drift = (s.norm() - 1.0).abs();
    let mut dev: f64 = 0.0;
    for step in &schedule.steps {
        if let Some(u) = step.unitary_matrix() {
            dev = dev.max(unitarity_deviation(u));
        }
        s = evolve_step(&s, step)?;
        drift = drift.max((s.norm() - 1.0).abs());
    }
    Ok(UnitarityReport {
        steps: schedule.steps.len(),
        max_norm_drift: drift,
        max_unitarity_deviation: dev,
    })
}

/// Shared layout handle for schedule builders.
pub type LayoutRef = Arc<SubsystemLayout>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{global_phase_equal, Subsystem};
    use std::f64::consts::FRAC_PI_2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn qubits(n: usize, role: Role) -> LayoutRef {
        Arc::new(
            SubsystemLayout::new(
                (0..n).map(|i| Subsystem::new(format!("q{i}"), 2, role)).collect(),
            )
            .unwrap(),
        )
    }

    fn pauli_x() -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    #[test]
    fn identity_step_is_exact() {
        let s = StateVector::from_real(qubits(1, Role::Object), &[0.6, 0.8]).unwrap();
        let out = evolve_step(&s, &EvolutionStep::identity(vec![0])).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn pauli_x_quarter_turn_flips_with_minus_i() {
        // oracle: exp(-i X t) = cos t I - i sin t X
        let step = EvolutionStep::generator(vec![0], pauli_x(), FRAC_PI_2).unwrap();
        let s = StateVector::basis(qubits(1, Role::Object), &[0]).unwrap();
        let out = evolve_step(&s, &step).unwrap();
        assert!(out.amplitude(0).norm() < 1e-15);
        assert!((out.amplitude(1) - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn generator_matches_closed_form_for_general_qubit_hamiltonian() {
        // H = a X + b Z; exp(-i H t) = cos(w t) I - i sin(w t) H / w
        let (a, b, t) = (0.3, -0.7, 1.9);
        let h = DMatrix::from_row_slice(2, 2, &[c(b, 0.), c(a, 0.), c(a, 0.), c(-b, 0.)]);
        let w = (a * a + b * b).sqrt();
        let expected = DMatrix::<C64>::identity(2, 2) * c((w * t).cos(), 0.0)
            - &h * c(0.0, (w * t).sin() / w);
        let got = spectral_exponential(&h, t);
        assert!(max_abs(&(got - expected)) < 1e-14);
    }

    #[test]
    fn rejects_invalid_matrices() {
        let bad_h = DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        assert!(matches!(
            EvolutionStep::generator(vec![0], bad_h, 1.0),
            Err(QrealError::InvalidGenerator { .. })
        ));
        let bad_u = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(1., 0.), c(0., 0.), c(1., 0.)]);
        assert!(matches!(
            EvolutionStep::unitary(vec![0], bad_u),
            Err(QrealError::InvalidUnitary { .. })
        ));
    }

    #[test]
    fn reference_evolution() {
        let s = StateVector::from_real(qubits(2, Role::Object), &[0.6, 0.0, 0.0, 0.8]).unwrap();
        let free = EvolutionStep::generator(vec![0], pauli_x(), 0.4).unwrap().free();
        assert_eq!(evolve_reference(&s, &free).unwrap(), evolve_step(&s, &free).unwrap());

        let cnot = crate::scenarios::gates::controlled_not();
        let coupling = EvolutionStep::unitary(vec![0, 1], cnot).unwrap().pure_coupling();
        assert_eq!(evolve_reference(&s, &coupling).unwrap(), s);

        let undeclared = EvolutionStep::generator(vec![0], pauli_x(), 0.4).unwrap();
        assert!(matches!(
            evolve_reference(&s, &undeclared),
            Err(QrealError::MissingReference { .. })
        ));
    }

    #[test]
    fn coupled_generator_against_uncoupled_reference() {
        // H = Z(x)I + I(x)Z + g X(x)X; reference drops the XX term
        let g = 0.8;
        let z = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)]);
        let id = DMatrix::<C64>::identity(2, 2);
        let local = z.kronecker(&id) + id.kronecker(&z);
        let coupling = pauli_x().kronecker(&pauli_x()) * c(g, 0.0);
        let t = 0.9;
        let step = EvolutionStep::generator(vec![0, 1], &local + coupling, t)
            .unwrap()
            .with_reference(EvolutionStep::generator(vec![0, 1], local.clone(), t).unwrap());
        let s = StateVector::from_real(qubits(2, Role::Object), &[0.5, 0.5, 0.5, 0.5]).unwrap();
        let got = evolve_reference(&s, &step).unwrap();
        // local part is diagonal: phases exp(-i t (z0 + z1))
        let energies = [2.0, 0.0, 0.0, -2.0];
        for (k, e) in energies.iter().enumerate() {
            let expected = C64::from_polar(0.5, -e * t);
            assert!((got.amplitude(k) - expected).norm() < 1e-14);
        }
        let coupled = evolve_step(&s, &step).unwrap();
        assert!(!global_phase_equal(&coupled, &got, 1e-9).unwrap());
    }

    #[test]
    fn frozen_records_rejected() {
        let layout = SubsystemLayout::new(vec![
            Subsystem::new("obj", 2, Role::Object),
            Subsystem::new("rec", 2, Role::Record),
        ])
        .unwrap();
        let cnot = crate::scenarios::gates::controlled_not();
        let copy = EvolutionStep::unitary(vec![0, 1], cnot.clone()).unwrap();
        let marker = EventMarker {
            step: 0,
            split: BipartiteSplit::new(vec![1], 2).unwrap(),
            records: vec![1],
        };
        assert!(Schedule::new(&layout, vec![copy.clone()], vec![marker.clone()]).is_ok());
        let again = EvolutionStep::unitary(vec![1], pauli_x()).unwrap();
        assert!(matches!(
            Schedule::new(&layout, vec![copy.clone(), again], vec![marker.clone()]),
            Err(QrealError::FrozenRecord { subsystem: 1, step: 1 })
        ));
        // reading the record as a control leaves it frozen
        let read = EvolutionStep::unitary(vec![1, 0], cnot).unwrap();
        assert!(Schedule::new(&layout, vec![copy.clone(), read], vec![marker.clone()]).is_ok());
        let not_record = EventMarker {
            records: vec![0],
            ..marker
        };
        assert!(Schedule::new(&layout, vec![copy], vec![not_record]).is_err());
    }

    #[test]
    fn identity_schedule_has_zero_drift() {
        let layout = qubits(3, Role::Object);
        let steps = (0..5).map(|i| EvolutionStep::identity(vec![i % 3])).collect();
        let sched = Schedule::new(&layout, steps, vec![]).unwrap();
        let s = StateVector::basis(layout, &[0, 1, 0]).unwrap();
        let report = check_unitarity(&sched, &s).unwrap();
        assert_eq!(report.max_norm_drift, 0.0);
        assert_eq!(report.max_unitarity_deviation, 0.0);
    }
}

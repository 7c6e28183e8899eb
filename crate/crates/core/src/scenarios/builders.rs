use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;

use super::gates::{
    controlled, controlled_not, controlled_shift, dft, hadamard, identity, kron, pauli_x, ry,
    spin_coupling, spin_projectors, swap_levels,
};
use super::{Params, ScenarioSpec, SummaryRule};
use crate::dynamics::{EventMarker, EvolutionStep, Schedule};
use crate::error::{QrealError, Result};
use crate::hilbert::{BipartiteSplit, Role, StateVector, Subsystem, SubsystemLayout, C64};

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn probability(name: &str, p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(QrealError::InvalidParameter(format!("{name} = {p} is not in [0, 1]")))
    }
}

fn marker(step: usize, side_a: Vec<usize>, n: usize, records: Vec<usize>) -> Result<EventMarker> {
    Ok(EventMarker {
        step,
        split: BipartiteSplit::new(side_a, n)?,
        records,
    })
}

struct Draft {
    name: &'static str,
    parameters: Params,
    layout: Arc<SubsystemLayout>,
    initial: StateVector,
    steps: Vec<EvolutionStep>,
    markers: Vec<EventMarker>,
    summary: SummaryRule,
    interpretive: bool,
}

impl Draft {
    fn finish(self) -> Result<ScenarioSpec> {
        let schedule = Schedule::new(&self.layout, self.steps, self.markers)?;
        Ok(ScenarioSpec {
            name: self.name.to_string(),
            parameters: self.parameters,
            layout: self.layout,
            initial_state: self.initial,
            schedule,
            summary: self.summary,
            interpretive: self.interpretive,
        })
    }
}

fn params(pairs: &[(&str, String)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum GratingProfile {
    Uniform,
    /// Real path amplitudes, normalized by the builder.
    Amplitudes(Vec<f64>),
}

/// Object with `n_paths` paths and a screen record of the same size. With
/// `propagate`, a discrete Fourier step maps the slit profile to screen
/// positions before detection.
pub fn build_grating(n_paths: usize, profile: &GratingProfile, propagate: bool) -> Result<ScenarioSpec> {
    if n_paths < 2 {
        return Err(QrealError::InvalidParameter(format!("n_paths = {n_paths} < 2")));
    }
    let amps = match profile {
        GratingProfile::Uniform => vec![1.0; n_paths],
        GratingProfile::Amplitudes(a) => a.clone(),
    };
    if amps.len() != n_paths {
        return Err(QrealError::InvalidProfile(format!(
            "{} amplitudes for {n_paths} paths",
            amps.len()
        )));
    }
    if amps.iter().any(|a| !a.is_finite()) {
        return Err(QrealError::InvalidProfile("non-finite amplitude".into()));
    }
    let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(QrealError::InvalidProfile("all amplitudes are zero".into()));
    }

    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("path", n_paths, Role::Object),
        Subsystem::new("screen", n_paths, Role::Record),
    ])?);
    let mut full = vec![0.0; n_paths * n_paths];
    for (j, a) in amps.iter().enumerate() {
        full[j * n_paths] = a / norm;
    }
    let initial = StateVector::from_real(layout.clone(), &full)?;

    let mut steps = Vec::new();
    if propagate {
        steps.push(EvolutionStep::unitary(vec![0], dft(n_paths))?.labeled("propagate").free());
    }
    steps.push(
        EvolutionStep::unitary(vec![0, 1], controlled_shift(n_paths))?
            .labeled("detect")
            .pure_coupling(),
    );
    let markers = vec![marker(steps.len() - 1, vec![1], 2, vec![1])?];
    Draft {
        name: "grating",
        parameters: params(&[
            ("n_paths", n_paths.to_string()),
            ("profile", amps.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")),
            ("propagate", propagate.to_string()),
        ]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Position { record: 1, prefix: "x".into() },
        interpretive: false,
    }
    .finish()
}

/// `m_atoms` frozen emitter qubits, each copied into its own counter
/// record. Atom state `|1>` means a quantum was emitted into the counter's
/// acceptance and registered, with amplitude `sqrt(p_decay * p_detect)`.
pub fn build_decay_counter(m_atoms: usize, p_decay: f64, p_detect: f64) -> Result<ScenarioSpec> {
    if !(1..=10).contains(&m_atoms) {
        return Err(QrealError::InvalidParameter(format!("m_atoms = {m_atoms} not in 1..=10")));
    }
    let q = probability("p_decay", p_decay)? * probability("p_detect", p_detect)?;
    let mut subs: Vec<Subsystem> = (0..m_atoms)
        .map(|i| Subsystem::new(format!("atom{i}"), 2, Role::Object))
        .collect();
    subs.extend((0..m_atoms).map(|i| Subsystem::new(format!("counter{i}"), 2, Role::Record)));
    let layout = Arc::new(SubsystemLayout::new(subs)?);
    let n = layout.len();
    let initial = StateVector::basis(layout.clone(), &vec![0; n])?;

    let emit = ry(2.0 * q.sqrt().asin());
    let mut steps = Vec::new();
    let mut markers = Vec::new();
    for i in 0..m_atoms {
        steps.push(EvolutionStep::unitary(vec![i], emit.clone())?.labeled(format!("emit{i}")).free());
        steps.push(
            EvolutionStep::unitary(vec![i, m_atoms + i], controlled_not())?
                .labeled(format!("count{i}"))
                .pure_coupling(),
        );
        markers.push(marker(2 * i + 1, vec![m_atoms + i], n, vec![m_atoms + i])?);
    }
    Draft {
        name: "decay_counter",
        parameters: params(&[
            ("m_atoms", m_atoms.to_string()),
            ("p_decay", p_decay.to_string()),
            ("p_detect", p_detect.to_string()),
        ]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Count { records: (m_atoms..2 * m_atoms).collect() },
        interpretive: false,
    }
    .finish()
}

fn unit_axis(name: &str, n: [f64; 3]) -> Result<[f64; 3]> {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if !len.is_finite() || (len - 1.0).abs() > 1e-9 {
        return Err(QrealError::InvalidParameter(format!("{name} has length {len}, not 1")));
    }
    Ok(n)
}

/// Spin singlet of particles `a` and `b`, measured first along `axis_a`
/// into record `rec_a`, then along `axis_b` into `rec_b`.
pub fn build_epr(axis_a: [f64; 3], axis_b: [f64; 3]) -> Result<ScenarioSpec> {
    let axis_a = unit_axis("axis_a", axis_a)?;
    let axis_b = unit_axis("axis_b", axis_b)?;
    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("a", 2, Role::Object),
        Subsystem::new("b", 2, Role::Object),
        Subsystem::new("rec_a", 2, Role::Record),
        Subsystem::new("rec_b", 2, Role::Record),
    ])?);
    let mut amps = vec![0.0; 16];
    amps[layout.index_of(&[0, 1, 0, 0])?] = FRAC_1_SQRT_2;
    amps[layout.index_of(&[1, 0, 0, 0])?] = -FRAC_1_SQRT_2;
    let initial = StateVector::from_real(layout.clone(), &amps)?;
    let steps = vec![
        EvolutionStep::unitary(vec![0, 2], spin_coupling(axis_a))?.labeled("measure_a").pure_coupling(),
        EvolutionStep::unitary(vec![1, 3], spin_coupling(axis_b))?.labeled("measure_b").pure_coupling(),
    ];
    let markers = vec![marker(0, vec![2], 4, vec![2])?, marker(1, vec![3], 4, vec![3])?];
    let fmt = |n: [f64; 3]| format!("{},{},{}", n[0], n[1], n[2]);
    Draft {
        name: "epr",
        parameters: params(&[("axis_a", fmt(axis_a)), ("axis_b", fmt(axis_b))]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Signs { records: vec![2, 3] },
        interpretive: false,
    }
    .finish()
}

/// Spin-z up electron through an x-splitter into paths 1 (`+x`) and 2
/// (`-x`), optionally marked by an analyzer on path 2, optionally unmarked,
/// recombined, and finally measured along z into a detector record.
///
/// The analyzer is a record only when it marks and is never unmarked.
pub fn build_stern_gerlach(recohere: bool, marks_environment: bool) -> Result<ScenarioSpec> {
    let analyzer_is_record = marks_environment && !recohere;
    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("spin", 2, Role::Object),
        Subsystem::new("path", 3, Role::Object),
        Subsystem::new(
            "analyzer",
            2,
            if analyzer_is_record { Role::Record } else { Role::Environment },
        ),
        Subsystem::new("detector", 2, Role::Record),
    ])?);
    let initial = StateVector::basis(layout.clone(), &[0, 0, 0, 0])?;

    let (px, mx) = spin_projectors([1.0, 0.0, 0.0]);
    let splitter = kron(&px, &swap_levels(3, 0, 1)) + kron(&mx, &swap_levels(3, 0, 2));
    let mark = controlled(&[identity(2), identity(2), pauli_x()]);
    let split_step = || -> Result<EvolutionStep> {
        Ok(EvolutionStep::unitary(vec![0, 1], splitter.clone())?.labeled("splitter").free())
    };
    let coupling = |label: &str, on: bool| -> Result<EvolutionStep> {
        Ok(if on {
            EvolutionStep::unitary(vec![1, 2], mark.clone())?.labeled(label).pure_coupling()
        } else {
            EvolutionStep::identity(vec![]).labeled(label)
        })
    };
    let steps = vec![
        split_step()?,
        coupling("mark", marks_environment)?,
        coupling("unmark", marks_environment && recohere)?,
        split_step()?.labeled("recombine"),
        EvolutionStep::unitary(vec![0, 3], controlled_not())?.labeled("measure_z").pure_coupling(),
    ];
    let markers = vec![
        marker(1, vec![2], 4, if analyzer_is_record { vec![2] } else { vec![] })?,
        marker(4, vec![3], 4, vec![3])?,
    ];
    Draft {
        name: "stern_gerlach",
        parameters: params(&[
            ("recohere", recohere.to_string()),
            ("marks_environment", marks_environment.to_string()),
        ]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Signs { records: vec![3] },
        interpretive: false,
    }
    .finish()
}

const CHAIN_LABELS: [&str; 8] = [
    "detector", "lever", "dog", "friend", "wigner", "audience", "audience2", "audience3",
];

/// A particle emitted right (`|0>`, amplitude `sqrt(p_right)`) or left,
/// followed by a chain of `k` records each copying its predecessor.
pub fn build_wigner_chain(k: usize, p_right: f64) -> Result<ScenarioSpec> {
    if !(1..=8).contains(&k) {
        return Err(QrealError::InvalidParameter(format!("k = {k} not in 1..=8")));
    }
    let p_right = probability("p_right", p_right)?;
    let mut subs = vec![Subsystem::new("particle", 2, Role::Object)];
    subs.extend(CHAIN_LABELS[..k].iter().map(|l| Subsystem::new(*l, 2, Role::Record)));
    let layout = Arc::new(SubsystemLayout::new(subs)?);
    let n = k + 1;
    let mut amps = vec![0.0; layout.total_dim()];
    amps[0] = p_right.sqrt();
    let mut left = vec![0; n];
    left[0] = 1;
    amps[layout.index_of(&left)?] = (1.0 - p_right).sqrt();
    let initial = StateVector::from_real(layout.clone(), &amps)?;

    let mut steps = Vec::new();
    let mut markers = Vec::new();
    for (i, label) in CHAIN_LABELS.iter().enumerate().take(k) {
        steps.push(
            EvolutionStep::unitary(vec![i, i + 1], controlled_not())?
                .labeled(format!("copy_to_{label}"))
                .pure_coupling(),
        );
        markers.push(marker(i, vec![i + 1], n, vec![i + 1])?);
    }
    Draft {
        name: "wigner_chain",
        parameters: params(&[("k", k.to_string()), ("p_right", p_right.to_string())]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Digits { records: (1..=k).collect() },
        interpretive: false,
    }
    .finish()
}

/// Open-chain hopping matrix on `d` sites.
fn chain(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |i, j| if i.abs_diff(j) == 1 { c(1.0) } else { c(0.0) })
}

/// Interaction-dressed pair Hamiltonian on two `d`-site particles.
///
/// `H = F + V`, where `F` is free single-particle hopping. `V` binds the
/// pair: it lowers coincident sites by `binding`, cancels single-particle
/// hops out of the coincident subspace, and replaces them by pair hops, so
/// coincident configurations form an invariant subspace.
fn bound_pair_hamiltonians(d: usize, hop: f64, binding: f64) -> (DMatrix<C64>, DMatrix<C64>) {
    let t = chain(d);
    let free = (kron(&t, &identity(d)) + kron(&identity(d), &t)) * c(-hop);
    let dim = d * d;
    let diag = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j && i / d == i % d { c(1.0) } else { c(0.0) }
    });
    let off = identity(dim) - &diag;
    let leak = &off * &free * &diag;
    let mut pair = DMatrix::zeros(dim, dim);
    for j in 0..d - 1 {
        let (a, b) = (j * d + j, (j + 1) * d + j + 1);
        pair[(a, b)] = c(1.0);
        pair[(b, a)] = c(1.0);
    }
    let v = &diag * c(-binding) - &leak - leak.adjoint() - pair * c(hop);
    (&free + v, free)
}

/// Normalized ground-state amplitudes of the pair on coincident sites.
fn pair_profile(d: usize) -> Vec<f64> {
    let f: Vec<f64> = (0..d).map(|j| (PI * (j + 1) as f64 / (d + 1) as f64).sin()).collect();
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    f.into_iter().map(|x| x / norm).collect()
}

/// Squared coincident-site amplitudes of the bound-pair eigenstate.
pub fn bound_pair_weights(d: usize) -> Vec<f64> {
    pair_profile(d).into_iter().map(|x| x * x).collect()
}

/// Two `d`-site particles in the bound eigenstate, evolved for `steps`
/// intervals of `dt`, with a marker across the particle split after each
/// interval. The non-interacting counterpart is free hopping.
pub fn build_bound_pair(d: usize, hop: f64, binding: f64, steps: usize, dt: f64) -> Result<ScenarioSpec> {
    if d < 2 {
        return Err(QrealError::InvalidParameter(format!("d = {d} < 2")));
    }
    if !hop.is_finite() || hop == 0.0 || !binding.is_finite() {
        return Err(QrealError::InvalidParameter("hop must be finite and nonzero".into()));
    }
    if steps == 0 || !(dt > 0.0 && dt.is_finite()) {
        return Err(QrealError::InvalidParameter("steps and dt must be positive".into()));
    }
    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("particle_a", d, Role::Object),
        Subsystem::new("particle_b", d, Role::Object),
    ])?);
    let mut amps = vec![0.0; d * d];
    for (j, f) in pair_profile(d).into_iter().enumerate() {
        amps[j * d + j] = f;
    }
    let initial = StateVector::from_real(layout.clone(), &amps)?;
    let (h, free) = bound_pair_hamiltonians(d, hop, binding);
    let reference = EvolutionStep::generator(vec![0, 1], free, dt)?.labeled("free_hopping");
    let step = EvolutionStep::generator(vec![0, 1], h, dt)?
        .labeled("bound_hopping")
        .with_reference(reference);
    let markers = (0..steps)
        .map(|i| marker(i, vec![0], 2, vec![]))
        .collect::<Result<Vec<_>>>()?;
    Draft {
        name: "bound_pair",
        parameters: params(&[
            ("d", d.to_string()),
            ("hop", hop.to_string()),
            ("binding", binding.to_string()),
            ("steps", steps.to_string()),
            ("dt", dt.to_string()),
        ]),
        layout,
        initial,
        steps: vec![step; steps],
        markers,
        summary: SummaryRule::Branch { subsystem: 0, prefix: "a".into() },
        interpretive: false,
    }
    .finish()
}

/// An object in `|+>` that rotates a heavy partner by angle `delta` when in
/// `|1>`, then interferes on a Hadamard and is recorded. The partner's two
/// states overlap by `cos(delta)`.
pub fn build_spectator(delta: f64) -> Result<ScenarioSpec> {
    if !(0.0..=FRAC_PI_2).contains(&delta) {
        return Err(QrealError::InvalidParameter(format!("delta = {delta} not in [0, pi/2]")));
    }
    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("object", 2, Role::Object),
        Subsystem::new("partner", 2, Role::Environment),
        Subsystem::new("detector", 2, Role::Record),
    ])?);
    let h = FRAC_1_SQRT_2;
    let initial = StateVector::from_real(layout.clone(), &[h, 0.0, 0.0, 0.0, h, 0.0, 0.0, 0.0])?;
    let steps = vec![
        EvolutionStep::unitary(vec![0, 1], controlled(&[identity(2), ry(2.0 * delta)]))?
            .labeled("scatter")
            .pure_coupling(),
        EvolutionStep::unitary(vec![0], hadamard())?.labeled("interfere").free(),
        EvolutionStep::unitary(vec![0, 2], controlled_not())?.labeled("detect").pure_coupling(),
    ];
    let markers = vec![marker(0, vec![1], 3, vec![])?, marker(2, vec![2], 3, vec![2])?];
    Draft {
        name: "spectator",
        parameters: params(&[("delta", delta.to_string())]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Signs { records: vec![2] },
        interpretive: false,
    }
    .finish()
}

/// An atom in `sqrt(1-p)|0> + sqrt(p)|1>` measured along the x-z axis at
/// polar angle `theta`. At `theta = 2 asin(sqrt(p))` the instrument asks
/// which superposition the atom is in, and always answers `+`.
pub fn build_superposition_probe(p: f64, theta: f64) -> Result<ScenarioSpec> {
    let p = probability("p", p)?;
    if !theta.is_finite() {
        return Err(QrealError::InvalidParameter("theta must be finite".into()));
    }
    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("atom", 2, Role::Object),
        Subsystem::new("probe", 2, Role::Record),
    ])?);
    let initial = StateVector::from_real(layout.clone(), &[(1.0 - p).sqrt(), 0.0, p.sqrt(), 0.0])?;
    let steps = vec![EvolutionStep::unitary(vec![0, 1], spin_coupling([theta.sin(), 0.0, theta.cos()]))?
        .labeled("probe")
        .pure_coupling()];
    let markers = vec![marker(0, vec![1], 2, vec![1])?];
    Draft {
        name: "superposition_probe",
        parameters: params(&[("p", p.to_string()), ("theta", theta.to_string())]),
        layout,
        initial,
        steps,
        markers,
        summary: SummaryRule::Signs { records: vec![1] },
        interpretive: true,
    }
    .finish()
}

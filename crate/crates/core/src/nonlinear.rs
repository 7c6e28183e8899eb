//! Nonlinear evolution generated by a real Hamiltonian function of the
//! amplitudes, the realized-block restriction on its monomials, and a
//! signaling audit on an entangled pair.
//!
//! The computational basis serves as the preferred frame in which blocks
//! are defined.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QrealError, Result};
use crate::events::{conditioned_view, subsystem_marginal, Conditioning};
use crate::hilbert::{StateVector, SubsystemLayout, C64};
use crate::reality::RealityToken;
use crate::scenarios::gates::spin_coupling;
use crate::scenarios::PreparedScenario;

/// `coefficient * prod f`, where each factor `(k, true)` is `psi_k^*` and
/// `(k, false)` is `psi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub factors: Vec<(usize, bool)>,
}

impl Monomial {
    pub fn new(coefficient: f64, mut factors: Vec<(usize, bool)>) -> Self {
        factors.sort_unstable();
        Self { coefficient, factors }
    }

    fn conjugate_factors(&self) -> Vec<(usize, bool)> {
        let mut f: Vec<_> = self.factors.iter().map(|&(k, c)| (k, !c)).collect();
        f.sort_unstable();
        f
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.iter().map(|&(k, _)| k)
    }
}

/// A real-valued polynomial in the amplitudes and their conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianFunction {
    dim: usize,
    monomials: Vec<Monomial>,
}

impl HamiltonianFunction {
    /// Validates that every index is in range, every monomial holds as many
    /// conjugated as plain factors, and monomials pair with their complex
    /// conjugates at equal coefficients, so the function is real.
    pub fn new(dim: usize, monomials: Vec<Monomial>) -> Result<Self> {
        let monomials: Vec<Monomial> = monomials
            .into_iter()
            .map(|m| Monomial::new(m.coefficient, m.factors))
            .filter(|m| m.coefficient != 0.0)
            .collect();
        for m in &monomials {
            if !m.coefficient.is_finite() {
                return Err(QrealError::InvalidHamiltonian("non-finite coefficient".into()));
            }
            if let Some(k) = m.indices().find(|&k| k >= dim) {
                return Err(QrealError::InvalidHamiltonian(format!("index {k} out of range {dim}")));
            }
            let conj = m.factors.iter().filter(|f| f.1).count();
            if 2 * conj != m.factors.len() {
                return Err(QrealError::InvalidHamiltonian(format!(
                    "monomial {:?} has unequal degree in psi and psi*",
                    m.factors
                )));
            }
        }
        // real-valuedness: coefficient sums of each monomial and its
        // conjugate must agree
        let mut sums: Vec<(&Monomial, f64)> = Vec::new();
        for m in &monomials {
            match sums.iter_mut().find(|(f, _)| f.factors == m.factors) {
                Some(s) => s.1 += m.coefficient,
                None => sums.push((m, m.coefficient)),
            }
        }
        for (f, c) in &sums {
            let conj = f.conjugate_factors();
            let partner = sums.iter().find(|(g, _)| g.factors == conj).map_or(0.0, |s| s.1);
            if (partner - c).abs() > 1e-12 * c.abs().max(1.0) {
                return Err(QrealError::InvalidHamiltonian(format!(
                    "monomial {:?} is not paired with its conjugate",
                    f.factors
                )));
            }
        }
        Ok(Self { dim, monomials })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, monomials: Vec::new() }
    }

    /// `sum_ij psi_i^* H_ij psi_j` for a real symmetric `H`.
    pub fn quadratic(h: &nalgebra::DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n {
            return Err(QrealError::InvalidHamiltonian("matrix is not square".into()));
        }
        let mut monos = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if h[(i, j)] != 0.0 {
                    monos.push(Monomial::new(h[(i, j)], vec![(i, true), (j, false)]));
                }
            }
        }
        Self::new(n, monos)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// Sum with another function on the same space.
    pub fn plus(&self, other: &HamiltonianFunction) -> Result<Self> {
        if self.dim != other.dim {
            return Err(QrealError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut m = self.monomials.clone();
        m.extend(other.monomials.iter().cloned());
        Self::new(self.dim, m)
    }

    fn factor(psi: &[C64], (k, conj): (usize, bool)) -> C64 {
        if conj {
            psi[k].conj()
        } else {
            psi[k]
        }
    }

    /// Value of the function; real up to rounding.
    pub fn value(&self, psi: &[C64]) -> f64 {
        self.monomials
            .iter()
            .map(|m| m.factors.iter().fold(C64::new(m.coefficient, 0.0), |a, &f| a * Self::factor(psi, f)))
            .sum::<C64>()
            .re
    }

    /// `d h / d psi_k^*` for every `k`.
    pub fn gradient(&self, psi: &[C64]) -> Vec<C64> {
        let mut g = vec![C64::new(0.0, 0.0); self.dim];
        for m in &self.monomials {
            for (p, &(k, conj)) in m.factors.iter().enumerate() {
                if !conj {
                    continue;
                }
                let mut acc = C64::new(m.coefficient, 0.0);
                for (q, &f) in m.factors.iter().enumerate() {
                    if q != p {
                        acc *= Self::factor(psi, f);
                    }
                }
                g[k] += acc;
            }
        }
        g
    }

    /// One monomial per line: the coefficient, then `index:conj` factors
    /// with `conj` 1 for a conjugated amplitude.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.monomials {
            let _ = write!(out, "{:e}", m.coefficient);
            for &(k, c) in &m.factors {
                let _ = write!(out, " {k}:{}", u8::from(c));
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`HamiltonianFunction::to_text`] output. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        let bad = |l: &str| QrealError::InvalidHamiltonian(format!("cannot parse line '{l}'"));
        let mut monos = Vec::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let coefficient: f64 = parts.next().and_then(|c| c.parse().ok()).ok_or_else(|| bad(line))?;
            let factors = parts
                .map(|f| {
                    let (k, c) = f.split_once(':').ok_or_else(|| bad(line))?;
                    let k: usize = k.parse().map_err(|_| bad(line))?;
                    match c {
                        "0" => Ok((k, false)),
                        "1" => Ok((k, true)),
                        _ => Err(bad(line)),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            monos.push(Monomial { coefficient, factors });
        }
        Self::new(dim, monos)
    }
}

/// Default bound on `|‖psi(t)‖ - ‖psi(0)‖|` during integration.
pub const DEFAULT_NORM_DRIFT_BOUND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearRun {
    pub state: StateVector,
    pub steps: usize,
    /// Largest norm deviation from the initial norm along the run.
    pub norm_drift: f64,
}

/// Integrates `d psi_k / dt = -i dh/d psi_k^*` with classical fourth-order
/// Runge-Kutta. The step count is `ceil(duration / dt)` and the step is
/// shortened to land exactly on `duration`.
pub fn nonlinear_evolve(state: &StateVector, h: &HamiltonianFunction, duration: f64, dt: f64) -> Result<NonlinearRun> {
    nonlinear_evolve_with(state, h, duration, dt, DEFAULT_NORM_DRIFT_BOUND)
}

pub fn nonlinear_evolve_with(
    state: &StateVector,
    h: &HamiltonianFunction,
    duration: f64,
    dt: f64,
    drift_bound: f64,
) -> Result<NonlinearRun> {
    if !(dt > 0.0 && dt.is_finite()) || !(duration >= 0.0 && duration.is_finite()) {
        return Err(QrealError::InvalidParameter(format!("duration {duration}, dt {dt}")));
    }
    if h.dim() != state.len() {
        return Err(QrealError::DimensionMismatch { expected: state.len(), got: h.dim() });
    }
    let steps = (duration / dt).ceil() as usize;
    let mut psi = state.amplitudes().to_vec();
    let norm0 = state.norm();
    let mut drift: f64 = 0.0;
    if steps > 0 && !h.monomials().is_empty() {
        let tau = duration / steps as f64;
        let minus_i = C64::new(0.0, -1.0);
        let rhs = |p: &[C64]| -> Vec<C64> { h.gradient(p).into_iter().map(|g| g * minus_i).collect() };
        let axpy = |p: &[C64], k: &[C64], a: f64| -> Vec<C64> {
            p.iter().zip(k).map(|(x, y)| x + y * a).collect()
        };
        for _ in 0..steps {
            let k1 = rhs(&psi);
            let k2 = rhs(&axpy(&psi, &k1, tau / 2.0));
            let k3 = rhs(&axpy(&psi, &k2, tau / 2.0));
            let k4 = rhs(&axpy(&psi, &k3, tau));
            for i in 0..psi.len() {
                psi[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (tau / 6.0);
            }
            let n = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            drift = drift.max((n - norm0).abs());
            if drift.is_nan() || drift > drift_bound {
                return Err(QrealError::IntegrationDiverged { drift, bound: drift_bound });
            }
        }
    }
    Ok(NonlinearRun {
        state: StateVector::new(state.layout_arc().clone(), psi)?,
        steps,
        norm_drift: drift,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestrictionMode {
    None,
    RealizedBlocks,
}

/// Partition of basis indices by realized-record content. Block 0 holds the
/// indices whose record digits agree with every realized record; other
/// blocks group the remaining record configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionPolicy {
    pub mode: RestrictionMode,
    pub blocks: Vec<usize>,
}

impl RestrictionPolicy {
    pub fn none() -> Self {
        Self { mode: RestrictionMode::None, blocks: Vec::new() }
    }

    /// Blocks for `mode` under the token's realized records.
    pub fn from_token(mode: RestrictionMode, layout: &SubsystemLayout, token: Option<&RealityToken>) -> Result<Self> {
        if mode == RestrictionMode::None {
            return Ok(Self::none());
        }
        let token = token.ok_or(QrealError::MissingToken)?;
        let records: Vec<(usize, usize)> = token.realized_records.iter().map(|(&r, &v)| (r, v)).collect();
        let mut configs: Vec<Vec<usize>> = Vec::new();
        let blocks = (0..layout.total_dim())
            .map(|i| {
                let digits: Vec<usize> = records.iter().map(|&(r, _)| layout.digit(i, r)).collect();
                if records.iter().zip(&digits).all(|(&(_, v), &d)| v == d) {
                    0
                } else {
                    match configs.iter().position(|c| *c == digits) {
                        Some(p) => p + 1,
                        None => {
                            configs.push(digits);
                            configs.len()
                        }
                    }
                }
            })
            .collect();
        Ok(Self { mode, blocks })
    }

    pub fn is_realized(&self, index: usize) -> bool {
        self.blocks.get(index).is_none_or(|&b| b == 0)
    }
}

/// Drops every monomial that multiplies realized with non-realized
/// amplitudes. The identity under [`RestrictionMode::None`].
pub fn apply_restriction(h: &HamiltonianFunction, policy: &RestrictionPolicy) -> HamiltonianFunction {
    if policy.mode == RestrictionMode::None {
        return h.clone();
    }
    let monomials = h
        .monomials
        .iter()
        .filter(|m| {
            let mut realized = m.indices().map(|k| policy.is_realized(k));
            match realized.next() {
                None => true,
                Some(first) => realized.all(|r| r == first),
            }
        })
        .cloned()
        .collect();
    HamiltonianFunction { dim: h.dim, monomials }
}

/// Singlet of `a` and `b` with Alice's record `rec_a`; Alice measures `a`
/// along the x-z axis at polar angle `theta`.
pub fn signaling_spec(theta: f64) -> Result<crate::scenarios::ScenarioSpec> {
    use crate::dynamics::{EventMarker, EvolutionStep, Schedule};
    use crate::hilbert::{BipartiteSplit, Role, Subsystem};
    use crate::scenarios::{ScenarioSpec, SummaryRule};
    use std::sync::Arc;

    let layout = Arc::new(SubsystemLayout::new(vec![
        Subsystem::new("a", 2, Role::Object),
        Subsystem::new("b", 2, Role::Object),
        Subsystem::new("rec_a", 2, Role::Record),
    ])?);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = vec![0.0; 8];
    amps[layout.index_of(&[0, 1, 0])?] = h;
    amps[layout.index_of(&[1, 0, 0])?] = -h;
    let initial = StateVector::from_real(layout.clone(), &amps)?;
    let step = EvolutionStep::unitary(vec![0, 2], spin_coupling([theta.sin(), 0.0, theta.cos()]))?
        .labeled("alice")
        .pure_coupling();
    let marker = EventMarker { step: 0, split: BipartiteSplit::new(vec![2], 3)?, records: vec![2] };
    let schedule = Schedule::new(&layout, vec![step], vec![marker])?;
    Ok(ScenarioSpec {
        name: "signaling".into(),
        parameters: [("theta".to_string(), theta.to_string())].into_iter().collect(),
        layout,
        initial_state: initial,
        schedule,
        summary: SummaryRule::Signs { records: vec![2] },
        interpretive: false,
    })
}

/// Bob's local hopping at rate `omega` plus, when `g` is nonzero, quartic
/// terms `g n_i n_j` coupling Bob-up amplitudes of one Alice record block
/// to Bob-up amplitudes of the other. Basis order is `(a, b, rec_a)`.
pub fn signaling_hamiltonian(omega: f64, g: f64) -> Result<HamiltonianFunction> {
    let idx = |a: usize, b: usize, r: usize| a * 4 + b * 2 + r;
    let mut monos = Vec::new();
    for a in 0..2 {
        for r in 0..2 {
            let (u, d) = (idx(a, 0, r), idx(a, 1, r));
            monos.push(Monomial::new(omega, vec![(u, true), (d, false)]));
            monos.push(Monomial::new(omega, vec![(d, true), (u, false)]));
        }
    }
    if g != 0.0 {
        for a in 0..2 {
            for a2 in 0..2 {
                let (i, j) = (idx(a, 0, 0), idx(a2, 0, 1));
                monos.push(Monomial::new(g, vec![(i, true), (i, false), (j, true), (j, false)]));
            }
        }
    }
    HamiltonianFunction::new(8, monos)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalingConfig {
    pub trials_per_setting: u64,
    pub seed_base: u64,
    pub duration: f64,
    pub dt: f64,
}

impl Default for SignalingConfig {
    fn default() -> Self {
        Self { trials_per_setting: 10_000, seed_base: 0, duration: 2.0, dt: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalingReport {
    /// Empirical `P(b = 0)` per Alice setting.
    pub bob_marginals: Vec<f64>,
    /// Born-weighted `P(b = 0)` per setting, from the evolved states.
    pub expected_marginals: Vec<f64>,
    pub max_tv: f64,
    /// Five binomial standard deviations of a difference of two marginals.
    pub noise_floor: f64,
    pub signaling: bool,
}

/// Bob's `P(b = 0)` in the view conditioned on Alice's realized record.
fn bob_up(state: &StateVector, records: &Conditioning) -> Result<f64> {
    let (view, kept) = conditioned_view(state, records)?;
    let view = view.normalized()?;
    let pos = kept.iter().position(|&k| k == 1).ok_or_else(|| QrealError::IndexError("bob".into()))?;
    Ok(subsystem_marginal(&view, pos)[0])
}

/// For each Alice setting, runs trials in which Alice's outcome is realized,
/// the global state evolves under `h` restricted by `mode` for the realized
/// token, and Bob's outcome is sampled from the conditioned view. Reports
/// the largest total-variation distance between Bob's marginals.
pub fn signaling_test(
    settings: &[f64],
    h: &HamiltonianFunction,
    mode: RestrictionMode,
    cfg: &SignalingConfig,
) -> Result<SignalingReport> {
    if settings.len() < 2 || cfg.trials_per_setting == 0 {
        return Err(QrealError::InvalidParameter("need two settings and at least one trial".into()));
    }
    let mut bob = Vec::new();
    let mut expected = Vec::new();
    for (si, &theta) in settings.iter().enumerate() {
        let prepared = PreparedScenario::new(signaling_spec(theta)?)?;
        let post = prepared.final_state().clone();
        // P(b = 0 | Alice record r) for both outcomes; evolution depends on
        // the token only through its realized records
        let mut table = [(0.0, 0.0); 2];
        for (r, slot) in table.iter_mut().enumerate() {
            let mut token = RealityToken::new();
            token.realized_records.insert(2, r);
            let born = subsystem_marginal(&post, 2)[r];
            if born <= prepared.tolerances().null {
                continue;
            }
            let policy = RestrictionPolicy::from_token(mode, post.layout(), Some(&token))?;
            let run = nonlinear_evolve(&post, &apply_restriction(h, &policy), cfg.duration, cfg.dt)?;
            *slot = (born, bob_up(&run.state, &token.realized_records)?);
        }
        expected.push(table.iter().map(|(w, p)| w * p).sum());
        let seed0 = cfg.seed_base.wrapping_add((si as u64) << 32);
        let ups: Vec<Result<bool>> = (0..cfg.trials_per_setting)
            .into_par_iter()
            .map(|i| {
                let seed = seed0.wrapping_add(i);
                let s = prepared.sample(seed)?;
                let r = s.token.realized_records.get(&2).copied().unwrap_or(0);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                Ok(rng.gen::<f64>() < table[r].1)
            })
            .collect();
        let mut up = 0u64;
        for u in ups {
            up += u64::from(u?);
        }
        bob.push(up as f64 / cfg.trials_per_setting as f64);
    }
    let mut max_tv: f64 = 0.0;
    for i in 0..bob.len() {
        for j in i + 1..bob.len() {
            max_tv = max_tv.max((bob[i] - bob[j]).abs());
        }
    }
    let n = cfg.trials_per_setting as f64;
    let noise_floor = 5.0 * 0.5 * (2.0 / n).sqrt();
    Ok(SignalingReport {
        bob_marginals: bob,
        expected_marginals: expected,
        max_tv,
        noise_floor,
        signaling: max_tv > noise_floor,
    })
}

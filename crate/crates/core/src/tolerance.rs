//! Numerical thresholds shared by every module.

/// Environment variable that overrides [`DEFAULT_MAX_DIM`].
pub const MAX_DIM_ENV: &str = "QREAL_MAX_DIM";

/// Largest composite Hilbert-space dimension accepted by default.
pub const DEFAULT_MAX_DIM: usize = 1 << 16;

/// Capacity limit for composite layouts: `QREAL_MAX_DIM` if set and valid,
/// otherwise [`DEFAULT_MAX_DIM`].
pub fn max_total_dim() -> usize {
    std::env::var(MAX_DIM_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(DEFAULT_MAX_DIM)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed deviation of a squared norm from one.
    pub norm: f64,
    /// Allowed deviation from orthonormality of Schmidt vectors.
    pub orth: f64,
    /// Allowed reconstruction error of a Schmidt decomposition.
    pub recon: f64,
    /// Branch weight at or below which a branch is pruned from sampling.
    pub branch: f64,
    /// Global-phase equality threshold on `1 - |<a|b>|`.
    pub phase: f64,
    /// Squared norm at or below which a conditioned view counts as null.
    pub null: f64,
    /// Allowed deviation of a generator from its adjoint.
    pub herm: f64,
    /// Allowed deviation of `U^dagger U` from the identity.
    pub unit: f64,
    /// Minimum pointer weight for a record to count as definite in a branch.
    pub record: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            norm: 1e-10,
            orth: 1e-8,
            recon: 1e-8,
            branch: 1e-9,
            phase: 1e-9,
            null: 1e-12,
            herm: 1e-10,
            unit: 1e-10,
            record: 1e-9,
        }
    }
}

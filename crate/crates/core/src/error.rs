use thiserror::Error;

pub type Result<T, E = QrealError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QrealError {
    #[error("composite dimension {requested} exceeds the capacity limit {limit}")]
    CapacityExceeded { requested: usize, limit: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("index out of range: {0}")]
    IndexError(String),

    #[error("state is not normalized (squared norm {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("invalid bipartite split: {0}")]
    InvalidSplit(String),

    #[error("generator is not Hermitian (deviation {deviation:e})")]
    InvalidGenerator { deviation: f64 },

    #[error("matrix is not unitary (deviation {deviation:e})")]
    InvalidUnitary { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step '{step}' declares no non-interacting reference")]
    MissingReference { step: String },

    #[error("record subsystem {subsystem} is targeted by step {step} after its designation")]
    FrozenRecord { subsystem: usize, step: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("history inconsistent at epoch {epoch}: conditioned view has squared norm {norm_sqr:e}")]
    HistoryInconsistent { epoch: u64, norm_sqr: f64 },

    #[error("record subsystem {subsystem} is not in a definite pointer state in branch {branch}")]
    UnsupportedRecord { subsystem: usize, branch: usize },

    #[error("query for epoch {requested} but token is at epoch {current}")]
    EpochMismatch { requested: u64, current: u64 },

    #[error("marker at step {step} is not an event")]
    NotAnEvent { step: usize },

    #[error("invalid amplitude profile: {0}")]
    InvalidProfile(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid Hamiltonian function: {0}")]
    InvalidHamiltonian(String),

    #[error("restriction policy requires a reality token")]
    MissingToken,

    #[error("integration diverged: norm drift {drift:e} exceeds bound {bound:e}")]
    IntegrationDiverged { drift: f64, bound: f64 },

    #[error("configuration error: {0}")]
    ConfigError(String),
}

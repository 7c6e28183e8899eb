//! Branch-relative reality on top of unmodified unitary quantum dynamics.
//!
//! The global state evolves unitarily and is never collapsed. Events are
//! marker points where a declared interaction splits the state into
//! orthogonal Schmidt branches; a [`reality::RealityToken`] tracks which of
//! them is realized, sampled with Born weights from a conditioned view.

pub mod dynamics;
pub mod error;
pub mod events;
pub mod hilbert;
pub mod nonlinear;
pub mod oracle;
pub mod reality;
pub mod scenarios;
pub mod tolerance;

pub use error::{QrealError, Result};
pub use tolerance::Tolerances;

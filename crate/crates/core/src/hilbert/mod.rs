//! Dense tensor-product linear algebra over small composite spaces.

mod layout;
mod schmidt;
mod state;

pub use layout::{BipartiteSplit, Role, Subsystem, SubsystemLayout};
pub use schmidt::{factorization_test, schmidt_decompose, SchmidtDecomposition};
pub(crate) use schmidt::schmidt_unchecked;
pub use state::{global_phase_equal, partial_inner, tensor_product, StateVector, C64};

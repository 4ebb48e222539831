//! Classification and classical simulation of one-clean-qubit circuits
//! that never create entanglement.
//!
//! A circuit is admitted exactly when every prefix of its gate list has a
//! product eigenbasis; admitted circuits are simulated classically by
//! sampling a product eigenvector uniformly, evolving it factor by factor
//! to read off its eigenphase, and averaging phases into a normalized
//! trace estimate. A dense brute-force oracle provides ground truth at
//! small qubit counts.
//!
//! Module map:
//! - [`mat`] — 2x2/4x4 complex linear algebra with fixed tolerances
//! - [`gate`] — basis-controlled gates and the constructive product-eigenbasis
//!   decomposition of 4x4 unitaries
//! - [`circuit`] — circuit data model, JSON round trip, full-unitary assembly
//! - [`classifier`] — the per-qubit role state machine that admits or rejects
//!   gates one at a time, plus a generator for admissible circuits
//! - [`sampler`] — eigenvector sampling, phase evaluation, trace estimation
//! - [`oracle`] — dense ground truth: exact traces, eigenvector checks,
//!   separability verdicts
//! - [`dense`] — shared dense eigensolver machinery used by `gate` and `oracle`

pub mod circuit;
pub mod classifier;
pub mod dense;
mod error;
pub mod gate;
pub mod mat;
pub mod oracle;
pub mod rng;
pub mod sampler;

#[cfg(test)]
pub(crate) mod testutil;

pub use circuit::{Circuit, Gate, DEFAULT_CAP};
pub use classifier::{classify_circuit, Classification, Rejection};
pub use error::Error;
pub use gate::{BasisControlledGate, ControlSlot, GateKind};
pub use mat::{Mat2, Mat4, QubitBasis, Vec2, Vec4};
pub use sampler::{estimate_normalized_trace, MeasBasis, ProductEigenvector, TraceEstimate};

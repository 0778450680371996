//! Fixed-point iterations of nonexpansive operators and infeasibility
//! detection.
//!
//! When a nonexpansive `T` has no fixed point, the normalized iterate
//! `−(x^k − x⁰)/α_k` and the residual `x^k − Tx^k` still converge to the
//! infimal displacement vector `v`, the minimum-norm element of the closure
//! of `range(I − T)`. A nonzero `v` certifies infeasibility. This crate runs
//! Picard, Krasnoselskii-Mann, Halpern and Mann iterations, audits them
//! against their rate envelopes, builds the matching hard instances and the
//! performance-estimation SDP, and wraps the decentralized PG-EXTRA method
//! as a fixed-point operator.

pub mod analysis;
pub mod linalg;
pub mod lowerbound;
pub mod operators;
pub mod pep;
pub mod pgextra;
pub mod rng;
pub mod schedules;

pub use linalg::{DenseVector, Matrix, SymMatrix};
pub use operators::OperatorSpec;
pub use rng::SplitMix64;
pub use schedules::{Schedule, Trajectory};

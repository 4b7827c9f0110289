//! Variance-reduced forward-reflected-backward splitting (VrFRBS) for
//! stochastic composite inclusions `0 ∈ Gx + Tx`.
//!
//! The crate is organised bottom-up:
//!
//! * [`inclusion`] problem abstraction, resolvents and the forward-backward residual,
//! * [`estimators`] the six stochastic estimators of `2Gx^k - Gx^{k-1}` and their constants,
//! * [`solver`] the iteration loop and step-size rules,
//! * [`problems`] AUC maximisation, policy evaluation and synthetic affine families,
//! * [`verification`] Monte-Carlo and enumeration checks of the estimator definitions,
//! * [`harness`] config-driven experiment matrices with CSV output.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod inclusion;
pub mod linalg;
pub mod par;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod verification;

pub use error::{Error, Result};
pub use estimators::{EstimatorKind, EstimatorParams, EstimatorState, TheoryCard};
pub use inclusion::{Forward, InclusionProblem, Point, Resolvent};
pub use par::Execution;
pub use solver::{RunTrace, SolverConfig};

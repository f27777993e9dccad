//! Decentralized approximate-projection (DAP) subgradient method for
//! multi-agent convex optimization with hard functional constraints.
//!
//! Every agent keeps a local copy of the decision vector. One round of the
//! method is three local steps:
//!
//! 1. average the neighbors' previous iterates with one row of `W_k`,
//! 2. take a projected subgradient step on the agent's own objective,
//! 3. sample one of the agent's constraints and, if it is violated, take a
//!    Polyak step `g⁺ / ‖d‖²` along a subgradient of the violation.
//!
//! Step 3 replaces an exact projection onto the constraint set, which is what
//! makes constraints such as linear matrix inequalities tractable: an LMI only
//! needs one symmetric eigendecomposition per step.
//!
//! The crate is organized as:
//!
//! - [`graph`]: time-varying digraph sequences and connectivity checks,
//! - [`weights`]: doubly stochastic (Metropolis) and equal-neighbor weights,
//! - [`constraints`]: simple sets, violation oracles and their subgradients,
//! - [`algorithm`]: the per-agent update and the synchronous round,
//! - [`problems`]: problem specs, the epigraph transform, the gossip SDP,
//! - [`simulator`]: the round loop, metrics, and termination,
//! - [`oracle`]: centralized reference solvers used for verification.

pub mod algorithm;
pub mod constraints;
mod error;
pub mod graph;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod simulator;
pub mod weights;

pub use error::{Error, Result};

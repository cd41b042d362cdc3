//! Infinite-horizon discrete-time stochastic impulse control with execution
//! delay on finite scenario trees.
//!
//! The value function is built from iterated Snell envelopes, one per
//! admissible impulse, in a risk-neutral (additive) and a risk-sensitive
//! (multiplicative) form. Optimal strategies are read off the hitting
//! regions, and every solve can be checked against a priori bounds, exact
//! path evaluation, Monte Carlo and exhaustive search on small trees.

pub mod cli;
pub mod control_rn;
pub mod control_rs;
mod engine;
pub mod error;
pub mod expr;
pub mod oracle;
pub mod policy;
pub mod problem;
pub mod regime;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod scheme;
pub mod snell;
pub mod strategy;

pub use error::{Error, Result, Violation};
pub use expr::BoundedFunction;
pub use problem::{Mode, ProblemSpec};
pub use regime::{FieldKind, RegimeKey, RegimeSpace, StartTime, ValueField};
pub use scenario::{NodeIdx, ScenarioTree};
pub use scheme::{solve, SolveOptions, SolveOutcome};
pub use strategy::Strategy;

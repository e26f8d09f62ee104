//! Solver and simulator for online k-selection with diseconomies of scale.
//!
//! A seller posts take-it-or-leave-it prices to buyers arriving one at a time
//! and can produce up to `k` units at non-decreasing marginal cost. This crate
//! computes the tight lower bound on the competitive ratio of any online
//! mechanism, builds the randomized dynamic pricing functions derived from
//! it, and simulates posted-price mechanisms on adversarial and stochastic
//! arrival sequences.

pub mod cost_model;
pub mod error;
pub mod exec;
pub mod harness;
pub mod instances;
pub mod lower_bound;
pub mod mechanisms;
pub mod piecewise;
pub mod pricing;
pub mod rng;

pub use cost_model::{CostModel, CostSpec, ModelSpec};
pub use error::{Error, Result};
pub use lower_bound::{LowerBoundSolution, Regime, SolverConfig};
pub use pricing::{PriceVector, PricingScheme};
pub use instances::Instance;
pub use mechanisms::{Mechanism, MechanismKind, RunOutcome, WelfareEstimate};

//! Median-based Byzantine-tolerant gradient aggregation.
//!
//! The crate provides the aggregation rules (mean, medoid, Krum, Multi-Krum,
//! geometric median, marginal median, mean-around-median), the attacks used
//! to stress them, resilience-bound calculators with Monte-Carlo checks, and
//! a deterministic synchronous parameter-server SGD simulator.

pub mod aggregators;
pub mod attacks;
pub mod error;
pub mod grad;
pub mod resilience;
pub mod rng;
pub mod simulator;

pub use aggregators::{AggregatorKind, AggregatorSpec};
pub use attacks::{AttackContext, AttackKind, AttackSpec, ByzantineSelection};
pub use error::{Error, Result};
pub use grad::{GradMatrix, GradVector, WireValue};

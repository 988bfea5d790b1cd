//! Coalescing Brownian particle systems on `[0, 1]`.
//!
//! The crate simulates the n-point motion of a coalescing Brownian flow with
//! bounded Lipschitz drift, the fractional-step approximation that alternates
//! a drift ODE flow with a driftless coalescing segment, the atomic measures
//! both induce, exact one-dimensional Wasserstein distances between those
//! measures, and the determinant-based collision densities with their Monte
//! Carlo estimators.
//!
//! Everything is driven by counter-based seeded noise ([`driver::PathDriver`]),
//! so coupled comparisons — scheme versus exact flow, coarse versus refined
//! start grids — share one realized path family and reproduce bit-exactly.

pub mod densities;
pub mod driver;
pub mod error;
pub mod flow;
pub mod measures;
pub mod quad;
pub mod rng;
pub mod schemes;
pub mod splitting;
pub mod stats;

pub use driver::{PathDriver, TimeGrid};
pub use error::{Error, Result};
pub use flow::{coalescence_prob_oracle, DriftSpec, MergeEvent, ParticleSystem};
pub use measures::{AtomicMeasure, LawDistanceEstimate};
pub use schemes::{CoalescenceScheme, IntervalPartition};
pub use splitting::{PairPath, SplitScheme};

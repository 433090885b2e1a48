//! Monte Carlo tools for the maximum of a continuous stochastic process and
//! the location(s) where it is attained.
//!
//! The crate samples Brownian, two-sided Brownian, drifted and stationary
//! Ornstein-Uhlenbeck paths on uniform grids, extracts the maximum together
//! with its leftmost and rightmost maximizers, estimates the expected
//! maximum of tilted paths with common random numbers, and checks a family
//! of identities linking the mean location of the maximum to derivatives
//! and covariances of the maximum.

// NaN-rejecting guards are spelled `!(x > 0.0)` on purpose.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::should_implement_trait
)]

pub mod argmax;
pub mod cli;
pub mod drift;
pub mod error;
pub mod estimate;
pub mod grid;
pub mod identity;
pub mod process;
pub mod rng;

pub use argmax::{scan_max, MaxResult};
pub use drift::{DriftFn, TiltKind, TiltSpec};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use identity::{IdentityReport, RunSettings};
pub use process::{ProcessKind, ProcessSpec, Realization, SamplePath};
pub use rng::SeedSpec;

//! Limited processor sharing (LPS-K) queues.
//!
//! The crate bundles the pieces needed to study an LPS queue in heavy
//! traffic:
//!
//! * [`measures`]: finite measures on `[0, ∞)` with exact tails and
//!   moments, the Prohorov metric and the tail-based bounds on it.
//! * [`distributions`]: job-size and interarrival laws together with their
//!   equilibrium (stationary-excess) laws.
//! * [`renewal`]: renewal functions, Stieltjes convolutions and the
//!   numerical checks built on them.
//! * [`fluid`]: the critically loaded fluid model solved in service-time
//!   coordinates, the lifting map and the equilibrium diagnostics.
//! * [`simulator`]: an exact event-driven simulator of the G/GI/1 LPS-K
//!   queue with measure-valued snapshots.
//! * [`limits`]: diffusion and shifted fluid scalings, the state-space
//!   collapse statistic, reflected Brownian motion and the workload
//!   limit comparison.
//! * [`cli`]: the batch front-end behind the `lps` binary.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conv;
pub mod distributions;
pub mod fluid;
pub mod limits;
pub mod measures;
pub mod numeric;
pub mod renewal;
pub mod simulator;
pub mod streams;

pub use distributions::{DistributionSpec, Family};
pub use measures::{Cdf, Measure};
pub use renewal::GridFunction;

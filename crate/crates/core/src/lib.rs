//! Approximate Byzantine fault-tolerant distributed optimization.
//!
//! `n` agents each hold a least-squares cost `Q_i(x) = (B_i - A_i x)^2`; up to
//! `f` of them may be Byzantine. The crate provides:
//!
//! - [`costmodel`]: costs, subset minimizers and curvature coefficients,
//! - [`redundancy`]: measurement of the `(2f, eps)`-redundancy of a set of costs,
//! - [`resilient`]: the exhaustive solver whose output is within `2 eps` of the
//!   honest minimizer,
//! - [`filters`] and [`simengine`]: distributed gradient descent with the CGE
//!   and CWTM gradient filters under injected faults,
//! - [`theory`]: the closed-form resilience bounds of both filters and the
//!   impossibility construction for `eps`-resilience below `eps`,
//! - [`experiment`]: configuration files and persisted experiment runs.

pub mod costmodel;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod redundancy;
pub mod resilient;
pub mod simengine;
pub mod theory;
pub mod vector;

pub use costmodel::{CompositeCost, CostFunction, QuadraticCost};
pub use error::{Error, Result};
pub use filters::{FilterKind, GradientBundle};
pub use vector::{AgentSet, Vector};

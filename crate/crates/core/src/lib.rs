//! Two-step estimation of time-varying mediation effects from intensive
//! longitudinal data.
//!
//! The pipeline: at every time point with a lagged mediator observation, a
//! stacked least-squares system estimates the treatment->mediator effects
//! `a_k(t_j)`, the direct effects `c_k(t_j)`, and the mediator->outcome
//! effect `b(t_j)` from the complete cases at that time ([`estimator`]).
//! The raw coefficient series are then smoothed by a local-linear kernel
//! smoother ([`smoother`]), and the mediation effect curve is the product
//! `eta_k(t) = alpha_k(t - dt) * beta(t)` of the smoothed curves
//! ([`mediation`]). Pointwise confidence bands come from a subject-level
//! percentile bootstrap ([`bootstrap`]). A Gaussian-process simulation
//! engine and Monte Carlo harness ([`sim`]) reproduce coverage and error
//! experiments against known generating models.
//!
//! Determinism: every stochastic operation takes an explicit seed, and all
//! replicate-level randomness is drawn from per-index derived streams
//! ([`rng::stream`]), so results are identical regardless of worker count.

pub mod bootstrap;
#[cfg(feature = "cli")]
pub mod cli;
mod error;
pub mod estimator;
pub mod mediation;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod smoother;
#[cfg(test)]
mod testkit;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

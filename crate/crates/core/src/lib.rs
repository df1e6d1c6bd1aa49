//! Simulation library for a day-ahead demand-response market in which a
//! system operator learns consumer baselines online from consumption it
//! observes under perturbed event prices.
//!
//! The pieces, bottom up:
//!
//! - [`model`]: market primitives — consumer utility, operator cost, the
//!   clairvoyant benchmark, and configuration types.
//! - [`estimator`]: the decaying price-perturbation schedule, recursive
//!   least-squares baseline estimation, and the strategic-sensitivity
//!   quantities built on it (inflation incentives and the upfront
//!   participation payment).
//! - [`agents`]: consumer best responses (myopic and forward-looking) and
//!   operator policies (the online-learning mechanism and an
//!   explore-then-commit reference), plus a brute-force best-response
//!   oracle for testing.
//! - [`sim`]: the deterministic, replicable simulation engine.
//! - [`analysis`]: regret growth fitting and cross-policy comparison under
//!   common random numbers.

pub mod agents;
pub mod analysis;
pub mod estimator;
pub mod model;
pub mod sim;

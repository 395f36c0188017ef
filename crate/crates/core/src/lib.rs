//! Numerical toolkit for Knothe-Rosenblatt transports obtained as limits of
//! weighted-cost optimal transport, hard- and soft-constrained, static and
//! dynamic.
//!
//! The weighted cost `c_eps(x, y) = sum_i eps^(i-1) (x_i - y_i)^2` privileges
//! earlier coordinates as `eps -> 0`; optimal plans then converge to the
//! triangular Knothe-Rosenblatt rearrangement. The crate provides:
//!
//! - [`measures`]: grid densities, discrete measures, Gaussians, CDF tables;
//! - [`cost`]: the weighted cost, cost matrices, diagonal rescaling;
//! - [`ot_exact`]: exact transportation-simplex solves with dual certificates;
//! - [`ot_soft`]: the KL-soft-constrained problem, semi-relaxed Sinkhorn and
//!   a first-order oracle with exact support polish;
//! - [`kr`]: Knothe-Rosenblatt maps on grids, atoms, and Gaussians;
//! - [`dynamic`]: displacement interpolation, kinetic action, velocity
//!   triangularity diagnostics;
//! - [`experiments`]: epsilon/lambda sweeps, the commutative diagram of
//!   limits, KL decay, stability under mollification.

#![forbid(unsafe_code)]

pub mod cost;
pub mod dynamic;
pub mod error;
pub mod experiments;
pub mod kr;
pub mod measures;
pub mod ot_exact;
pub mod ot_soft;

pub use error::{Error, Result};

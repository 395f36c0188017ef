//! Probability measures on tensor-product grids and finite supports.
//!
//! Three representations cooperate here:
//!
//! - [`GridDensity`] — a nonnegative density tabulated on a [`GridSpec`],
//!   normalized so that the tensor trapezoid rule integrates it to one.
//! - [`DiscreteMeasure`] — weighted atoms on explicit support points.
//! - [`GaussianMeasure`] — the closed-form test family.
//!
//! All quadrature is trapezoid: second-order accurate, exact for the
//! piecewise-linear density model, and consistent between CDF construction
//! and mass assignment in [`GridDensity::atomize`].

mod cdf;
mod discrete;
mod gaussian;
pub(crate) mod grid;

pub use cdf::{cdf_1d, CdfTable};
pub use discrete::DiscreteMeasure;
pub use gaussian::{discretize, mollify, GaussianMeasure};
pub use grid::{build_grid_density, GridDensity, GridSpec};

/// Slices with total conditioning mass below this are rejected as null sets.
pub const NULL_SLICE_MASS: f64 = 1e-13;

/// Normalization tolerance for densities and atom weights.
pub const NORMALIZATION_TOL: f64 = 1e-12;

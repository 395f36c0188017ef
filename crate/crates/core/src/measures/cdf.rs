use serde::{Deserialize, Serialize};

use super::GridDensity;
use crate::error::{Error, Result};

/// Tabulated CDF on increasing abscissae: nondecreasing values from exactly 0
/// to exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    xs: Vec<f64>,
    ps: Vec<f64>,
}

/// Cumulative trapezoid sums of a 1D density, rescaled to end at exactly 1.
pub fn cdf_1d(density: &GridDensity) -> Result<CdfTable> {
    if density.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: density.dim() });
    }
    let xs = density.grid().axis(0).to_vec();
    let f = density.values();
    let mut ps = vec![0.0; xs.len()];
    for k in 1..xs.len() {
        ps[k] = ps[k - 1] + 0.5 * (xs[k] - xs[k - 1]) * (f[k] + f[k - 1]);
    }
    let total = *ps.last().unwrap();
    for p in ps.iter_mut() {
        *p /= total;
    }
    ps[0] = 0.0;
    *ps.last_mut().unwrap() = 1.0;
    Ok(CdfTable { xs, ps })
}

impl GridDensity {
    /// See [`cdf_1d`].
    pub fn cdf(&self) -> Result<CdfTable> {
        cdf_1d(self)
    }
}

impl CdfTable {
    pub fn abscissae(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ps
    }

    /// Piecewise-linear CDF evaluation, clamped to [0, 1] off the table.
    pub fn evaluate(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let k = self.xs.partition_point(|&a| a <= x) - 1;
        let k = k.min(n - 2);
        let t = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
        self.ps[k] + t * (self.ps[k + 1] - self.ps[k])
    }

    /// Left-continuous generalized inverse: smallest x with F(x) >= u.
    /// On flat segments this returns the left endpoint.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) || u.is_nan() {
            return Err(Error::QuantileOutOfRange(u));
        }
        // Levels within FLAT_TOL count as already reached, so a level sitting
        // (up to rounding) on a flat run resolves to the run's left endpoint.
        const FLAT_TOL: f64 = 1e-12;
        let k = self.ps.partition_point(|&p| p < u - FLAT_TOL);
        if k == 0 {
            return Ok(self.xs[0]);
        }
        if self.ps[k] <= u + FLAT_TOL {
            return Ok(self.xs[k]);
        }
        let lo = self.ps[k - 1];
        let hi = self.ps[k];
        let t = (u - lo) / (hi - lo);
        Ok(self.xs[k - 1] + t * (self.xs[k] - self.xs[k - 1]))
    }
}

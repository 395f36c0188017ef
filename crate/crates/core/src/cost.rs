//! The weighted Euclidean cost `c_eps(x, y) = sum_i eps^(i-1) (x_i - y_i)^2`
//! and the diagonal rescaling that reduces it to the plain quadratic cost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted quadratic cost with geometrically decaying coordinate weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCost {
    epsilon: f64,
    dimension: usize,
    weights: Vec<f64>,
}

impl WeightedCost {
    /// `epsilon` must lie in (0, 1]; the eps -> 0 limit is always realized as
    /// a sweep, never passed to a solver.
    pub fn new(epsilon: f64, dimension: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) || epsilon.is_nan() {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        if dimension == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let weights = (0..dimension).map(|i| epsilon.powi(i as i32)).collect();
        Ok(WeightedCost { epsilon, dimension, weights })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i eps^(i-1) (x_i - y_i)^2`; the squared Euclidean distance at eps = 1.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dimension || y.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: x.len().max(y.len()) });
        }
        Ok(self
            .weights
            .iter()
            .zip(x.iter().zip(y))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum())
    }

    /// Dense cost matrix `C[i][j] = c_eps(source[i], target[j])`, row-major.
    pub fn matrix(&self, source: &[Vec<f64>], target: &[Vec<f64>]) -> Result<CostMatrix> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::ShapeMismatch("empty support".into()));
        }
        let mut entries = Vec::with_capacity(source.len() * target.len());
        for x in source {
            for y in target {
                entries.push(self.eval(x, y)?);
            }
        }
        Ok(CostMatrix { rows: source.len(), cols: target.len(), entries })
    }

    /// Diagonal `A_eps = diag(eps^((i-1)/2))`, so `|A_eps (x - y)|^2 = c_eps(x, y)`.
    pub fn rescale_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dimension, self.dimension, |i, j| {
            if i == j {
                self.weights[i].sqrt()
            } else {
                0.0
            }
        })
    }
}

/// Dense nonnegative cost matrix over a source and target support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn median(&self) -> f64 {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[sorted.len() / 2]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0_f64, f64::max)
    }

    /// CSV with header `i,j,cost`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,cost\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push_str(&format!("{i},{j},{}\n", self.at(i, j)));
            }
        }
        out
    }
}

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, GridDensity, GridSpec};
use crate::error::{Error, Result};

/// Multivariate normal with SPD covariance; the closed-form test family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRaw", into = "GaussianRaw")]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GaussianRaw {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<GaussianRaw> for GaussianMeasure {
    type Error = Error;
    fn try_from(raw: GaussianRaw) -> Result<Self> {
        GaussianMeasure::new(raw.mean, raw.covariance)
    }
}

impl From<GaussianMeasure> for GaussianRaw {
    fn from(g: GaussianMeasure) -> Self {
        GaussianRaw { mean: g.mean, covariance: g.covariance }
    }
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: covariance.len() });
        }
        for i in 0..d {
            for j in 0..d {
                let a = covariance[i][j];
                let b = covariance[j][i];
                if !a.is_finite() {
                    return Err(Error::CovarianceNotPositiveDefinite);
                }
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::CovarianceNotPositiveDefinite);
                }
            }
        }
        let g = GaussianMeasure { mean, covariance };
        // Cholesky succeeds exactly for SPD matrices.
        g.cholesky()?;
        Ok(g)
    }

    pub fn standard(d: usize) -> Self {
        let mut cov = vec![vec![0.0; d]; d];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        GaussianMeasure { mean: vec![0.0; d], covariance: cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.covariance[i][j])
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        Cholesky::new(self.covariance_matrix())
            .map(|c| c.l())
            .ok_or(Error::CovarianceNotPositiveDefinite)
    }

    /// Density at a point.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let chol = Cholesky::new(self.covariance_matrix()).expect("validated SPD");
        let z = DVector::from_fn(d, |i, _| x[i] - self.mean[i]);
        let sol = chol.solve(&z);
        let quad = z.dot(&sol);
        let det = chol.l().diagonal().iter().map(|v| v * v).product::<f64>();
        ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt().recip() * (-0.5 * quad).exp()
    }

    /// Per-axis standard deviations (sqrt of the covariance diagonal).
    pub fn axis_std(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.covariance[i][i].sqrt()).collect()
    }

    /// Whether `grid` spans mean ± 5 sigma on every axis.
    pub fn covered_by(&self, grid: &GridSpec) -> bool {
        if grid.dim() != self.dim() {
            return false;
        }
        self.axis_std().iter().enumerate().all(|(k, s)| {
            let axis = grid.axis(k);
            axis[0] <= self.mean[k] - 5.0 * s && *axis.last().unwrap() >= self.mean[k] + 5.0 * s
        })
    }
}

/// Evaluate the Gaussian density on the grid nodes and normalize.
///
/// Callers wanting the 5-sigma coverage warning check
/// [`GaussianMeasure::covered_by`] first.
pub fn discretize(gaussian: &GaussianMeasure, grid: &GridSpec) -> Result<GridDensity> {
    if grid.dim() != gaussian.dim() {
        return Err(Error::DimensionMismatch { expected: gaussian.dim(), got: grid.dim() });
    }
    let values: Vec<f64> = (0..grid.num_nodes())
        .map(|i| gaussian.pdf(&grid.node(i)))
        .collect();
    GridDensity::new(grid.clone(), values)
}

/// Gaussian-kernel smoothing of atoms onto a grid; `bandwidth` is the kernel
/// standard deviation. As bandwidth -> 0 the atomized result converges weakly
/// back to the input.
pub fn mollify(measure: &DiscreteMeasure, bandwidth: f64, grid: &GridSpec) -> Result<GridDensity> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    if grid.dim() != measure.dim() {
        return Err(Error::DimensionMismatch { expected: measure.dim(), got: grid.dim() });
    }
    let inv_two_b2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let values: Vec<f64> = (0..grid.num_nodes())
        .map(|i| {
            let node = grid.node(i);
            measure
                .points()
                .iter()
                .zip(measure.weights())
                .map(|(p, w)| {
                    let r2: f64 = node.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                    w * (-r2 * inv_two_b2).exp()
                })
                .sum()
        })
        .collect();
    GridDensity::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::discrete::dirac;
    use approx::assert_abs_diff_eq;

    #[test]
    fn non_spd_covariance_rejected() {
        let bad = GaussianMeasure::new(vec![0.0, 0.0], vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(bad, Err(Error::CovarianceNotPositiveDefinite)));
        let asym = GaussianMeasure::new(vec![0.0, 0.0], vec![vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(asym.is_err());
    }

    #[test]
    fn discretized_standard_normal_atomizes_to_unit_mass() {
        let g = GridSpec::uniform(&[-6.0], &[6.0], &[241]).unwrap();
        let f = discretize(&GaussianMeasure::standard(1), &g).unwrap();
        let atoms = f.atomize();
        assert_abs_diff_eq!(atoms.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.second_moment(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn std_normal_2d_weights_symmetric_under_coordinate_swap() {
        let g = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[21, 21]).unwrap();
        let f = discretize(&GaussianMeasure::standard(2), &g).unwrap();
        let v = f.values();
        for i in 0..21 {
            for j in 0..21 {
                assert_abs_diff_eq!(v[i * 21 + j], v[j * 21 + i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn marginal_of_correlated_gaussian_matches_1d_gaussian() {
        let g2 = GridSpec::uniform(&[-8.0, -8.0], &[8.0, 8.0], &[97, 97]).unwrap();
        let joint = discretize(
            &GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            &g2,
        )
        .unwrap();
        let m = joint.marginal(&[0]).unwrap();
        let g1 = GridSpec::uniform(&[-8.0], &[8.0], &[97]).unwrap();
        let reference = discretize(
            &GaussianMeasure::new(vec![0.0], vec![vec![2.0]]).unwrap(),
            &g1,
        )
        .unwrap();
        for (a, b) in m.values().iter().zip(reference.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn conditional_of_correlated_gaussian_matches_closed_form() {
        // N(0, [[2,1],[1,2]]) given x1 = 1 is N(1/2, 3/2).
        let g2 = GridSpec::uniform(&[-8.0, -8.0], &[8.0, 8.0], &[161, 161]).unwrap();
        let joint = discretize(
            &GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            &g2,
        )
        .unwrap();
        let cond = joint.conditional_slice(1, &[1.0]).unwrap();
        let g1 = GridSpec::uniform(&[-8.0], &[8.0], &[161]).unwrap();
        let reference = discretize(
            &GaussianMeasure::new(vec![0.5], vec![vec![1.5]]).unwrap(),
            &g1,
        )
        .unwrap();
        for (a, b) in cond.values().iter().zip(reference.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-3);
        }
    }

    #[test]
    fn mollified_atom_matches_gaussian_kernel() {
        let g = GridSpec::uniform(&[-4.0], &[4.0], &[161]).unwrap();
        let f = mollify(&dirac(vec![0.0]), 0.5, &g).unwrap();
        let reference = discretize(
            &GaussianMeasure::new(vec![0.0], vec![vec![0.25]]).unwrap(),
            &g,
        )
        .unwrap();
        for (a, b) in f.values().iter().zip(reference.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn mollified_pair_is_symmetric_and_keeps_mean() {
        let two = DiscreteMeasure::new(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let g = GridSpec::uniform(&[-3.0], &[3.0], &[301]).unwrap();
        let f = mollify(&two, 0.1, &g).unwrap();
        let v = f.values();
        for i in 0..v.len() {
            assert_abs_diff_eq!(v[i], v[v.len() - 1 - i], epsilon = 1e-10);
        }

        let shifted = DiscreteMeasure::new(vec![vec![0.0], vec![2.0]], vec![0.5, 0.5]).unwrap();
        let g2 = GridSpec::uniform(&[-4.0], &[6.0], &[501]).unwrap();
        let fm = mollify(&shifted, 0.3, &g2).unwrap();
        let atoms = fm.atomize();
        let mean: f64 = atoms.points().iter().zip(atoms.weights()).map(|(p, w)| p[0] * w).sum();
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn bad_bandwidth_rejected() {
        let m = dirac(vec![0.0]);
        let g = GridSpec::uniform(&[-1.0], &[1.0], &[11]).unwrap();
        assert!(matches!(mollify(&m, 0.0, &g), Err(Error::InvalidBandwidth(_))));
        assert!(matches!(mollify(&m, -1.0, &g), Err(Error::InvalidBandwidth(_))));
    }

    #[test]
    fn five_sigma_coverage_check() {
        let g = GaussianMeasure::standard(1);
        let wide = GridSpec::uniform(&[-6.0], &[6.0], &[11]).unwrap();
        let narrow = GridSpec::uniform(&[-3.0], &[3.0], &[11]).unwrap();
        assert!(g.covered_by(&wide));
        assert!(!g.covered_by(&narrow));
    }
}

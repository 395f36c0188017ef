//! Shared fixtures for the integration suites. Each suite uses a subset.
#![allow(dead_code)]

use krot::cost::{CostMatrix, WeightedCost};
use krot::measures::{discretize, DiscreteMeasure, GaussianMeasure, GridDensity, GridSpec};
use rand::Rng;

/// Source N(0, I2) and target N(0, [[2,1],[1,2]]); the pair every Gaussian
/// convergence statement runs on.
pub fn gaussian_pair() -> (GaussianMeasure, GaussianMeasure) {
    (
        GaussianMeasure::standard(2),
        GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
    )
}

/// Grids spanning mean +/- 5 sigma per axis. The matched coverage makes the
/// coordinate-1 column masses of source and target agree exactly, so the
/// monotone recursion never splits grid columns.
pub fn gaussian_grids(nodes: usize) -> (GridSpec, GridSpec) {
    let s = 5.0;
    let t = 5.0 * 2.0_f64.sqrt();
    (
        GridSpec::uniform(&[-s, -s], &[s, s], &[nodes, nodes]).unwrap(),
        GridSpec::uniform(&[-t, -t], &[t, t], &[nodes, nodes]).unwrap(),
    )
}

pub fn gaussian_densities(nodes: usize) -> (GridDensity, GridDensity) {
    let (src, tgt) = gaussian_pair();
    let (sg, tg) = gaussian_grids(nodes);
    (discretize(&src, &sg).unwrap(), discretize(&tgt, &tg).unwrap())
}

pub fn gaussian_atoms(nodes: usize) -> (DiscreteMeasure, DiscreteMeasure) {
    let (f, g) = gaussian_densities(nodes);
    (f.atomize(), g.atomize())
}

/// mu = (delta_0 + delta_1)/2, nu = (delta_2 + delta_3)/2: hard value 4,
/// second moments summing to 7.
pub fn two_atom_fixture() -> (DiscreteMeasure, DiscreteMeasure, CostMatrix) {
    let mu = atoms_1d(&[0.0, 1.0], &[0.5, 0.5]);
    let nu = atoms_1d(&[2.0, 3.0], &[0.5, 0.5]);
    let c = WeightedCost::new(1.0, 1).unwrap().matrix(mu.points(), nu.points()).unwrap();
    (mu, nu, c)
}

pub fn atoms_1d(xs: &[f64], ws: &[f64]) -> DiscreteMeasure {
    DiscreteMeasure::new(xs.iter().map(|&x| vec![x]).collect(), ws.to_vec()).unwrap()
}

/// Random measure with distinct support points and strictly positive
/// normalized weights.
pub fn random_measure(rng: &mut impl Rng, n: usize, d: usize) -> DiscreteMeasure {
    loop {
        let points: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let mut weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        if let Ok(m) = DiscreteMeasure::new(points, weights) {
            return m;
        }
    }
}

pub fn uniform_measure(rng: &mut impl Rng, n: usize, d: usize) -> DiscreteMeasure {
    loop {
        let points: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        if let Ok(m) = DiscreteMeasure::new(points, vec![1.0 / n as f64; n]) {
            return m;
        }
    }
}

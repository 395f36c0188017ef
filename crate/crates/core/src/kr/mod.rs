//! Knothe-Rosenblatt maps and plans: the limit objects every convergence
//! experiment compares against.
//!
//! Three constructions cover the toolkit's measure representations:
//!
//! - [`kr_map_grid`] inverts conditional CDFs recursively on grid densities;
//! - [`kr_plan_discrete`] couples finite measures by recursive monotone
//!   (north-west-corner) marching with atom splitting;
//! - [`kr_map_gaussian`] is the affine Cholesky closed form, and
//!   [`brenier_gaussian_weighted`] its weighted-cost optimal counterpart via
//!   the diagonal rescaling.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cost::WeightedCost;
use crate::error::{Error, Result};
use crate::measures::grid::bracket;
use crate::measures::{cdf_1d, DiscreteMeasure, GaussianMeasure, GridDensity};
use crate::ot_exact::{Coupling, MapTable};

/// Monotone 1D map tabulated on source nodes, evaluated piecewise-linearly
/// and clamped outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTable {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl MonotoneTable {
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (k, t) = bracket(&self.inputs, x);
        self.outputs[k] + t * (self.outputs[k + 1] - self.outputs[k])
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.outputs.windows(2).all(|w| w[1] >= w[0])
    }
}

/// The 1D monotone rearrangement `T = G^{-1} o F` evaluated at source nodes.
pub fn monotone_rearrangement_1d(f: &GridDensity, g: &GridDensity) -> Result<MonotoneTable> {
    let cdf_f = cdf_1d(f)?;
    let cdf_g = cdf_1d(g)?;
    let inputs = f.grid().axis(0).to_vec();
    let outputs = inputs
        .iter()
        .map(|&x| cdf_g.quantile(cdf_f.evaluate(x)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(MonotoneTable { inputs, outputs })
}

/// One triangular component: monotone tables in `x_i`, tabulated at every
/// predecessor grid node and interpolated multilinearly between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Predecessor node arrays (axes `0..i` of the source grid).
    predecessor_axes: Vec<Vec<f64>>,
    /// Tables indexed row-major over the predecessor nodes.
    tables: Vec<MonotoneTable>,
}

impl Component {
    fn predecessor_shape(&self) -> Vec<usize> {
        self.predecessor_axes.iter().map(Vec::len).collect()
    }

    fn predecessor_strides(&self) -> Vec<usize> {
        let shape = self.predecessor_shape();
        let mut strides = vec![1usize; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        strides
    }

    /// Evaluate `T_i(x_1, ..., x_i)`: tables at the bracketing predecessor
    /// corners are evaluated at `x_i` and combined multilinearly, so each
    /// section stays monotone in `x_i`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let i = self.predecessor_axes.len();
        if i == 0 {
            return self.tables[0].eval(x[0]);
        }
        let strides = self.predecessor_strides();
        let brackets: Vec<(usize, f64)> = self
            .predecessor_axes
            .iter()
            .enumerate()
            .map(|(k, axis)| bracket(axis, x[k]))
            .collect();
        let mut acc = 0.0;
        for corner in 0..(1usize << i) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for (k, &(i0, frac)) in brackets.iter().enumerate() {
                let hi = (corner >> k) & 1 == 1;
                w *= if hi { frac } else { 1.0 - frac };
                flat += (i0 + hi as usize) * strides[k];
            }
            if w != 0.0 {
                acc += w * self.tables[flat].eval(x[i]);
            }
        }
        acc
    }

    pub fn tables(&self) -> &[MonotoneTable] {
        &self.tables
    }
}

/// Lower-triangular transport: component `i` reads only coordinates `1..=i`
/// and is monotone in its own coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularMap {
    components: Vec<Component>,
}

impl TriangularMap {
    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn as_map_table(&self, points: &[Vec<f64>]) -> MapTable {
        MapTable::from_fn(points, |p| self.eval(p))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

/// Recursive conditional-CDF construction of the KR map between grid
/// densities: component 1 rearranges the first marginals, component `i`
/// rearranges `f(x_i | x_{1:i-1})` onto `g(y_i | T_{1:i-1}(x_{1:i-1}))`.
pub fn kr_map_grid(source: &GridDensity, target: &GridDensity) -> Result<TriangularMap> {
    let d = source.dim();
    if target.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.dim() });
    }
    let mut components: Vec<Component> = Vec::with_capacity(d);

    let src_first = source.marginal(&[0])?;
    let tgt_first = target.marginal(&[0])?;
    components.push(Component {
        predecessor_axes: Vec::new(),
        tables: vec![monotone_rearrangement_1d(&src_first, &tgt_first)?],
    });

    for i in 1..d {
        let predecessor_axes: Vec<Vec<f64>> =
            (0..i).map(|k| source.grid().axis(k).to_vec()).collect();
        let shape: Vec<usize> = predecessor_axes.iter().map(Vec::len).collect();
        let count: usize = shape.iter().product();
        let mut tables = Vec::with_capacity(count);
        let partial = TriangularMap { components: components.clone() };
        for flat in 0..count {
            let mut rem = flat;
            let mut x_pred = vec![0.0; i];
            for k in 0..i {
                let stride: usize = shape[k + 1..].iter().product();
                x_pred[k] = predecessor_axes[k][rem / stride];
                rem %= stride;
            }
            let y_pred = partial.eval(&x_pred);
            let cond_src = source.conditional_slice(i, &x_pred)?;
            let cond_tgt = target.conditional_slice(i, &y_pred)?;
            tables.push(monotone_rearrangement_1d(&cond_src, &cond_tgt)?);
        }
        components.push(Component { predecessor_axes, tables });
    }
    Ok(TriangularMap { components })
}

/// Relative violation of `g(T_i | T_{1:i-1}) dT_i/dx_i = f(x_i | x_{1:i-1})`
/// at interior nodes, with `dT_i/dx_i` estimated by central differences.
///
/// Nodes where the conditional source density falls below 2% of its slice
/// maximum are skipped: there the division is dominated by discretization
/// noise rather than the identity itself.
pub fn kr_jacobian_identity_check(
    map: &TriangularMap,
    source: &GridDensity,
    target: &GridDensity,
) -> Result<f64> {
    const DENSITY_TRIM: f64 = 0.02;
    let d = map.dim();
    let mut worst = 0.0_f64;
    for i in 0..d {
        let comp = &map.components[i];
        let shape = comp.predecessor_shape();
        let count: usize = shape.iter().product::<usize>().max(1);
        let partial = TriangularMap { components: map.components[..i].to_vec() };
        for flat in 0..count {
            let mut rem = flat;
            let mut x_pred = vec![0.0; i];
            for k in 0..i {
                let stride: usize = shape[k + 1..].iter().product();
                x_pred[k] = comp.predecessor_axes[k][rem / stride];
                rem %= stride;
            }
            let y_pred = partial.eval(&x_pred);
            let cond_src = source.conditional_slice(i, &x_pred)?;
            let cond_tgt = target.conditional_slice(i, &y_pred)?;
            let table = &comp.tables[flat];
            let xs = table.inputs();
            let ts = table.outputs();
            let f_vals = cond_src.values();
            let f_max = f_vals.iter().copied().fold(0.0_f64, f64::max);
            let g_axis = cond_tgt.grid().axis(0);
            let g_vals = cond_tgt.values();
            for k in 1..xs.len() - 1 {
                if f_vals[k] < DENSITY_TRIM * f_max {
                    continue;
                }
                let dt = (ts[k + 1] - ts[k - 1]) / (xs[k + 1] - xs[k - 1]);
                let (b, t) = bracket(g_axis, ts[k]);
                let g_at = g_vals[b] + t * (g_vals[b + 1] - g_vals[b]);
                let violation = (g_at * dt - f_vals[k]).abs() / f_vals[k];
                worst = worst.max(violation);
            }
        }
    }
    Ok(worst)
}

const MASS_EPS: f64 = 1e-15;

/// Knothe-Rosenblatt plan between discrete measures: sort lexicographically,
/// couple coordinate-1 groups by the monotone north-west-corner rule with
/// atom splitting, and recurse on the conditional measures inside each
/// matched mass cell.
pub fn kr_plan_discrete(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<Coupling> {
    let d = source.dim();
    if target.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.dim() });
    }
    let src: Vec<(usize, f64)> = source
        .lex_order()
        .into_iter()
        .map(|i| (i, source.weights()[i]))
        .collect();
    let tgt: Vec<(usize, f64)> = target
        .lex_order()
        .into_iter()
        .map(|j| (j, target.weights()[j]))
        .collect();
    let mut entries = Vec::new();
    recurse_nw(source, target, &src, &tgt, 0, &mut entries);
    Coupling::new(source.clone(), target.clone(), entries)
}

/// `src` and `tgt` are lex-sorted (from coordinate `coord` on), carry equal
/// total mass, and within the current cell agree on all earlier grouping
/// stages. Emits plan triplets.
fn recurse_nw(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    src: &[(usize, f64)],
    tgt: &[(usize, f64)],
    coord: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    let d = source.dim();
    if coord == d {
        // Distinct support points: a fully-grouped cell is a single pair.
        debug_assert!(src.len() == 1 && tgt.len() == 1);
        let mass = src[0].1;
        if mass > 0.0 {
            out.push((src[0].0, tgt[0].0, mass));
        }
        return;
    }

    let src_groups = group_by_coord(source, src, coord);
    let tgt_groups = group_by_coord(target, tgt, coord);

    let mut gi = 0;
    let mut gj = 0;
    let mut rem_a = src_groups.first().map_or(0.0, |g| g.mass);
    let mut rem_b = tgt_groups.first().map_or(0.0, |g| g.mass);
    while gi < src_groups.len() && gj < tgt_groups.len() {
        let m = rem_a.min(rem_b);
        if m > MASS_EPS {
            let ga = &src_groups[gi];
            let gb = &tgt_groups[gj];
            let sub_src: Vec<(usize, f64)> =
                ga.atoms.iter().map(|&(i, w)| (i, w * m / ga.mass)).collect();
            let sub_tgt: Vec<(usize, f64)> =
                gb.atoms.iter().map(|&(j, w)| (j, w * m / gb.mass)).collect();
            recurse_nw(source, target, &sub_src, &sub_tgt, coord + 1, out);
        }
        rem_a -= m;
        rem_b -= m;
        if rem_a <= MASS_EPS {
            gi += 1;
            rem_a = src_groups.get(gi).map_or(0.0, |g| g.mass);
        }
        if rem_b <= MASS_EPS {
            gj += 1;
            rem_b = tgt_groups.get(gj).map_or(0.0, |g| g.mass);
        }
    }
}

struct CoordGroup {
    atoms: Vec<(usize, f64)>,
    mass: f64,
}

fn group_by_coord(measure: &DiscreteMeasure, atoms: &[(usize, f64)], coord: usize) -> Vec<CoordGroup> {
    let mut groups: Vec<CoordGroup> = Vec::new();
    let mut current: Option<f64> = None;
    for &(idx, w) in atoms {
        let value = measure.point(idx)[coord];
        if current != Some(value) {
            groups.push(CoordGroup { atoms: Vec::new(), mass: 0.0 });
            current = Some(value);
        }
        let g = groups.last_mut().unwrap();
        g.atoms.push((idx, w));
        g.mass += w;
    }
    groups
}

/// Affine map `T(x) = A x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(matrix: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        let d = offset.len();
        if matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: matrix.len() });
        }
        Ok(AffineMap { matrix, offset })
    }

    pub fn identity(d: usize) -> Self {
        let mut matrix = vec![vec![0.0; d]; d];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        AffineMap { matrix, offset: vec![0.0; d] }
    }

    pub fn from_nalgebra(linear: &DMatrix<f64>, offset: &DVector<f64>) -> Self {
        let d = offset.len();
        AffineMap {
            matrix: (0..d).map(|i| (0..d).map(|j| linear[(i, j)]).collect()).collect(),
            offset: offset.iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn linear_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.matrix[i][j])
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    pub fn as_map_table(&self, points: &[Vec<f64>]) -> MapTable {
        MapTable::from_fn(points, |p| self.eval(p))
    }

    /// Frobenius norm of the strictly upper-triangular entries.
    pub fn strict_upper_norm(&self) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                acc += self.matrix[i][j] * self.matrix[i][j];
            }
        }
        acc.sqrt()
    }
}

/// Symmetric PSD square root via eigendecomposition.
fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = m.nrows();
    let sqrt_vals = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            eig.eigenvalues[i].max(0.0).sqrt()
        } else {
            0.0
        }
    });
    let s = &eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose();
    // Symmetrize away rounding dust.
    0.5 * (&s + s.transpose())
}

/// Closed-form KR map between Gaussians: `T(x) = m1 + L1 L0^{-1} (x - m0)`
/// with lower Cholesky factors; lower-triangular with positive diagonal and
/// an exact pushforward.
pub fn kr_map_gaussian(source: &GaussianMeasure, target: &GaussianMeasure) -> Result<AffineMap> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: source.dim(), got: target.dim() });
    }
    let l0 = source.cholesky()?;
    let l1 = target.cholesky()?;
    let l0_inv = l0.try_inverse().ok_or(Error::CovarianceNotPositiveDefinite)?;
    let linear = &l1 * l0_inv;
    let m0 = source.mean_vector();
    let m1 = target.mean_vector();
    let offset = &m1 - &linear * m0;
    Ok(AffineMap::from_nalgebra(&linear, &offset))
}

/// Optimal map between Gaussians for the weighted cost: conjugate the
/// standard quadratic-cost Gaussian transport by the diagonal rescaling
/// `A_eps`, i.e. `T(x) = A^{-1} T~(A x)` where `T~` couples the pushforward
/// Gaussians.
pub fn brenier_gaussian_weighted(
    source: &GaussianMeasure,
    target: &GaussianMeasure,
    cost: &WeightedCost,
) -> Result<AffineMap> {
    let d = source.dim();
    if target.dim() != d || cost.dimension() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.dim().max(cost.dimension()) });
    }
    let a = cost.rescale_matrix();
    let a_inv = a.clone().try_inverse().ok_or(Error::InvalidEpsilon(cost.epsilon()))?;
    let sigma0 = &a * source.covariance_matrix() * &a;
    let sigma1 = &a * target.covariance_matrix() * &a;

    // Standard Gaussian Monge matrix between the rescaled covariances:
    // S = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}.
    let root0 = spd_sqrt(&sigma0);
    let root0_inv = root0.clone().try_inverse().ok_or(Error::CovarianceNotPositiveDefinite)?;
    let middle = spd_sqrt(&(&root0 * sigma1 * &root0));
    let s = &root0_inv * middle * &root0_inv;

    let linear = &a_inv * s * &a;
    let m0 = source.mean_vector();
    let m1 = target.mean_vector();
    let offset = &m1 - &linear * m0;
    Ok(AffineMap::from_nalgebra(&linear, &offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{build_grid_density, discretize, GridSpec};
    use crate::ot_exact::barycentric_map;
    use approx::assert_abs_diff_eq;

    fn gaussian_pair_2d() -> (GaussianMeasure, GaussianMeasure) {
        (
            GaussianMeasure::standard(2),
            GaussianMeasure::new(vec![0.0, 0.0], vec![vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
        )
    }

    #[test]
    fn rearrangement_identity_and_scaling() {
        let g = GridSpec::uniform(&[0.0], &[1.0], &[33]).unwrap();
        let f = build_grid_density(g, vec![1.0; 33]).unwrap();
        let t = monotone_rearrangement_1d(&f, &f).unwrap();
        for (x, y) in t.inputs().iter().zip(t.outputs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }

        let g2 = GridSpec::uniform(&[0.0], &[2.0], &[65]).unwrap();
        let f2 = build_grid_density(g2, vec![1.0; 65]).unwrap();
        let t2 = monotone_rearrangement_1d(&f, &f2).unwrap();
        let h = 1.0 / 32.0;
        for (x, y) in t2.inputs().iter().zip(t2.outputs()) {
            assert_abs_diff_eq!(*y, 2.0 * x, epsilon = h);
        }
        assert!(t2.is_nondecreasing());
    }

    #[test]
    fn rearrangement_gaussian_matches_affine_form() {
        // N(0,1) -> N(3,4) has T(x) = 3 + 2x.
        let g0 = GridSpec::uniform(&[-5.0], &[5.0], &[201]).unwrap();
        let g1 = GridSpec::uniform(&[-7.0], &[13.0], &[201]).unwrap();
        let f = discretize(&GaussianMeasure::new(vec![0.0], vec![vec![1.0]]).unwrap(), &g0).unwrap();
        let h = discretize(&GaussianMeasure::new(vec![3.0], vec![vec![4.0]]).unwrap(), &g1).unwrap();
        let t = monotone_rearrangement_1d(&f, &h).unwrap();
        for (x, y) in t.inputs().iter().zip(t.outputs()) {
            if x.abs() <= 3.0 {
                assert_abs_diff_eq!(*y, 3.0 + 2.0 * x, epsilon = 2e-2);
            }
        }
    }

    #[test]
    fn kr_gaussian_closed_form_2d() {
        let (src, tgt) = gaussian_pair_2d();
        let map = kr_map_gaussian(&src, &tgt).unwrap();
        let m = map.matrix();
        // Cholesky of [[2,1],[1,2]]: [[sqrt(2), 0], [1/sqrt(2), sqrt(3/2)]].
        assert_abs_diff_eq!(m[0][0], 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m[0][1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1][0], 1.0 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m[1][1], 1.5_f64.sqrt(), epsilon = 1e-12);

        // Pushforward: L Sigma0 L^T = Sigma1.
        let l = map.linear_matrix();
        let push = &l * src.covariance_matrix() * l.transpose();
        let sigma1 = tgt.covariance_matrix();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(push[(i, j)], sigma1[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kr_gaussian_identity_and_1d() {
        let g = GaussianMeasure::new(vec![1.0, -2.0], vec![vec![1.5, 0.2], vec![0.2, 0.8]]).unwrap();
        let id = kr_map_gaussian(&g, &g).unwrap();
        let p = vec![0.3, -1.0];
        let y = id.eval(&p);
        assert_abs_diff_eq!(y[0], p[0], epsilon = 1e-12);
        assert_abs_diff_eq!(y[1], p[1], epsilon = 1e-12);

        let a = GaussianMeasure::new(vec![0.0], vec![vec![1.0]]).unwrap();
        let b = GaussianMeasure::new(vec![3.0], vec![vec![4.0]]).unwrap();
        let t = kr_map_gaussian(&a, &b).unwrap();
        assert_abs_diff_eq!(t.matrix()[0][0], 2.0);
        assert_abs_diff_eq!(t.offset()[0], 3.0);
    }

    #[test]
    fn brenier_weighted_at_eps_one_is_symmetric_and_pushes_forward() {
        let (src, tgt) = gaussian_pair_2d();
        let cost = WeightedCost::new(1.0, 2).unwrap();
        let map = brenier_gaussian_weighted(&src, &tgt, &cost).unwrap();
        let m = map.matrix();
        assert_abs_diff_eq!(m[0][1], m[1][0], epsilon = 1e-10);
        let l = map.linear_matrix();
        let push = &l * src.covariance_matrix() * l.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(push[(i, j)], tgt.covariance_matrix()[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn brenier_weighted_identity_when_covariances_match() {
        let g = GaussianMeasure::new(vec![0.5, -0.5], vec![vec![1.2, 0.3], vec![0.3, 0.9]]).unwrap();
        for &eps in &[1.0, 0.1, 1e-3] {
            let cost = WeightedCost::new(eps, 2).unwrap();
            let map = brenier_gaussian_weighted(&g, &g, &cost).unwrap();
            let p = vec![1.0, 2.0];
            let y = map.eval(&p);
            assert_abs_diff_eq!(y[0], p[0], epsilon = 1e-9);
            assert_abs_diff_eq!(y[1], p[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn brenier_weighted_converges_to_kr_cholesky() {
        let (src, tgt) = gaussian_pair_2d();
        let kr = kr_map_gaussian(&src, &tgt).unwrap();
        let mut uppers = Vec::new();
        for &eps in &[1.0, 0.1, 0.01, 1e-4] {
            let cost = WeightedCost::new(eps, 2).unwrap();
            let map = brenier_gaussian_weighted(&src, &tgt, &cost).unwrap();
            uppers.push(map.matrix()[0][1].abs());
            if eps == 1e-4 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert_abs_diff_eq!(map.matrix()[i][j], kr.matrix()[i][j], epsilon = 5e-2);
                    }
                }
            }
        }
        for w in uppers.windows(2) {
            assert!(w[1] < w[0], "strictly-upper entry must decrease: {uppers:?}");
        }
    }

    #[test]
    fn kr_plan_identity_is_diagonal() {
        let m = DiscreteMeasure::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        let plan = kr_plan_discrete(&m, &m).unwrap();
        for &(i, j, f) in plan.entries() {
            assert_eq!(i, j);
            assert!(f > 0.0);
        }
    }

    #[test]
    fn kr_plan_1d_matches_monotone_matching() {
        let mu = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let nu = DiscreteMeasure::new(vec![vec![2.0], vec![3.0]], vec![0.5, 0.5]).unwrap();
        let plan = kr_plan_discrete(&mu, &nu).unwrap();
        assert_eq!(plan.entries(), &[(0, 0, 0.5), (1, 1, 0.5)]);
    }

    #[test]
    fn kr_plan_2d_hand_recursion() {
        let mu = DiscreteMeasure::new(
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![0.25; 4],
        )
        .unwrap();
        let nu = DiscreteMeasure::new(
            vec![vec![2.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0], vec![3.0, 1.0]],
            vec![0.25; 4],
        )
        .unwrap();
        let plan = kr_plan_discrete(&mu, &nu).unwrap();
        // Coordinate 1: 0 -> 2 and 1 -> 3; coordinate 2 identity within slices.
        let expected = [(0usize, 0usize), (1, 1), (2, 2), (3, 3)];
        let entries = plan.entries();
        assert_eq!(entries.len(), 4);
        for (&(i, j, f), &(ei, ej)) in entries.iter().zip(&expected) {
            assert_eq!((i, j), (ei, ej));
            assert_abs_diff_eq!(f, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn kr_plan_splits_atoms_with_unequal_weights() {
        let mu = DiscreteMeasure::new(vec![vec![0.0]], vec![1.0]).unwrap();
        let nu = DiscreteMeasure::new(vec![vec![1.0], vec![2.0]], vec![0.25, 0.75]).unwrap();
        let plan = kr_plan_discrete(&mu, &nu).unwrap();
        assert_eq!(plan.entries().len(), 2);
        assert_abs_diff_eq!(plan.entries()[0].2, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(plan.entries()[1].2, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn grid_map_identity_and_independence() {
        let g = GridSpec::uniform(&[0.0, 0.0], &[1.0, 1.0], &[17, 17]).unwrap();
        let f = build_grid_density(g.clone(), vec![1.0; 17 * 17]).unwrap();
        let map = kr_map_grid(&f, &f).unwrap();
        for &x in &[0.1, 0.5, 0.9] {
            let y = map.eval(&[x, x]);
            assert_abs_diff_eq!(y[0], x, epsilon = 1e-10);
            assert_abs_diff_eq!(y[1], x, epsilon = 1e-10);
        }

        // Independent product density: each component depends only on its own
        // coordinate.
        let mut raw = Vec::new();
        for i in 0..17 {
            let x = i as f64 / 16.0;
            for j in 0..17 {
                let y = j as f64 / 16.0;
                raw.push((1.0 + x) * (1.0 + 0.5 * y));
            }
        }
        let fprod = build_grid_density(g.clone(), raw).unwrap();
        let uniform = build_grid_density(g, vec![1.0; 17 * 17]).unwrap();
        let t = kr_map_grid(&fprod, &uniform).unwrap();
        let a = t.eval(&[0.4, 0.3]);
        let b = t.eval(&[0.4, 0.9]);
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-13);
        let c = t.eval(&[0.1, 0.3]);
        assert_abs_diff_eq!(a[1], c[1], epsilon = 1e-10);
    }

    #[test]
    fn grid_map_matches_gaussian_cholesky() {
        let (src, tgt) = gaussian_pair_2d();
        let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[64, 64]).unwrap();
        let tg = GridSpec::uniform(&[-7.5, -7.5], &[7.5, 7.5], &[64, 64]).unwrap();
        let f = discretize(&src, &sg).unwrap();
        let g = discretize(&tgt, &tg).unwrap();
        let map = kr_map_grid(&f, &g).unwrap();
        let affine = kr_map_gaussian(&src, &tgt).unwrap();
        let mut worst = 0.0_f64;
        for &x1 in &[-1.5, -0.5, 0.0, 0.5, 1.5] {
            for &x2 in &[-1.5, -0.5, 0.0, 0.5, 1.5] {
                let got = map.eval(&[x1, x2]);
                let want = affine.eval(&[x1, x2]);
                worst = worst.max((got[0] - want[0]).abs()).max((got[1] - want[1]).abs());
            }
        }
        assert!(worst <= 3e-2, "sup error over central nodes: {worst}");
    }

    #[test]
    fn jacobian_identity_exact_for_identity_map() {
        let g = GridSpec::uniform(&[0.0, 0.0], &[1.0, 1.0], &[21, 21]).unwrap();
        let f = build_grid_density(g, vec![1.0; 441]).unwrap();
        let map = kr_map_grid(&f, &f).unwrap();
        let v = kr_jacobian_identity_check(&map, &f, &f).unwrap();
        assert!(v <= 1e-10, "violation {v}");
    }

    #[test]
    fn jacobian_identity_uniform_stretch() {
        let g0 = GridSpec::uniform(&[0.0], &[1.0], &[41]).unwrap();
        let g1 = GridSpec::uniform(&[0.0], &[2.0], &[41]).unwrap();
        let f = build_grid_density(g0, vec![1.0; 41]).unwrap();
        let h = build_grid_density(g1, vec![1.0; 41]).unwrap();
        let map = kr_map_grid(&f, &h).unwrap();
        let v = kr_jacobian_identity_check(&map, &f, &h).unwrap();
        assert!(v <= 1e-9, "violation {v}");
    }

    #[test]
    fn jacobian_identity_decreases_under_refinement() {
        let (src, tgt) = gaussian_pair_2d();
        let mut violations = Vec::new();
        for &n in &[16usize, 32, 64] {
            let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[n, n]).unwrap();
            let tg = GridSpec::uniform(&[-7.5, -7.5], &[7.5, 7.5], &[n, n]).unwrap();
            let f = discretize(&src, &sg).unwrap();
            let g = discretize(&tgt, &tg).unwrap();
            let map = kr_map_grid(&f, &g).unwrap();
            violations.push(kr_jacobian_identity_check(&map, &f, &g).unwrap());
        }
        assert!(violations[2] <= 5e-2, "violation at 64^2: {}", violations[2]);
        assert!(violations[2] < violations[0], "refinement must reduce violation: {violations:?}");
    }

    #[test]
    fn plan_and_grid_map_consistent_on_gaussian_fixture() {
        let (src, tgt) = gaussian_pair_2d();
        let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[16, 16]).unwrap();
        let tg = GridSpec::uniform(&[-7.5, -7.5], &[7.5, 7.5], &[16, 16]).unwrap();
        let f = discretize(&src, &sg).unwrap();
        let g = discretize(&tgt, &tg).unwrap();
        let plan = kr_plan_discrete(&f.atomize(), &g.atomize()).unwrap();
        let bary = barycentric_map(&plan).unwrap();
        let map = kr_map_grid(&f, &g).unwrap();
        let hx: f64 = 10.0 / 15.0;
        let hy: f64 = 15.0 / 15.0;
        let spacing = hx.max(hy);
        let mut worst = 0.0_f64;
        for (p, img) in bary.points().iter().zip(bary.images()) {
            // Compare on the bulk; extreme tail atoms carry ~1e-7 mass.
            if p[0].abs() <= 3.0 && p[1].abs() <= 3.0 {
                let want = map.eval(p);
                worst = worst
                    .max((img[0] - want[0]).abs())
                    .max((img[1] - want[1]).abs());
            }
        }
        assert!(worst <= spacing, "plan/map disagreement {worst} vs spacing {spacing}");
    }

    #[test]
    fn grid_map_pushes_marginal_cdfs_onto_the_target() {
        let (src, tgt) = gaussian_pair_2d();
        let n = 24usize;
        let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[n, n]).unwrap();
        let half = 5.0 * 2.0_f64.sqrt();
        let tg = GridSpec::uniform(&[-half, -half], &[half, half], &[n, n]).unwrap();
        let f = discretize(&src, &sg).unwrap();
        let g = discretize(&tgt, &tg).unwrap();
        let map = kr_map_grid(&f, &g).unwrap();

        let atoms = f.atomize();
        let pushed: Vec<Vec<f64>> = atoms.points().iter().map(|p| map.eval(p)).collect();
        let target_cdf = crate::measures::cdf_1d(&g.marginal(&[0]).unwrap()).unwrap();
        // Empirical coordinate-1 CDF of the transported atoms against the
        // target's marginal CDF, within 2 / node count.
        let mut order: Vec<usize> = (0..pushed.len()).collect();
        order.sort_by(|&a, &b| pushed[a][0].partial_cmp(&pushed[b][0]).unwrap());
        // Atoms sharing a source column share a pushed coordinate: group them
        // and compare the step CDF at each jump's midpoint.
        let mut cum = 0.0;
        let mut worst = 0.0_f64;
        let mut i = 0;
        while i < order.len() {
            let pos = pushed[order[i]][0];
            let mut group_mass = 0.0;
            while i < order.len() && pushed[order[i]][0] == pos {
                group_mass += atoms.weights()[order[i]];
                i += 1;
            }
            let mid = cum + 0.5 * group_mass;
            cum += group_mass;
            worst = worst.max((mid - target_cdf.evaluate(pos)).abs());
        }
        assert!(worst <= 2.0 / n as f64, "coordinate-1 CDF defect {worst}");
    }

    #[test]
    fn triangularity_is_exact() {
        let (src, tgt) = gaussian_pair_2d();
        let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[24, 24]).unwrap();
        let tg = GridSpec::uniform(&[-7.5, -7.5], &[7.5, 7.5], &[24, 24]).unwrap();
        let f = discretize(&src, &sg).unwrap();
        let g = discretize(&tgt, &tg).unwrap();
        let map = kr_map_grid(&f, &g).unwrap();
        let a = map.eval(&[0.3, -1.0]);
        let b = map.eval(&[0.3, 2.0]);
        assert_eq!(a[0], b[0], "component 1 must ignore coordinate 2");
    }

    #[test]
    fn monotone_in_own_coordinate() {
        let (src, tgt) = gaussian_pair_2d();
        let sg = GridSpec::uniform(&[-5.0, -5.0], &[5.0, 5.0], &[24, 24]).unwrap();
        let tg = GridSpec::uniform(&[-7.5, -7.5], &[7.5, 7.5], &[24, 24]).unwrap();
        let f = discretize(&src, &sg).unwrap();
        let g = discretize(&tgt, &tg).unwrap();
        let map = kr_map_grid(&f, &g).unwrap();
        for comp in map.components() {
            for table in comp.tables() {
                assert!(table.is_nondecreasing());
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, NULL_SLICE_MASS};
use crate::error::{Error, Result};

/// Tensor-product grid: one strictly increasing node array per axis.
///
/// Flat node indices are row-major with the last axis fastest, matching the
/// serialized `values` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
}

impl TryFrom<Vec<Vec<f64>>> for GridSpec {
    type Error = Error;
    fn try_from(axes: Vec<Vec<f64>>) -> Result<Self> {
        GridSpec::new(axes)
    }
}

impl From<GridSpec> for Vec<Vec<f64>> {
    fn from(g: GridSpec) -> Self {
        g.axes
    }
}

impl GridSpec {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidGridAxis { axis: 0, reason: "grid needs at least one axis" });
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::InvalidGridAxis { axis: k, reason: "axis needs at least 2 nodes" });
            }
            if axis.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidGridAxis { axis: k, reason: "non-finite node" });
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidGridAxis { axis: k, reason: "nodes must be strictly increasing" });
            }
        }
        Ok(GridSpec { axes })
    }

    /// Uniformly spaced grid with `counts[k]` nodes on `[mins[k], maxs[k]]`.
    pub fn uniform(mins: &[f64], maxs: &[f64], counts: &[usize]) -> Result<Self> {
        if mins.len() != maxs.len() || mins.len() != counts.len() {
            return Err(Error::DimensionMismatch { expected: mins.len(), got: maxs.len().max(counts.len()) });
        }
        let axes = mins
            .iter()
            .zip(maxs)
            .zip(counts)
            .map(|((&lo, &hi), &n)| {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64).collect()
            })
            .collect();
        GridSpec::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1usize; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        strides
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let strides = self.strides();
        multi.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let strides = self.strides();
        strides
            .iter()
            .map(|&s| {
                let i = flat / s;
                flat %= s;
                i
            })
            .collect()
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.axes[k][i])
            .collect()
    }

    /// Trapezoid quadrature weight of each node along axis `k`.
    pub fn axis_weights(&self, k: usize) -> Vec<f64> {
        let xs = &self.axes[k];
        let n = xs.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { xs[i] - xs[i - 1] } else { 0.0 };
                let right = if i + 1 < n { xs[i + 1] - xs[i] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect()
    }

    /// Full tensor trapezoid weight per node (product over axes).
    pub fn node_weights(&self) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> = (0..self.dim()).map(|k| self.axis_weights(k)).collect();
        let mut out = vec![1.0; self.num_nodes()];
        let strides = self.strides();
        let shape = self.shape();
        for (flat, w) in out.iter_mut().enumerate() {
            for k in 0..self.dim() {
                let idx = (flat / strides[k]) % shape[k];
                *w *= per_axis[k][idx];
            }
        }
        out
    }

    /// Whether `point` lies in the grid's bounding box.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point.iter().enumerate().all(|(k, &x)| {
                let axis = &self.axes[k];
                x >= axis[0] && x <= *axis.last().unwrap()
            })
    }
}

/// Locate `x` on `axis`: bracketing left index and interpolation fraction.
pub(crate) fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    if x <= axis[0] {
        return (0, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let k = axis.partition_point(|&a| a <= x) - 1;
    let k = k.min(n - 2);
    (k, (x - axis[k]) / (axis[k + 1] - axis[k]))
}

/// Probability density tabulated on a [`GridSpec`], trapezoid-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDensityRaw")]
pub struct GridDensity {
    grid: GridSpec,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct GridDensityRaw {
    grid: GridSpec,
    values: Vec<f64>,
}

impl TryFrom<GridDensityRaw> for GridDensity {
    type Error = Error;
    fn try_from(raw: GridDensityRaw) -> Result<Self> {
        GridDensity::new(raw.grid, raw.values)
    }
}

/// Validate raw nonnegative values and normalize them into a [`GridDensity`].
pub fn build_grid_density(grid: GridSpec, raw: Vec<f64>) -> Result<GridDensity> {
    GridDensity::new(grid, raw)
}

impl GridDensity {
    pub fn new(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} nodes but {} values supplied",
                grid.num_nodes(),
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NegativeDensity { index: i, value: v });
            }
        }
        let weights = grid.node_weights();
        let mass: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        for v in &mut values {
            *v /= mass;
        }
        Ok(GridDensity { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Trapezoid integral; 1 up to rounding by construction.
    pub fn integral(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.node_weights())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Integrate out all axes not in `kept_axes` (original axis order retained).
    pub fn marginal(&self, kept_axes: &[usize]) -> Result<GridDensity> {
        let d = self.dim();
        let mut kept: Vec<usize> = kept_axes.to_vec();
        kept.sort_unstable();
        kept.dedup();
        if kept.is_empty() {
            return Err(Error::NoAxesKept);
        }
        if *kept.last().unwrap() >= d {
            return Err(Error::DimensionMismatch { expected: d, got: *kept.last().unwrap() + 1 });
        }
        if kept.len() == d {
            return Ok(self.clone());
        }

        let dropped: Vec<usize> = (0..d).filter(|k| !kept.contains(k)).collect();
        let dropped_weights: Vec<Vec<f64>> = dropped.iter().map(|&k| self.grid.axis_weights(k)).collect();
        let out_grid = GridSpec::new(kept.iter().map(|&k| self.grid.axis(k).to_vec()).collect())?;
        let mut out = vec![0.0; out_grid.num_nodes()];

        let strides = self.grid.strides();
        let shape = self.grid.shape();
        let out_strides = out_grid.strides();
        for flat in 0..self.grid.num_nodes() {
            let mut w = 1.0;
            for (pos, &k) in dropped.iter().enumerate() {
                let idx = (flat / strides[k]) % shape[k];
                w *= dropped_weights[pos][idx];
            }
            let mut out_flat = 0;
            for (pos, &k) in kept.iter().enumerate() {
                out_flat += ((flat / strides[k]) % shape[k]) * out_strides[pos];
            }
            out[out_flat] += self.values[flat] * w;
        }
        GridDensity::new(out_grid, out)
    }

    /// Conditional density of axis `axis` given the first `axis` coordinates.
    ///
    /// Later axes are integrated out first; the conditioning point may fall
    /// off-grid, in which case the joint is interpolated multilinearly before
    /// normalizing.
    pub fn conditional_slice(&self, axis: usize, predecessors: &[f64]) -> Result<GridDensity> {
        let d = self.dim();
        if axis >= d {
            return Err(Error::DimensionMismatch { expected: d, got: axis + 1 });
        }
        if predecessors.len() != axis {
            return Err(Error::DimensionMismatch { expected: axis, got: predecessors.len() });
        }
        for (k, &x) in predecessors.iter().enumerate() {
            let ax = self.grid.axis(k);
            if x < ax[0] || x > *ax.last().unwrap() {
                return Err(Error::PointOutsideGrid { axis: k, value: x });
            }
        }

        let prefix = self.marginal(&(0..=axis).collect::<Vec<_>>())?;
        let n_axis = prefix.grid.axis(axis).len();
        let mut slice = vec![0.0; n_axis];

        // Multilinear interpolation over predecessor axes: accumulate the
        // 2^axis bracketing corners.
        let brackets: Vec<(usize, f64)> = predecessors
            .iter()
            .enumerate()
            .map(|(k, &x)| bracket(prefix.grid.axis(k), x))
            .collect();
        let strides = prefix.grid.strides();
        let corners = 1usize << axis;
        for corner in 0..corners {
            let mut w = 1.0;
            let mut base = 0usize;
            for (k, &(i0, frac)) in brackets.iter().enumerate() {
                let hi = (corner >> k) & 1 == 1;
                w *= if hi { frac } else { 1.0 - frac };
                base += (i0 + hi as usize) * strides[k];
            }
            if w == 0.0 {
                continue;
            }
            for (j, s) in slice.iter_mut().enumerate() {
                *s += w * prefix.values[base + j * strides[axis]];
            }
        }

        for s in &mut slice {
            if *s < 0.0 {
                *s = 0.0;
            }
        }
        let axis_nodes = prefix.grid.axis(axis).to_vec();
        let out_grid = GridSpec::new(vec![axis_nodes])?;
        let mass: f64 = slice.iter().zip(out_grid.node_weights()).map(|(v, w)| v * w).sum();
        if mass < NULL_SLICE_MASS {
            return Err(Error::ConditioningOnNullSet { mass });
        }
        GridDensity::new(out_grid, slice)
    }

    /// Multilinear interpolation of the density at an arbitrary point.
    pub fn value_at(&self, point: &[f64]) -> Result<f64> {
        let d = self.dim();
        if point.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: point.len() });
        }
        let brackets: Vec<(usize, f64)> = point
            .iter()
            .enumerate()
            .map(|(k, &x)| bracket(self.grid.axis(k), x))
            .collect();
        let strides = self.grid.strides();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for (k, &(i0, frac)) in brackets.iter().enumerate() {
                let hi = (corner >> k) & 1 == 1;
                w *= if hi { frac } else { 1.0 - frac };
                flat += (i0 + hi as usize) * strides[k];
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        Ok(acc.max(0.0))
    }

    /// `∫ |x|² f(x) dx` by the trapezoid rule.
    pub fn second_moment(&self) -> f64 {
        let weights = self.grid.node_weights();
        (0..self.grid.num_nodes())
            .map(|flat| {
                let node = self.grid.node(flat);
                let r2: f64 = node.iter().map(|x| x * x).sum();
                self.values[flat] * weights[flat] * r2
            })
            .sum()
    }

    /// Assign each node its trapezoid cell mass, yielding atoms on the node
    /// set. Nodes whose mass falls below f64 resolution of the total (1e-16
    /// relative) are not representable in any downstream accounting and are
    /// dropped from the support.
    pub fn atomize(&self) -> DiscreteMeasure {
        let weights = self.grid.node_weights();
        let cell_masses: Vec<f64> = self
            .values
            .iter()
            .zip(&weights)
            .map(|(v, w)| v * w)
            .collect();
        let total_raw: f64 = cell_masses.iter().sum();
        let floor = 1e-16 * total_raw;
        let mut points = Vec::new();
        let mut masses = Vec::new();
        for (flat, &mass) in cell_masses.iter().enumerate() {
            if mass > floor {
                points.push(self.grid.node(flat));
                masses.push(mass);
            }
        }
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        DiscreteMeasure::new_unchecked(points, masses)
    }

    /// CSV rows `x1,...,xd,value`, one per node, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let d = self.dim();
        for k in 0..d {
            out.push_str(&format!("x{},", k + 1));
        }
        out.push_str("value\n");
        for flat in 0..self.grid.num_nodes() {
            for x in self.grid.node(flat) {
                out.push_str(&format!("{x},"));
            }
            out.push_str(&format!("{}\n", self.values[flat]));
        }
        out
    }

    /// Parse the `to_csv` format back; nodes must enumerate a full tensor
    /// grid row-major.
    pub fn from_csv(text: &str) -> Result<GridDensity> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::CsvParse {
                        line: lineno + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_>>()?;
            if fields.len() < 2 {
                return Err(Error::CsvParse { line: lineno + 1, message: "need at least one coordinate and a value".into() });
            }
            rows.push(fields);
        }
        if rows.is_empty() {
            return Err(Error::CsvParse { line: 0, message: "no data rows".into() });
        }
        let d = rows[0].len() - 1;
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); d];
        for row in &rows {
            if row.len() != d + 1 {
                return Err(Error::CsvParse { line: 0, message: "ragged rows".into() });
            }
            for k in 0..d {
                if !axes[k].contains(&row[k]) {
                    axes[k].push(row[k]);
                }
            }
        }
        for axis in &mut axes {
            axis.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        let grid = GridSpec::new(axes)?;
        if grid.num_nodes() != rows.len() {
            return Err(Error::CsvParse {
                line: 0,
                message: format!("{} rows do not fill a {} node tensor grid", rows.len(), grid.num_nodes()),
            });
        }
        let mut values = vec![f64::NAN; rows.len()];
        for row in &rows {
            let multi: Vec<usize> = (0..d)
                .map(|k| grid.axis(k).iter().position(|&a| a == row[k]).unwrap())
                .collect();
            values[grid.flat_index(&multi)] = row[d];
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::CsvParse { line: 0, message: "duplicate or missing grid nodes".into() });
        }
        GridDensity::new(grid, values)
    }
}

//! Dynamic (Benamou-Brenier) side of the toolkit, represented Lagrangianly:
//! particles travel straight lines `X_t(x) = (1 - t) x + t T(x)` with
//! constant velocity `T(x) - x`, so the velocity field along trajectories
//! needs no map inversion. The kinetic action under the weighted norm then
//! collapses to the static transport cost, time-t snapshots are themselves
//! optimal transports from the source, and the spatial velocity Jacobian
//! becomes triangular exactly when the inducing map does.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::cost::WeightedCost;
use crate::error::{Error, Result};
use crate::kr::{AffineMap, TriangularMap};
use crate::measures::{DiscreteMeasure, GridSpec};
use crate::ot_exact::{solve_exact, MapTable};

/// Weighted particles on straight-line paths between a source and its image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    times: Vec<f64>,
    source: DiscreteMeasure,
    images: Vec<Vec<f64>>,
    /// positions[k][p] = (1 - t_k) x_p + t_k T(x_p), stored per time sample.
    positions: Vec<Vec<Vec<f64>>>,
    velocities: Vec<Vec<f64>>,
}

/// Straight-line displacement interpolation of a map table.
pub fn displacement_interpolate(
    map: &MapTable,
    source: &DiscreteMeasure,
    times: &[f64],
) -> Result<ParticleEnsemble> {
    if map.points() != source.points() {
        return Err(Error::SupportMismatch);
    }
    if times.is_empty() {
        return Err(Error::InvalidTimeGrid("at least one time sample required"));
    }
    for &t in times {
        if !(0.0..=1.0).contains(&t) || t.is_nan() {
            return Err(Error::TimeOutOfRange(t));
        }
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidTimeGrid("times must be strictly increasing"));
    }
    let positions = times
        .iter()
        .map(|&t| {
            source
                .points()
                .iter()
                .zip(map.images())
                .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect())
                .collect()
        })
        .collect();
    let velocities = source
        .points()
        .iter()
        .zip(map.images())
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| b - a).collect())
        .collect();
    Ok(ParticleEnsemble {
        times: times.to_vec(),
        source: source.clone(),
        images: map.images().to_vec(),
        positions,
        velocities,
    })
}

impl ParticleEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn positions_at(&self, time_index: usize) -> &[Vec<f64>] {
        &self.positions[time_index]
    }

    /// Positions from the straight-line law at an arbitrary t in [0, 1].
    pub fn interpolate_positions(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        if !(0.0..=1.0).contains(&t) || t.is_nan() {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(self
            .source
            .points()
            .iter()
            .zip(&self.images)
            .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (1.0 - t) * a + t * b).collect())
            .collect())
    }

    /// CSV rows `time,particle,x...,v...` for external plotting.
    pub fn to_csv(&self) -> String {
        let d = self.source.dim();
        let mut out = String::from("time,particle");
        for k in 0..d {
            out.push_str(&format!(",x{}", k + 1));
        }
        for k in 0..d {
            out.push_str(&format!(",v{}", k + 1));
        }
        out.push('\n');
        for (k, &t) in self.times.iter().enumerate() {
            for p in 0..self.source.len() {
                out.push_str(&format!("{t},{p}"));
                for x in &self.positions[k][p] {
                    out.push_str(&format!(",{x}"));
                }
                for v in &self.velocities[p] {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Velocity of one particle: `T(x) - x`, independent of t along straight
/// lines.
pub fn particle_velocity(ensemble: &ParticleEnsemble, particle: usize, _t: f64) -> Result<Vec<f64>> {
    ensemble
        .velocities
        .get(particle)
        .cloned()
        .ok_or(Error::ShapeMismatch(format!("particle {particle} out of range")))
}

/// Kinetic action `int_0^1 sum_p w_p |v_p|_eps^2 dt`; constant speeds make it
/// exactly the static transport cost of the inducing map.
pub fn action(ensemble: &ParticleEnsemble, cost: &WeightedCost) -> Result<f64> {
    let mut acc = 0.0;
    for ((x, y), w) in ensemble
        .source
        .points()
        .iter()
        .zip(&ensemble.images)
        .zip(ensemble.source.weights())
    {
        acc += w * cost.eval(x, y)?;
    }
    Ok(acc)
}

/// Transport-cost gap of the time-t snapshot: cost of the map `x -> X_t(x)`
/// minus the exact optimal value onto the time-t particle positions.
/// Zero (to solver precision) whenever the inducing map is c_eps-optimal.
pub fn xt_optimality_check(
    source: &DiscreteMeasure,
    ensemble: &ParticleEnsemble,
    t: f64,
    cost: &WeightedCost,
) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::TimeOutOfRange(t));
    }
    if source.points() != ensemble.source.points() {
        return Err(Error::SupportMismatch);
    }
    let positions = ensemble.interpolate_positions(t)?;
    let mut map_cost = 0.0;
    for ((x, p), w) in source.points().iter().zip(&positions).zip(source.weights()) {
        map_cost += w * cost.eval(x, p)?;
    }
    let rho_t = DiscreteMeasure::from_points_merging(positions, source.weights().to_vec())?;
    let matrix = cost.matrix(source.points(), rho_t.points())?;
    let hard = solve_exact(source, &rho_t, &matrix)?;
    Ok((map_cost - hard.value).max(0.0))
}

/// Map whose induced velocity field is probed for triangularity.
pub enum VelocityField<'a> {
    Affine(&'a AffineMap),
    Triangular(&'a TriangularMap),
}

/// Frobenius norm of the strictly upper entries of the spatial velocity
/// Jacobian at time t, maximized over evaluation points.
///
/// Along `X_t = (1 - t) id + t T`, the chain rule gives
/// `Dv = (J_T - I)(t J_T + (1 - t) I)^{-1}`: exact matrix algebra for affine
/// maps, symmetric finite differences of `J_T` (probe radius in source
/// space) otherwise. Zero exactly for lower-triangular maps, since
/// triangular matrices are closed under products and inverses.
pub fn velocity_jacobian_defect(
    field: &VelocityField,
    evaluation_points: &[Vec<f64>],
    probe_radius: f64,
    t: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    match field {
        VelocityField::Affine(map) => {
            let d = map.dim();
            let m = map.linear_matrix();
            let interp = t * &m + (1.0 - t) * DMatrix::identity(d, d);
            let inv = interp.try_inverse().ok_or(Error::InterpolantNotInvertible(t))?;
            let dv = (m - DMatrix::identity(d, d)) * inv;
            Ok(strict_upper_frobenius(&dv))
        }
        VelocityField::Triangular(map) => {
            if !(probe_radius > 0.0) {
                return Err(Error::InvalidSolverParameter("probe radius must be positive"));
            }
            let d = map.dim();
            let mut worst = 0.0_f64;
            for point in evaluation_points {
                let mut jac = DMatrix::zeros(d, d);
                for k in 0..d {
                    let mut plus = point.clone();
                    let mut minus = point.clone();
                    plus[k] += probe_radius;
                    minus[k] -= probe_radius;
                    let tp = map.eval(&plus);
                    let tm = map.eval(&minus);
                    for i in 0..d {
                        jac[(i, k)] = (tp[i] - tm[i]) / (2.0 * probe_radius);
                    }
                }
                let interp = t * &jac + (1.0 - t) * DMatrix::identity(d, d);
                let inv = interp.try_inverse().ok_or(Error::InterpolantNotInvertible(t))?;
                let dv = (jac - DMatrix::identity(d, d)) * inv;
                worst = worst.max(strict_upper_frobenius(&dv));
            }
            Ok(worst)
        }
    }
}

fn strict_upper_frobenius(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            acc += m[(i, j)] * m[(i, j)];
        }
    }
    acc.sqrt()
}

/// Grid L1 norm of `d rho / dt + div(v rho)` with particle mass and momentum
/// deposited by linear splatting, time derivative by central differences, and
/// divergence by centered spatial differences at interior nodes. Averaged
/// over the interior time samples of the window.
pub fn continuity_residual(
    ensemble: &ParticleEnsemble,
    grid: &GridSpec,
    window: (f64, f64),
) -> Result<f64> {
    let d = grid.dim();
    if d > 2 || d != ensemble.source.dim() {
        return Err(Error::DimensionMismatch { expected: ensemble.source.dim(), got: d });
    }
    let selected: Vec<usize> = ensemble
        .times
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t >= window.0 && t <= window.1)
        .map(|(k, _)| k)
        .collect();
    if selected.len() < 3 {
        return Err(Error::TooFewTimeSamples(selected.len()));
    }

    let node_weights = grid.node_weights();
    let splat = |k: usize| -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut density = vec![0.0_f64; grid.num_nodes()];
        let mut momentum = vec![vec![0.0_f64; grid.num_nodes()]; d];
        let strides = grid.strides();
        for (p, pos) in ensemble.positions[k].iter().enumerate() {
            let w = ensemble.source.weights()[p];
            let brackets: Vec<(usize, f64)> = (0..d)
                .map(|ax| crate::measures::grid::bracket(grid.axis(ax), pos[ax]))
                .collect();
            for corner in 0..(1usize << d) {
                let mut cw = 1.0;
                let mut flat = 0usize;
                for (ax, &(i0, frac)) in brackets.iter().enumerate() {
                    let hi = (corner >> ax) & 1 == 1;
                    cw *= if hi { frac } else { 1.0 - frac };
                    flat += (i0 + hi as usize) * strides[ax];
                }
                if cw == 0.0 {
                    continue;
                }
                density[flat] += w * cw / node_weights[flat];
                for ax in 0..d {
                    momentum[ax][flat] += w * cw * ensemble.velocities[p][ax] / node_weights[flat];
                }
            }
        }
        (density, momentum)
    };

    let fields: Vec<(Vec<f64>, Vec<Vec<f64>>)> = selected.iter().map(|&k| splat(k)).collect();
    let shape = grid.shape();
    let strides = grid.strides();
    let mut acc = 0.0;
    let mut count = 0usize;
    for mid in 1..selected.len() - 1 {
        let dt = ensemble.times[selected[mid + 1]] - ensemble.times[selected[mid - 1]];
        let rho_next = &fields[mid + 1].0;
        let rho_prev = &fields[mid - 1].0;
        let momentum = &fields[mid].1;
        let mut norm = 0.0;
        for flat in 0..grid.num_nodes() {
            let multi = grid.multi_index(flat);
            // Interior nodes only; one-sided boundary stencils would pollute
            // the refinement study.
            if multi.iter().zip(&shape).any(|(&i, &nk)| i == 0 || i + 1 == nk) {
                continue;
            }
            let mut div = 0.0;
            for ax in 0..d {
                let axis = grid.axis(ax);
                let i = multi[ax];
                let up = flat + strides[ax];
                let down = flat - strides[ax];
                div += (momentum[ax][up] - momentum[ax][down]) / (axis[i + 1] - axis[i - 1]);
            }
            let drho_dt = (rho_next[flat] - rho_prev[flat]) / dt;
            norm += (drho_dt + div).abs() * node_weights[flat];
        }
        acc += norm;
        count += 1;
    }
    Ok(acc / count as f64)
}

//! Exact hard-constrained Kantorovich solves on discrete measures, plus map
//! and diagnostic extraction from optimal plans.

mod simplex;

use serde::{Deserialize, Serialize};

use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Exact solving is capped here; larger instances belong to the entropic path.
pub const EXACT_SIZE_CAP: usize = 4096;

/// Joint mass over (source atoms x target atoms), stored as sorted triplets.
///
/// Carries its marginals' supports so plans remain self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<(usize, usize, f64)>,
}

impl Coupling {
    /// Validate triplets against the hard source constraint: entries
    /// nonnegative, row sums equal to the source weights within 1e-10, total
    /// mass 1 within 1e-10.
    pub fn new(
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        entries.retain(|&(_, _, f)| f != 0.0);
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, f) in entries {
            if i >= source.len() || j >= target.len() {
                return Err(Error::ShapeMismatch(format!("entry ({i}, {j}) outside plan shape")));
            }
            if !(f >= 0.0) {
                return Err(Error::InvalidMeasure("coupling entries must be nonnegative"));
            }
            if let Some(last) = merged.last_mut() {
                if last.0 == i && last.1 == j {
                    last.2 += f;
                    continue;
                }
            }
            merged.push((i, j, f));
        }
        let coupling = Coupling { source, target, entries: merged };
        let rows = coupling.row_sums();
        for (r, w) in rows.iter().zip(coupling.source.weights()) {
            if (r - w).abs() > 1e-10 {
                return Err(Error::InvalidMeasure("coupling row sums must match the source weights"));
            }
        }
        if (coupling.total_mass() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidMeasure("coupling total mass must be 1"));
        }
        Ok(coupling)
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.source.len(), self.target.len())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.source.len()];
        for &(i, _, f) in &self.entries {
            rows[i] += f;
        }
        rows
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut cols = vec![0.0; self.target.len()];
        for &(_, j, f) in &self.entries {
            cols[j] += f;
        }
        cols
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// `<C, gamma>`.
    pub fn cost(&self, cost: &CostMatrix) -> Result<f64> {
        if cost.rows() != self.source.len() || cost.cols() != self.target.len() {
            return Err(Error::ShapeMismatch(format!(
                "cost {}x{} vs plan {}x{}",
                cost.rows(),
                cost.cols(),
                self.source.len(),
                self.target.len()
            )));
        }
        Ok(self.entries.iter().map(|&(i, j, f)| f * cost.at(i, j)).sum())
    }

    /// Sparse-triplet CSV `row,col,mass`.
    pub fn to_triplet_csv(&self) -> String {
        let mut out = String::from("row,col,mass\n");
        for &(i, j, f) in &self.entries {
            out.push_str(&format!("{i},{j},{f}\n"));
        }
        out
    }
}

/// One image point per source atom: the discrete transport map table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTable {
    points: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
}

impl MapTable {
    pub fn new(points: Vec<Vec<f64>>, images: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() != images.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} images",
                points.len(),
                images.len()
            )));
        }
        Ok(MapTable { points, images })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    /// Apply a pointwise function to the same source atoms.
    pub fn from_fn(points: &[Vec<f64>], mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        MapTable {
            points: points.to_vec(),
            images: points.iter().map(|p| f(p)).collect(),
        }
    }
}

/// Exact solve output: optimal plan, value, and the dual certificate.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub plan: Coupling,
    pub value: f64,
    pub source_potential: Vec<f64>,
    pub target_potential: Vec<f64>,
}

impl ExactSolution {
    /// Max violation of `u_i + v_j <= C_ij` plus the slackness defect on the
    /// plan support; <= 1e-8 certifies optimality.
    pub fn certificate_residual(&self, cost: &CostMatrix) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..cost.rows() {
            for j in 0..cost.cols() {
                let slack = self.source_potential[i] + self.target_potential[j] - cost.at(i, j);
                worst = worst.max(slack);
            }
        }
        for &(i, j, f) in self.plan.entries() {
            if f > 0.0 {
                let gap = cost.at(i, j) - self.source_potential[i] - self.target_potential[j];
                worst = worst.max(gap.abs());
            }
        }
        worst
    }
}

/// Solve the discrete hard-constrained Kantorovich problem exactly.
pub fn solve_exact(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<ExactSolution> {
    if cost.rows() != source.len() || cost.cols() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "cost {}x{} vs measures {}x{}",
            cost.rows(),
            cost.cols(),
            source.len(),
            target.len()
        )));
    }
    if source.len() > EXACT_SIZE_CAP || target.len() > EXACT_SIZE_CAP {
        return Err(Error::InstanceTooLarge {
            rows: source.len(),
            cols: target.len(),
            cap: EXACT_SIZE_CAP,
        });
    }
    let out = simplex::solve(source.weights(), target.weights(), cost)?;
    let plan = Coupling::new(source.clone(), target.clone(), out.flows)?;
    Ok(ExactSolution {
        plan,
        value: out.value,
        source_potential: out.row_potential,
        target_potential: out.col_potential,
    })
}

/// Barycentric projection `T(x_i) = sum_j gamma_ij y_j / mu_i`.
pub fn barycentric_map(plan: &Coupling) -> Result<MapTable> {
    let n = plan.source().len();
    let d = plan.target().dim();
    let rows = plan.row_sums();
    if let Some(i) = rows.iter().position(|&r| r <= 0.0) {
        return Err(Error::UndefinedBarycenter(i));
    }
    let mut images = vec![vec![0.0; d]; n];
    for &(i, j, f) in plan.entries() {
        for (k, img) in images[i].iter_mut().enumerate() {
            *img += f * plan.target().point(j)[k];
        }
    }
    for (img, r) in images.iter_mut().zip(&rows) {
        for x in img.iter_mut() {
            *x /= r;
        }
    }
    MapTable::new(plan.source().points().to_vec(), images)
}

/// Row and column sums as measures on the plan's supports.
pub fn plan_marginals(plan: &Coupling) -> (DiscreteMeasure, DiscreteMeasure) {
    let first = DiscreteMeasure::new_unchecked(plan.source().points().to_vec(), plan.row_sums());
    let second = DiscreteMeasure::new_unchecked(plan.target().points().to_vec(), plan.col_sums());
    (first, second)
}

/// `<C, gamma>`; see [`Coupling::cost`].
pub fn plan_cost(plan: &Coupling, cost: &CostMatrix) -> Result<f64> {
    plan.cost(cost)
}

/// `L^2(mu)` distance between two map tables over the same source atoms.
pub fn map_distance_l2(a: &MapTable, b: &MapTable, source: &DiscreteMeasure) -> Result<f64> {
    if a.len() != b.len() || a.len() != source.len() {
        return Err(Error::SupportMismatch);
    }
    if a.points() != source.points() || b.points() != source.points() {
        return Err(Error::SupportMismatch);
    }
    let mut acc = 0.0;
    for ((ia, ib), w) in a.images().iter().zip(b.images()).zip(source.weights()) {
        let d2: f64 = ia.iter().zip(ib).map(|(x, y)| (x - y) * (x - y)).sum();
        acc += w * d2;
    }
    Ok(acc.sqrt())
}

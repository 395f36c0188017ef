//! Convergence experiments at desk scale: epsilon sweeps toward the
//! triangular limit, lambda sweeps toward the hard constraint, the
//! commutative diagram of both limits, KL decay against the 2M/lambda bound,
//! and stability under mollified marginals.
//!
//! Sweep cells are independent read-only jobs; they run on the current rayon
//! pool and are assembled in request order, so reports are deterministic
//! regardless of pool size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::WeightedCost;
use crate::error::{Error, Result};
use crate::kr::kr_plan_discrete;
use crate::measures::{mollify, DiscreteMeasure, GridSpec};
use crate::ot_exact::{
    barycentric_map, map_distance_l2, plan_marginals, solve_exact, Coupling, MapTable,
};
use crate::ot_soft::{
    el_residual, exact_soft_oracle, semi_relaxed_sinkhorn, SinkhornOptions, SoftSolution,
};

/// How sweep cells solve the soft problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SoftSolverSpec {
    Oracle,
    Sinkhorn(SinkhornOptions),
}

/// One sweep cell: solver outputs and limit diagnostics at a single
/// (epsilon, lambda) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub lambda: Option<f64>,
    pub objective: f64,
    pub kl_term: f64,
    pub transport_term: f64,
    /// L2(mu) distance from the cell's barycentric map to its KR reference.
    pub map_to_kr_l2: f64,
    pub el_residual: Option<f64>,
    pub resolve_gap: Option<f64>,
    /// W2 agreement of coordinate-prefix projections against the KR plan,
    /// one entry per prefix length.
    pub marginal_agreement: Vec<f64>,
    /// Set when the perturbed target has drifted more than half a nat of KL
    /// from the nominal target (tiny-lambda regime).
    pub far_from_target: bool,
    pub solver_iterations: usize,
    pub polished: bool,
    /// Not serialized: wall-clock timing is inherently non-deterministic and
    /// reports must be bitwise reproducible. The CLI writes timings to a
    /// sidecar file.
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub instance: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn new(instance: impl Into<String>, cells: Vec<SweepCell>) -> Self {
        SweepReport { schema_version: 1, instance: instance.into(), cells }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One row per cell; prefix-agreement columns up to the widest cell.
    pub fn to_csv(&self) -> String {
        let max_prefix = self.cells.iter().map(|c| c.marginal_agreement.len()).max().unwrap_or(0);
        let mut out = String::from("epsilon,lambda,objective,kl_term,transport_term,map_to_kr_l2,el_residual,resolve_gap,solver_iterations,polished");
        for k in 1..=max_prefix {
            out.push_str(&format!(",marginal_agreement_{k}"));
        }
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}",
                c.epsilon,
                c.lambda.map_or(String::new(), |l| l.to_string()),
                c.objective,
                c.kl_term,
                c.transport_term,
                c.map_to_kr_l2,
                c.el_residual.map_or(String::new(), |v| v.to_string()),
                c.resolve_gap.map_or(String::new(), |v| v.to_string()),
                c.solver_iterations,
                c.polished,
            ));
            for k in 0..max_prefix {
                out.push(',');
                if let Some(v) = c.marginal_agreement.get(k) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-cell timings, separated from the deterministic report.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("epsilon,lambda,wall_clock_ms\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{}\n",
                c.epsilon,
                c.lambda.map_or(String::new(), |l| l.to_string()),
                c.wall_clock_ms
            ));
        }
        out
    }
}

fn validate_positive_decreasing(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidSolverParameter("epsilon list must be positive"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidSolverParameter("epsilon list must be decreasing"));
    }
    Ok(())
}

fn validate_positive_increasing(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidSolverParameter("lambda list must be positive"));
    }
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSolverParameter("lambda list must be increasing"));
    }
    Ok(())
}

/// Exact hard solves along a decreasing epsilon list, each compared in
/// L2(mu) to the KR reference map (the recursive discrete KR plan's
/// barycentric map unless a closed form is supplied).
pub fn sweep_hard_epsilon(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    epsilons: &[f64],
    kr_reference: Option<&MapTable>,
) -> Result<SweepReport> {
    validate_positive_decreasing(epsilons)?;
    let kr_plan = kr_plan_discrete(source, target)?;
    let own_reference;
    let reference = match kr_reference {
        Some(r) => r,
        None => {
            own_reference = barycentric_map(&kr_plan)?;
            &own_reference
        }
    };

    let cells: Vec<Result<SweepCell>> = epsilons
        .par_iter()
        .map(|&eps| {
            hard_cell(source, target, eps, reference, &kr_plan).map_err(|e| Error::Cell {
                epsilon: eps,
                lambda: None,
                source: Box::new(e),
            })
        })
        .collect();
    Ok(SweepReport::new(
        format!("hard sweep {}x{} atoms", source.len(), target.len()),
        cells.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

fn hard_cell(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    eps: f64,
    reference: &MapTable,
    kr_plan: &Coupling,
) -> Result<SweepCell> {
    let start = std::time::Instant::now();
    let cost = WeightedCost::new(eps, source.dim())?;
    let matrix = cost.matrix(source.points(), target.points())?;
    let sol = solve_exact(source, target, &matrix)?;
    let map = barycentric_map(&sol.plan)?;
    let dist = map_distance_l2(&map, reference, source)?;
    let agreement = (1..=source.dim())
        .map(|k| marginal_agreement(&sol.plan, kr_plan, k))
        .collect::<Result<Vec<f64>>>()?;
    Ok(SweepCell {
        epsilon: eps,
        lambda: None,
        objective: sol.value,
        kl_term: 0.0,
        transport_term: sol.value,
        map_to_kr_l2: dist,
        el_residual: None,
        resolve_gap: None,
        marginal_agreement: agreement,
        far_from_target: false,
        solver_iterations: 0,
        polished: false,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn solve_soft(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &WeightedCost,
    lambda: f64,
    spec: &SoftSolverSpec,
) -> Result<SoftSolution> {
    let matrix = cost.matrix(source.points(), target.points())?;
    match spec {
        SoftSolverSpec::Oracle => exact_soft_oracle(source, target, &matrix, lambda, cost.epsilon()),
        SoftSolverSpec::Sinkhorn(opts) => {
            semi_relaxed_sinkhorn(source, target, &matrix, lambda, cost.epsilon(), opts)
        }
    }
}

/// Soft solves over the (epsilon, lambda) grid. Each cell's KR reference is
/// the recursive KR plan from the source onto the cell's own perturbed
/// target, the computable surrogate for the nu_lambda limit.
pub fn sweep_soft(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    epsilons: &[f64],
    lambdas: &[f64],
    solver: &SoftSolverSpec,
) -> Result<SweepReport> {
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidSolverParameter("epsilon list must be positive"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidSolverParameter("lambda list must be positive"));
    }
    let pairs: Vec<(f64, f64)> = epsilons
        .iter()
        .flat_map(|&e| lambdas.iter().map(move |&l| (e, l)))
        .collect();
    let cells: Vec<Result<SweepCell>> = pairs
        .par_iter()
        .map(|&(eps, lambda)| {
            soft_cell(source, target, eps, lambda, solver).map_err(|e| Error::Cell {
                epsilon: eps,
                lambda: Some(lambda),
                source: Box::new(e),
            })
        })
        .collect();
    Ok(SweepReport::new(
        format!("soft sweep {}x{} atoms", source.len(), target.len()),
        cells.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

fn soft_cell(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    eps: f64,
    lambda: f64,
    solver: &SoftSolverSpec,
) -> Result<SweepCell> {
    let start = std::time::Instant::now();
    let cost = WeightedCost::new(eps, source.dim())?;
    let matrix = cost.matrix(source.points(), target.points())?;
    let soft = solve_soft(source, target, &cost, lambda, solver)?;
    let soft_map = barycentric_map(&soft.plan)?;
    let nu_cell = soft.perturbed_target();
    let kr_plan = kr_plan_discrete(source, &nu_cell)?;
    let kr_map = barycentric_map(&kr_plan)?;
    let dist = map_distance_l2(&soft_map, &kr_map, source)?;
    let agreement = (1..=source.dim())
        .map(|k| marginal_agreement(&soft.plan, &kr_plan, k))
        .collect::<Result<Vec<f64>>>()?;
    let el = el_residual(&soft, target, &matrix)?;
    let hard_onto_cell = solve_exact(source, &nu_cell, &matrix)?;
    let gap = (hard_onto_cell.value - soft.transport_term).abs();
    Ok(SweepCell {
        epsilon: eps,
        lambda: Some(lambda),
        objective: soft.objective,
        kl_term: soft.kl_term,
        transport_term: soft.transport_term,
        map_to_kr_l2: dist,
        el_residual: Some(el),
        resolve_gap: Some(gap),
        marginal_agreement: agreement,
        far_from_target: soft.kl_term > 0.5,
        solver_iterations: soft.diagnostics.iterations,
        polished: soft.diagnostics.polished,
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// W2 distance between the coordinate-prefix projections of two plans viewed
/// as measures on R^k x R^k; zero iff the projected couplings coincide.
pub fn marginal_agreement(plan_a: &Coupling, plan_b: &Coupling, prefix: usize) -> Result<f64> {
    if plan_a.source().points() != plan_b.source().points()
        || plan_a.target().points() != plan_b.target().points()
    {
        return Err(Error::SupportMismatch);
    }
    let d = plan_a.source().dim();
    if prefix == 0 || prefix > d {
        return Err(Error::DimensionMismatch { expected: d, got: prefix });
    }
    let project = |plan: &Coupling| -> Result<DiscreteMeasure> {
        let mut points = Vec::with_capacity(plan.entries().len());
        let mut masses = Vec::with_capacity(plan.entries().len());
        for &(i, j, f) in plan.entries() {
            let mut p = Vec::with_capacity(2 * prefix);
            p.extend_from_slice(&plan.source().point(i)[..prefix]);
            p.extend_from_slice(&plan.target().point(j)[..prefix]);
            points.push(p);
            masses.push(f);
        }
        DiscreteMeasure::from_points_merging(points, masses)
    };
    let a = project(plan_a)?;
    let b = project(plan_b)?;
    let cost = WeightedCost::new(1.0, 2 * prefix)?;
    let matrix = cost.matrix(a.points(), b.points())?;
    let sol = solve_exact(&a, &b, &matrix)?;
    Ok(sol.value.max(0.0).sqrt())
}

/// The four corners of the limit diagram and their pairwise L2(mu) map
/// distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagramReport {
    pub schema_version: u32,
    /// Corner order: soft at (eps0, lambda0); hard at eps0 (lambda -> inf
    /// first); KR onto the perturbed target (eps -> 0 first); KR onto the
    /// true target.
    pub corner_labels: [String; 4],
    pub corners: Vec<MapTable>,
    pub distances: [[f64; 4]; 4],
}

impl DiagramReport {
    pub fn distances_csv(&self) -> String {
        let mut out = String::from("corner");
        for l in &self.corner_labels {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (i, l) in self.corner_labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..4 {
                out.push_str(&format!(",{}", self.distances[i][j]));
            }
            out.push('\n');
        }
        out
    }
}

/// Closed-form corner maps for Gaussian fixtures, evaluated on the source
/// atoms; when absent, corners B and D fall back to discrete solves.
pub struct ClosedFormCorners<'a> {
    pub hard_eps0: &'a crate::kr::AffineMap,
    pub kr: &'a crate::kr::AffineMap,
}

/// Build the commutative diagram of limits at the sweep extremes:
/// A = soft solve at (min epsilon, max lambda), B = hard solve at min
/// epsilon, C = KR onto A's perturbed target, D = KR onto the target.
pub fn commutative_diagram(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    epsilons: &[f64],
    lambdas: &[f64],
    closed_form: Option<ClosedFormCorners<'_>>,
    solver: &SoftSolverSpec,
) -> Result<DiagramReport> {
    validate_positive_decreasing(epsilons)?;
    validate_positive_increasing(lambdas)?;
    let eps0 = *epsilons.last().unwrap();
    let lambda0 = *lambdas.last().unwrap();
    let cost = WeightedCost::new(eps0, source.dim())?;

    let soft = solve_soft(source, target, &cost, lambda0, solver)?;
    let corner_a = barycentric_map(&soft.plan)?;

    let corner_b = match &closed_form {
        Some(cf) => cf.hard_eps0.as_map_table(source.points()),
        None => {
            let matrix = cost.matrix(source.points(), target.points())?;
            barycentric_map(&solve_exact(source, target, &matrix)?.plan)?
        }
    };

    let nu_cell = soft.perturbed_target();
    let corner_c = barycentric_map(&kr_plan_discrete(source, &nu_cell)?)?;

    let corner_d = match &closed_form {
        Some(cf) => cf.kr.as_map_table(source.points()),
        None => barycentric_map(&kr_plan_discrete(source, target)?)?,
    };

    let corners = vec![corner_a, corner_b, corner_c, corner_d];
    let mut distances = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            distances[i][j] = if i == j {
                0.0
            } else {
                map_distance_l2(&corners[i], &corners[j], source)?
            };
        }
    }
    Ok(DiagramReport {
        schema_version: 1,
        corner_labels: [
            format!("soft(eps={eps0},lambda={lambda0})"),
            format!("hard(eps={eps0})"),
            "kr_onto_nu_lambda".into(),
            "kr_onto_target".into(),
        ],
        corners,
        distances,
    })
}

/// `(lambda, KL, 2M / lambda)` rows with `M = second_moment(mu) +
/// second_moment(nu)`; the KL column is bounded by the third at every lambda.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlDecayReport {
    pub schema_version: u32,
    pub second_moment_bound: f64,
    pub rows: Vec<KlDecayRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlDecayRow {
    pub lambda: f64,
    pub kl: f64,
    pub bound: f64,
}

impl KlDecayReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,kl,bound\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.lambda, r.kl, r.bound));
        }
        out
    }
}

pub fn kl_decay_curve(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &WeightedCost,
    lambdas: &[f64],
    solver: &SoftSolverSpec,
) -> Result<KlDecayReport> {
    validate_positive_increasing(lambdas)?;
    let m_bound = source.second_moment() + target.second_moment();
    let rows: Vec<Result<KlDecayRow>> = lambdas
        .par_iter()
        .map(|&lambda| {
            let soft = solve_soft(source, target, cost, lambda, solver)?;
            Ok(KlDecayRow { lambda, kl: soft.kl_term, bound: 2.0 * m_bound / lambda })
        })
        .collect();
    Ok(KlDecayReport {
        schema_version: 1,
        second_moment_bound: m_bound,
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// `hard value - soft objective`; nonnegative up to solver tolerance, and
/// approaching zero as lambda grows.
pub fn soft_hard_gap(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &WeightedCost,
    lambda: f64,
) -> Result<f64> {
    let matrix = cost.matrix(source.points(), target.points())?;
    let hard = solve_exact(source, target, &matrix)?;
    let soft = exact_soft_oracle(source, target, &matrix, lambda, cost.epsilon())?;
    Ok(hard.value - soft.objective)
}

/// Mollified-marginal stability sweep: smooth both measures at each
/// bandwidth onto the paired grids, solve the hard problem at the paired
/// epsilon, and record the map distance to the reference KR map evaluated on
/// the mollified atoms.
///
/// Grids are per schedule entry: the kernel must resolve each grid's spacing
/// and the grid must span the inflated measure. A zero bandwidth entry skips
/// mollification (degenerating to a hard-sweep cell on the raw atoms).
pub fn stability_experiment<F>(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    schedule: &[(f64, f64)],
    grids: &[(GridSpec, GridSpec)],
    kr_reference: F,
) -> Result<SweepReport>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if schedule.is_empty() {
        return Err(Error::InvalidSolverParameter("empty stability schedule"));
    }
    if grids.len() != schedule.len() {
        return Err(Error::InvalidSolverParameter("stability schedule and grids must pair up"));
    }
    let cells: Vec<Result<SweepCell>> = schedule
        .par_iter()
        .zip(grids)
        .map(|(&(bandwidth, eps), (source_grid, target_grid))| {
            let start = std::time::Instant::now();
            let (mu, nu) = if bandwidth == 0.0 {
                (source.clone(), target.clone())
            } else {
                (
                    mollify(source, bandwidth, source_grid)?.atomize(),
                    mollify(target, bandwidth, target_grid)?.atomize(),
                )
            };
            let cost = WeightedCost::new(eps, source.dim())?;
            let matrix = cost.matrix(mu.points(), nu.points())?;
            let sol = solve_exact(&mu, &nu, &matrix)?;
            let map = barycentric_map(&sol.plan)?;
            let reference = MapTable::from_fn(mu.points(), |p| kr_reference(p));
            let dist = map_distance_l2(&map, &reference, &mu)?;
            Ok(SweepCell {
                epsilon: eps,
                lambda: None,
                objective: sol.value,
                kl_term: 0.0,
                transport_term: sol.value,
                map_to_kr_l2: dist,
                el_residual: None,
                resolve_gap: None,
                marginal_agreement: Vec::new(),
                far_from_target: false,
                solver_iterations: 0,
                polished: false,
                wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect();
    Ok(SweepReport::new(
        format!("stability sweep, {} schedule entries", schedule.len()),
        cells.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Second marginal of a plan, exposed for corner assembly in callers.
pub fn plan_second_marginal(plan: &Coupling) -> DiscreteMeasure {
    plan_marginals(plan).1
}

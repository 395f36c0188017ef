//! Semi-relaxed Sinkhorn: alternating scalings with a hard row projection
//! `u = mu ./ (K v)` and the softened column update
//! `v = (nu ./ (K^T u))^(lambda / (lambda + eta))`, `K = exp(-C / eta)`.
//!
//! The entropic parameter `eta` is a solver artifact, not part of the
//! problem; annealing it geometrically with warm-started scalings drives the
//! plan toward the exact soft-constrained optimum.

use serde::{Deserialize, Serialize};

use super::oracle::{fista_round, threshold};
use super::polish::polish_support;
use super::{logsumexp, objective_parts, SoftSolution, SolveDiagnostics, SUPPORT_REL_TOL};
use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::ot_exact::Coupling;

/// Geometric eta ladder, warm-starting the scalings between rungs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    /// First eta, as a multiple of the cost median.
    pub start_factor: f64,
    /// Multiplier per rung, in (0, 1).
    pub decay: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        // median(C)/10 down to the target eta.
        AnnealSchedule { start_factor: 0.1, decay: 0.25 }
    }
}

/// Which arithmetic the scaling iteration runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainPolicy {
    /// Log domain below `eta < 1e-3 median(C)`, with automatic log-domain
    /// retry if the plain kernel underflows.
    Auto,
    /// Plain scalings only; underflow surfaces as `UseLogDomain`.
    Plain,
    /// Log domain always.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Final (or only) entropic parameter.
    pub eta: f64,
    pub max_iterations: usize,
    /// L1 row-marginal violation at which a rung stops.
    pub tolerance: f64,
    /// Anneal from `median(C) * start_factor` down to `eta`.
    pub anneal: Option<AnnealSchedule>,
    /// Attempt the exact support polish on the final plan.
    pub polish: bool,
    /// Seed the polish with the exact hard plan's support as well; the hard
    /// basis is the right combinatorial object near the balanced limit.
    pub hard_support_polish: bool,
    pub domain: DomainPolicy,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            eta: 1e-2,
            max_iterations: 50_000,
            tolerance: 1e-9,
            anneal: None,
            polish: false,
            hard_support_polish: false,
            domain: DomainPolicy::Auto,
        }
    }
}

impl SinkhornOptions {
    /// Annealed near-exact configuration: eta from median(C)/10 down to
    /// `1e-4 * median(C)`, with the exact support polish attempted last.
    pub fn near_exact(cost: &CostMatrix) -> Self {
        SinkhornOptions {
            eta: 1e-4 * cost.median().max(f64::MIN_POSITIVE),
            max_iterations: 1_000,
            tolerance: 1e-4,
            anneal: Some(AnnealSchedule::default()),
            polish: true,
            hard_support_polish: true,
            domain: DomainPolicy::Auto,
        }
    }
}

/// Solve the soft-constrained problem by entropic scaling.
///
/// The returned plan has exact row marginals (a final row projection is
/// applied), and the reported objective is computed from that projected plan
/// without the entropy term.
pub fn semi_relaxed_sinkhorn(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &CostMatrix,
    lambda: f64,
    epsilon: f64,
    options: &SinkhornOptions,
) -> Result<SoftSolution> {
    validate_inputs(source, target, cost, lambda)?;
    if !(options.eta > 0.0) {
        return Err(Error::InvalidSolverParameter("eta must be positive"));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidSolverParameter("tolerance must be positive"));
    }

    let median = cost.median();
    let mut etas = Vec::new();
    if let Some(schedule) = &options.anneal {
        let mut eta = median.max(f64::MIN_POSITIVE) * schedule.start_factor;
        while eta > options.eta {
            etas.push(eta);
            eta *= schedule.decay;
        }
    }
    etas.push(options.eta);

    let n = source.len();
    let m = target.len();
    let mu = source.weights();
    let nu = target.weights();
    // Scaled potentials f = eta log u, g = eta log v survive eta changes as
    // warm starts.
    let mut f = vec![0.0_f64; n];
    let mut g = vec![0.0_f64; m];
    let mut iterations = 0usize;
    let mut violation = f64::INFINITY;

    for &eta in &etas {
        let log_domain = match options.domain {
            DomainPolicy::Log => true,
            DomainPolicy::Plain => false,
            DomainPolicy::Auto => eta < 1e-3 * median || median == 0.0,
        };
        let out = if log_domain {
            log_domain_loop(
                mu, nu, cost, lambda, eta, options.tolerance, options.max_iterations, &mut f, &mut g,
            )
        } else {
            match plain_domain_loop(
                mu, nu, cost, lambda, eta, options.tolerance, options.max_iterations, &mut f, &mut g,
            ) {
                Ok(out) => out,
                Err(Error::UseLogDomain { .. }) if options.domain == DomainPolicy::Auto => {
                    log_domain_loop(
                        mu,
                        nu,
                        cost,
                        lambda,
                        eta,
                        options.tolerance,
                        options.max_iterations,
                        &mut f,
                        &mut g,
                    )
                }
                Err(e) => return Err(e),
            }
        };
        iterations += out.0;
        violation = out.1;
    }

    let eta_final = *etas.last().unwrap();
    let entries = materialize_row_projected(mu, cost, eta_final, &g);
    let plan = Coupling::new(source.clone(), target.clone(), entries)?;

    let mut phi: Vec<f64> = f.iter().map(|fi| -fi).collect();
    let mut diagnostics = SolveDiagnostics {
        iterations,
        eta_trace: etas.clone(),
        final_row_violation: violation,
        polished: false,
        kkt_residual: None,
    };

    let mut final_plan = plan;
    if options.polish {
        // Candidate supports, best first: a short projected-descent
        // refinement of the entropic plan identifies the active set most
        // reliably; the exact hard basis covers the balanced limit; the raw
        // entropic support is the last resort.
        let mut candidates: Vec<Vec<(usize, usize)>> = Vec::new();
        if n * m <= 2_000_000 {
            let mut dense = vec![0.0_f64; n * m];
            for &(i, j, v) in final_plan.entries() {
                dense[i * m + j] = v;
            }
            fista_round(&mut dense, mu, nu, cost, lambda, 300);
            candidates.push(threshold(&dense, n, m, SUPPORT_REL_TOL));
        }
        if options.hard_support_polish
            && source.len() <= crate::ot_exact::EXACT_SIZE_CAP
            && target.len() <= crate::ot_exact::EXACT_SIZE_CAP
        {
            if let Ok(hard) = crate::ot_exact::solve_exact(source, target, cost) {
                candidates
                    .push(hard.plan.entries().iter().map(|&(i, j, _)| (i, j)).collect());
            }
        }
        candidates.push(threshold_support(&final_plan));
        for support in &candidates {
            let Ok(polished) = polish_support(mu, nu, cost, lambda, support) else {
                continue;
            };
            let Ok(p) = Coupling::new(source.clone(), target.clone(), polished.entries.clone())
            else {
                continue;
            };
            let (_, _, old_obj) = objective_parts(&final_plan, nu, cost, lambda);
            let (_, _, new_obj) = objective_parts(&p, nu, cost, lambda);
            if new_obj <= old_obj + 1e-9 * (1.0 + old_obj.abs()) {
                final_plan = p;
                phi = polished.phi;
                diagnostics.polished = true;
                diagnostics.kkt_residual = Some(polished.kkt_residual);
                break;
            }
        }
    }

    // A certified polish is stronger than any marginal-violation criterion;
    // without one, stalling past the tolerance is an error.
    if !diagnostics.polished && violation > options.tolerance {
        return Err(Error::SinkhornStalled { violation, iterations });
    }

    Ok(assemble_solution(final_plan, lambda, epsilon, phi, diagnostics, cost))
}

pub(crate) fn threshold_support(plan: &Coupling) -> Vec<(usize, usize)> {
    let mut row_max = vec![0.0_f64; plan.source().len()];
    for &(i, _, v) in plan.entries() {
        row_max[i] = row_max[i].max(v);
    }
    plan.entries()
        .iter()
        .filter(|&&(i, _, v)| v > SUPPORT_REL_TOL * row_max[i])
        .map(|&(i, j, _)| (i, j))
        .collect()
}

pub(crate) fn assemble_solution(
    plan: Coupling,
    lambda: f64,
    epsilon: f64,
    phi: Vec<f64>,
    diagnostics: SolveDiagnostics,
    cost: &CostMatrix,
) -> SoftSolution {
    let nu = plan.target().weights().to_vec();
    let (transport, kl, objective) = objective_parts(&plan, &nu, cost, lambda);
    let cols = plan.col_sums();
    let g_ratio: Vec<f64> = cols.iter().zip(&nu).map(|(q, n)| q / n).collect();
    let n = plan.source().len();
    let d_per_source: Vec<f64> = (0..n)
        .map(|i| (0..nu.len()).map(|j| nu[j] * (-cost.at(i, j) / lambda).exp()).sum())
        .collect();
    let mu = plan.source().weights();
    let normalizer_z: f64 = (0..n)
        .map(|i| {
            mu[i]
                * (0..nu.len())
                    .map(|j| nu[j] * ((-cost.at(i, j) - phi[i]) / lambda).exp())
                    .sum::<f64>()
        })
        .sum();
    SoftSolution {
        plan,
        lambda,
        epsilon,
        phi,
        g_ratio,
        d_per_source,
        normalizer_z,
        objective,
        kl_term: kl,
        transport_term: transport,
        diagnostics,
    }
}

fn validate_inputs(
    source: &DiscreteMeasure,
    target: &DiscreteMeasure,
    cost: &CostMatrix,
    lambda: f64,
) -> Result<()> {
    if cost.rows() != source.len() || cost.cols() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "cost {}x{} vs measures {}x{}",
            cost.rows(),
            cost.cols(),
            source.len(),
            target.len()
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidSolverParameter("lambda must be positive and finite"));
    }
    // The minimizer satisfies nu_{eps,lambda} << nu; target atoms outside
    // nu's support are disallowed.
    if target.weights().iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidMeasure("soft target weights must be strictly positive"));
    }
    if source.weights().iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidMeasure("soft source weights must be strictly positive"));
    }
    Ok(())
}

/// One rung of plain-domain scaling. Errors with `UseLogDomain` if the kernel
/// underflows.
#[allow(clippy::too_many_arguments)]
fn plain_domain_loop(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    eta: f64,
    tolerance: f64,
    max_iterations: usize,
    f: &mut [f64],
    g: &mut [f64],
) -> Result<(usize, f64)> {
    let n = mu.len();
    let m = nu.len();
    let kernel: Vec<f64> = cost.entries().iter().map(|c| (-c / eta).exp()).collect();
    let mut u: Vec<f64> = f.iter().map(|fi| (fi / eta).exp()).collect();
    let mut v: Vec<f64> = g.iter().map(|gi| (gi / eta).exp()).collect();
    let exponent = lambda / (lambda + eta);
    let mut violation = f64::INFINITY;

    for iter in 0..max_iterations {
        // Hard row projection.
        for i in 0..n {
            let kv: f64 = (0..m).map(|j| kernel[i * m + j] * v[j]).sum();
            if kv <= 0.0 || !kv.is_finite() {
                return Err(Error::UseLogDomain { eta });
            }
            u[i] = mu[i] / kv;
        }
        // Soft column update.
        let mut new_v = vec![0.0_f64; m];
        for (j, nv) in new_v.iter_mut().enumerate() {
            let ktu: f64 = (0..n).map(|i| kernel[i * m + j] * u[i]).sum();
            if ktu <= 0.0 || !ktu.is_finite() {
                return Err(Error::UseLogDomain { eta });
            }
            *nv = (nu[j] / ktu).powf(exponent);
        }
        v = new_v;
        // Row violation after the column move.
        violation = 0.0;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| u[i] * kernel[i * m + j] * v[j]).sum();
            violation += (row - mu[i]).abs();
        }
        if !violation.is_finite() {
            return Err(Error::UseLogDomain { eta });
        }
        if violation < tolerance {
            for i in 0..n {
                f[i] = eta * u[i].ln();
            }
            for j in 0..m {
                g[j] = eta * v[j].ln();
            }
            return Ok((iter + 1, violation));
        }
    }
    Ok((max_iterations, violation))
}

/// One rung of log-domain scaling on the potentials f = eta log u,
/// g = eta log v.
#[allow(clippy::too_many_arguments)]
fn log_domain_loop(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    eta: f64,
    tolerance: f64,
    max_iterations: usize,
    f: &mut [f64],
    g: &mut [f64],
) -> (usize, f64) {
    let n = mu.len();
    let m = nu.len();
    let soft = lambda / (lambda + eta);
    let mut violation = f64::INFINITY;
    for iter in 0..max_iterations {
        for i in 0..n {
            let lse = logsumexp((0..m).map(|j| (g[j] - cost.at(i, j)) / eta));
            f[i] = eta * mu[i].ln() - eta * lse;
        }
        let mut new_g = vec![0.0_f64; m];
        for (j, ng) in new_g.iter_mut().enumerate() {
            let lse = logsumexp((0..n).map(|i| (f[i] - cost.at(i, j)) / eta));
            *ng = soft * (eta * nu[j].ln() - eta * lse);
        }
        violation = 0.0;
        for i in 0..n {
            let row = logsumexp((0..m).map(|j| (f[i] + new_g[j] - cost.at(i, j)) / eta)).exp();
            violation += (row - mu[i]).abs();
        }
        g.copy_from_slice(&new_g);
        if violation < tolerance {
            return (iter + 1, violation);
        }
    }
    (max_iterations, violation)
}

/// Materialize the plan with exact row marginals: each row is normalized to
/// its source weight directly.
fn materialize_row_projected(
    mu: &[f64],
    cost: &CostMatrix,
    eta: f64,
    g: &[f64],
) -> Vec<(usize, usize, f64)> {
    let n = mu.len();
    let m = g.len();
    let mut entries = Vec::new();
    for i in 0..n {
        let exponents: Vec<f64> = (0..m).map(|j| (g[j] - cost.at(i, j)) / eta).collect();
        let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = scaled.iter().sum();
        for (j, s) in scaled.iter().enumerate() {
            let mass = mu[i] * s / total;
            if mass > 0.0 {
                entries.push((i, j, mass));
            }
        }
    }
    entries
}

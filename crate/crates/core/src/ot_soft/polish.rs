//! Exact KKT finish for the soft-constrained problem on a candidate support.
//!
//! At optimality there exist `phi_i` and `s_j = lambda log(q_j / nu_j)` with
//! `C_ij + s_j + phi_i = 0` on the plan support and `>= 0` everywhere. On a
//! spanning forest of the support graph these relations propagate node to
//! node; the one free shift per component is pinned by mass balance
//! `sum_{j in comp} nu_j exp(s_j / lambda) = sum_{i in comp} mu_i`, which has
//! a closed form. Flows then follow by leaf peeling. Wrong support guesses
//! surface as negative flows (edge removed) or slack violations (edge pivoted
//! in); the loop is a small active-set method.

use super::logsumexp;
use crate::cost::CostMatrix;
use crate::error::{Error, Result};

pub(crate) struct PolishOutcome {
    pub entries: Vec<(usize, usize, f64)>,
    /// Duals with `C_ij + s_j + phi_i = 0` on the support.
    pub phi: Vec<f64>,
    /// Perturbed target weights `q_j = nu_j exp(s_j / lambda)` (diagnostic).
    #[allow(dead_code)]
    pub q: Vec<f64>,
    /// Max slack violation `max(0, -(C_ij + s_j + phi_i))` over all cells.
    pub kkt_residual: f64,
}

const FLOW_TOL: f64 = 1e-11;
const KKT_TOL: f64 = 1e-9;
const MAX_ACTIVE_SET_STEPS: usize = 120;

pub(crate) fn polish_support(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    candidate: &[(usize, usize)],
) -> Result<PolishOutcome> {
    let n = mu.len();
    let m = nu.len();
    let mut edges: Vec<(usize, usize)> = candidate.to_vec();
    edges.sort_unstable();
    edges.dedup();

    for _step in 0..MAX_ACTIVE_SET_STEPS {
        // Rows stripped of every edge (batch removals can do this) are
        // reattached at their cheapest column; slack pivots correct the
        // choice later if needed.
        let mut degree = vec![0usize; n];
        for &(i, _) in &edges {
            degree[i] += 1;
        }
        for i in 0..n {
            if degree[i] == 0 && mu[i] > 0.0 {
                let best = (0..m)
                    .min_by(|&a, &b| cost.at(i, a).partial_cmp(&cost.at(i, b)).unwrap())
                    .expect("nonempty columns");
                edges.push((i, best));
            }
        }
        edges.sort_unstable();

        let forest = spanning_forest(n, m, &edges);
        let Some(state) = solve_on_forest(mu, nu, cost, lambda, &forest, n, m) else {
            return Err(Error::OracleUnconverged { residual: f64::INFINITY });
        };

        // Negative flows: the support guess carries edges the optimum does
        // not; drop them all and retry.
        if state.flows.iter().any(|&f| f < -FLOW_TOL) {
            edges = forest
                .iter()
                .zip(&state.flows)
                .filter(|(_, &f)| f >= -FLOW_TOL)
                .map(|(&e, _)| e)
                .collect();
            continue;
        }

        // Slack check over every cell.
        let mut min_slack = f64::INFINITY;
        let mut violator = None;
        for i in 0..n {
            if mu[i] <= 0.0 {
                continue;
            }
            for j in 0..m {
                let slack = cost.at(i, j) + state.s[j] + state.phi[i];
                if slack < min_slack {
                    min_slack = slack;
                    violator = Some((i, j));
                }
            }
        }
        if min_slack >= -KKT_TOL {
            let entries: Vec<(usize, usize, f64)> = forest
                .iter()
                .zip(&state.flows)
                .filter(|(_, &f)| f > 0.0)
                .map(|(&(i, j), &f)| (i, j, f))
                .collect();
            return Ok(PolishOutcome {
                entries,
                phi: state.phi,
                q: state.q,
                kkt_residual: (-min_slack).max(0.0),
            });
        }

        // Pivot the violating edge into the forest, pushing out the flow
        // bottleneck on the induced cycle (transportation pivot).
        let (vi, vj) = violator.expect("violation implies a cell");
        edges = pivot_in(&forest, &state.flows, n, (vi, vj));
    }
    Err(Error::OracleUnconverged { residual: f64::INFINITY })
}

/// BFS spanning forest over nodes (rows 0..n, cols n..n+m); scans edges in
/// sorted order so the result is deterministic.
fn spanning_forest(n: usize, m: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n + m];
    for (k, &(i, j)) in edges.iter().enumerate() {
        adj[i].push((n + j, k, 0));
        adj[n + j].push((i, k, 0));
    }
    let mut seen = vec![false; n + m];
    let mut kept = Vec::new();
    for root in 0..n + m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(node) = queue.pop_front() {
            for &(other, k, _) in &adj[node] {
                if !seen[other] {
                    seen[other] = true;
                    kept.push(edges[k]);
                    queue.push_back(other);
                }
            }
        }
    }
    kept.sort_unstable();
    kept
}

struct ForestState {
    phi: Vec<f64>,
    s: Vec<f64>,
    q: Vec<f64>,
    flows: Vec<f64>,
}

fn solve_on_forest(
    mu: &[f64],
    nu: &[f64],
    cost: &CostMatrix,
    lambda: f64,
    forest: &[(usize, usize)],
    n: usize,
    m: usize,
) -> Option<ForestState> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for (k, &(i, j)) in forest.iter().enumerate() {
        adj[i].push(k);
        adj[n + j].push(k);
    }

    // Propagate duals per component from an arbitrary row root, then shift the
    // whole component so its perturbed-target mass matches its source mass.
    let mut phi = vec![f64::NAN; n];
    let mut s = vec![f64::NAN; m];
    let mut q = vec![0.0_f64; m];
    let mut component = vec![usize::MAX; n + m];
    let mut comp_count = 0usize;
    for root in 0..n {
        if component[root] != usize::MAX {
            continue;
        }
        let comp = comp_count;
        comp_count += 1;
        phi[root] = 0.0;
        component[root] = comp;
        let mut queue = std::collections::VecDeque::from([root]);
        let mut rows = vec![root];
        let mut cols = Vec::new();
        while let Some(node) = queue.pop_front() {
            for &k in &adj[node] {
                let (i, j) = forest[k];
                let other = if node < n { n + j } else { i };
                if component[other] != usize::MAX {
                    continue;
                }
                component[other] = comp;
                if other < n {
                    phi[other] = -cost.at(other, forest[k].1) - s[forest[k].1];
                    rows.push(other);
                } else {
                    s[j] = -cost.at(i, j) - phi[i];
                    cols.push(j);
                }
                queue.push_back(other);
            }
        }

        let comp_mass: f64 = rows.iter().map(|&i| mu[i]).sum();
        if comp_mass <= 0.0 {
            for &i in &rows {
                phi[i] = 0.0;
            }
            for &j in &cols {
                s[j] = 0.0;
            }
            continue;
        }
        if cols.is_empty() {
            // A row with mass but nowhere to send it: support guess is broken.
            return None;
        }
        // Solve sum nu_j exp((s_j - t)/lambda) = comp_mass for the shift t.
        // q is computed from the recentered exponents directly: recovering it
        // from the shifted duals as exp((s - t)/lambda) would amplify the
        // O(1e-16) rounding of s - t by 1/lambda.
        let lse = logsumexp(cols.iter().map(|&j| nu[j].ln() + s[j] / lambda));
        let t = lambda * (lse - comp_mass.ln());
        for &j in &cols {
            q[j] = (nu[j].ln() + s[j] / lambda - lse + comp_mass.ln()).exp();
            s[j] -= t;
        }
        for &i in &rows {
            phi[i] += t;
        }
    }

    // Isolated columns (no support edge): pin s at the most binding
    // constraint so the slack check treats them exactly.
    for j in 0..m {
        if s[j].is_nan() {
            let best = (0..n)
                .filter(|&i| mu[i] > 0.0)
                .map(|i| -cost.at(i, j) - phi[i])
                .fold(f64::NEG_INFINITY, f64::max);
            s[j] = if best.is_finite() { best } else { 0.0 };
        }
    }

    // Leaf peeling determines the unique flows on the forest.
    let mut flows = vec![0.0_f64; forest.len()];
    let mut residual_mass: Vec<f64> = (0..n + m)
        .map(|node| if node < n { mu[node] } else { q[node - n] })
        .collect();
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut assigned = vec![false; forest.len()];
    let mut stack: Vec<usize> = (0..n + m).filter(|&v| degree[v] == 1).collect();
    while let Some(leaf) = stack.pop() {
        let Some(&k) = adj[leaf].iter().find(|&&k| !assigned[k]) else {
            continue;
        };
        assigned[k] = true;
        let (i, j) = forest[k];
        let other = if leaf < n { n + j } else { i };
        flows[k] = residual_mass[leaf];
        residual_mass[leaf] = 0.0;
        residual_mass[other] -= flows[k];
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    for f in flows.iter_mut() {
        if *f < 0.0 && *f >= -FLOW_TOL {
            *f = 0.0;
        }
    }

    Some(ForestState { phi, s, q, flows })
}

/// Add `enter` to the forest: if it bridges two components, keep everything;
/// otherwise push out the smallest decreasing flow on the induced cycle.
fn pivot_in(
    forest: &[(usize, usize)],
    flows: &[f64],
    n: usize,
    enter: (usize, usize),
) -> Vec<(usize, usize)> {
    let m_nodes = forest.iter().map(|&(_, j)| j + 1).max().unwrap_or(0);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m_nodes.max(enter.1 + 1)];
    for (k, &(i, j)) in forest.iter().enumerate() {
        adj[i].push(k);
        adj[n + j].push(k);
    }
    // Path from enter.0 to col node n + enter.1.
    let target = n + enter.1;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut queue = std::collections::VecDeque::from([enter.0]);
    parent[enter.0] = Some((enter.0, usize::MAX));
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for &k in &adj[node] {
            let (i, j) = forest[k];
            let other = if node < n { n + j } else { i };
            if parent[other].is_none() {
                parent[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    if parent[target].is_none() {
        // Different components: adding the edge merges them.
        let mut out = forest.to_vec();
        out.push(enter);
        out.sort_unstable();
        return out;
    }
    // Walk back collecting path edges; cycle = enter + path, with the edges at
    // even path positions decreasing when enter increases.
    let mut path = Vec::new();
    let mut node = target;
    while node != enter.0 {
        let (prev, k) = parent[node].unwrap();
        path.push(k);
        node = prev;
    }
    let mut leave = path[0];
    let mut best = f64::INFINITY;
    for (pos, &k) in path.iter().enumerate() {
        if pos % 2 == 0 && flows[k] < best {
            best = flows[k];
            leave = k;
        }
    }
    let mut out: Vec<(usize, usize)> = forest
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != leave)
        .map(|(_, &e)| e)
        .collect();
    out.push(enter);
    out.sort_unstable();
    out
}

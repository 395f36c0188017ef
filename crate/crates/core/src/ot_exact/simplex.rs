//! Transportation simplex on the dense bipartite transportation polytope.
//!
//! Block-search pivoting with a Bland's-rule fallback once degenerate pivots
//! repeat, which guarantees finite termination. Produces primal flows and the
//! dual potentials (u, v) with u_i + v_j <= C_ij everywhere and equality on
//! the basis.

use crate::cost::CostMatrix;
use crate::error::{Error, Result};

pub(crate) struct SimplexOutput {
    pub flows: Vec<(usize, usize, f64)>,
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
    pub value: f64,
}

struct Basis {
    n: usize,
    m: usize,
    cells: Vec<(usize, usize, f64)>,
    in_basis: Vec<bool>,
}

impl Basis {
    fn contains(&self, i: usize, j: usize) -> bool {
        self.in_basis[i * self.m + j]
    }

    /// Adjacency lists over nodes (rows 0..n, cols n..n+m) -> cell indices.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n + self.m];
        for (idx, &(i, j, _)) in self.cells.iter().enumerate() {
            adj[i].push(idx);
            adj[self.n + j].push(idx);
        }
        adj
    }

    /// Dual potentials from the spanning basis: u[0] = 0, propagate
    /// u_i + v_j = C_ij along basic cells.
    fn potentials(&self, cost: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; self.n];
        let mut v = vec![f64::NAN; self.m];
        let mut stack = vec![0usize];
        u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &cell in &adj[node] {
                let (i, j, _) = self.cells[cell];
                if node < self.n {
                    if v[j].is_nan() {
                        v[j] = cost.at(i, j) - u[i];
                        stack.push(self.n + j);
                    }
                } else if u[i].is_nan() {
                    u[i] = cost.at(i, j) - v[j];
                    stack.push(i);
                }
            }
        }
        (u, v)
    }

    /// Node path between row `ei` and col-node `n + ej` through the tree.
    fn path(&self, ei: usize, ej: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.n + ej;
        let mut parent_node = vec![usize::MAX; self.n + self.m];
        let mut parent_cell = vec![usize::MAX; self.n + self.m];
        let mut stack = vec![ei];
        parent_node[ei] = ei;
        'outer: while let Some(node) = stack.pop() {
            for &cell in &adj[node] {
                let (i, j, _) = self.cells[cell];
                let other = if node < self.n { self.n + j } else { i };
                if parent_node[other] == usize::MAX {
                    parent_node[other] = node;
                    parent_cell[other] = cell;
                    if other == target {
                        break 'outer;
                    }
                    stack.push(other);
                }
            }
        }
        debug_assert_ne!(parent_node[target], usize::MAX, "basis must span");
        let mut cells = Vec::new();
        let mut node = target;
        while node != ei {
            cells.push(parent_cell[node]);
            node = parent_node[node];
        }
        cells
    }
}

/// North-west-corner initial basis: exactly n + m - 1 cells forming a tree.
fn northwest_basis(supply: &[f64], demand: &[f64]) -> Basis {
    let n = supply.len();
    let m = demand.len();
    let mut a = supply.to_vec();
    let mut b = demand.to_vec();
    let mut cells = Vec::with_capacity(n + m - 1);
    let mut in_basis = vec![false; n * m];
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = a[i].min(b[j]).max(0.0);
        cells.push((i, j, f));
        in_basis[i * m + j] = true;
        a[i] -= f;
        b[j] -= f;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if (a[i] <= b[j] && i < n - 1) || j == m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    Basis { n, m, cells, in_basis }
}

/// Solve min <C, gamma> over { gamma >= 0, rows = supply, cols = demand }.
///
/// Supplies and demands must each sum to the same total (the caller
/// normalizes); small rounding mismatch is absorbed by the last basic cell.
pub(crate) fn solve(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Result<SimplexOutput> {
    let n = supply.len();
    let m = demand.len();
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::ShapeMismatch(format!(
            "cost matrix {}x{} vs marginals {}x{}",
            cost.rows(),
            cost.cols(),
            n,
            m
        )));
    }
    let mut basis = northwest_basis(supply, demand);
    let scale = cost.max().max(1.0);
    let tol = 1e-12 * scale;

    let block = ((n * m) as f64).sqrt().ceil() as usize;
    let total_cells = n * m;
    let mut scan_start = 0usize;
    let mut consecutive_degenerate = 0usize;
    let mut bland = false;
    let pivot_cap = 400 * (n + m) + 40_000;

    for _pivot in 0..pivot_cap {
        let (u, v) = basis.potentials(cost);

        // Entering cell: Bland (first negative in fixed order) when breaking a
        // degenerate streak, block search with Dantzig tie-break otherwise.
        let mut entering: Option<(usize, usize)> = None;
        if bland {
            'scan: for i in 0..n {
                for j in 0..m {
                    if !basis.contains(i, j) && cost.at(i, j) - u[i] - v[j] < -tol {
                        entering = Some((i, j));
                        break 'scan;
                    }
                }
            }
        } else {
            let mut best = -tol;
            let mut scanned = 0usize;
            let mut pos = scan_start;
            while scanned < total_cells {
                let end_of_block = (scanned + block).min(total_cells);
                while scanned < end_of_block {
                    let i = pos / m;
                    let j = pos % m;
                    if !basis.contains(i, j) {
                        let red = cost.at(i, j) - u[i] - v[j];
                        if red < best {
                            best = red;
                            entering = Some((i, j));
                        }
                    }
                    pos = (pos + 1) % total_cells;
                    scanned += 1;
                }
                if entering.is_some() {
                    scan_start = pos;
                    break;
                }
            }
        }

        let Some((ei, ej)) = entering else {
            // Optimal: assemble output.
            let mut flows: Vec<(usize, usize, f64)> = basis
                .cells
                .iter()
                .filter(|&&(_, _, f)| f > 0.0)
                .copied()
                .collect();
            flows.sort_by_key(|&(i, j, _)| (i, j));
            let value = flows.iter().map(|&(i, j, f)| f * cost.at(i, j)).sum();
            return Ok(SimplexOutput { flows, row_potential: u, col_potential: v, value });
        };

        // Unique cycle: entering + tree path, alternating +theta / -theta.
        let path = basis.path(ei, ej);
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for (pos, &cell) in path.iter().enumerate() {
            if pos % 2 == 0 {
                // Odd positions of the full cycle (entering is position 0).
                let (ci, cj, f) = basis.cells[cell];
                if f < theta || (f == theta && leaving.map_or(true, |l| (ci, cj) < (basis.cells[l].0, basis.cells[l].1))) {
                    theta = f;
                    leaving = Some(cell);
                }
            }
        }
        let leaving = leaving.expect("cycle has at least one decreasing cell");

        if theta <= 0.0 {
            consecutive_degenerate += 1;
            if consecutive_degenerate > n + m {
                bland = true;
            }
        } else {
            consecutive_degenerate = 0;
            bland = false;
        }

        for (pos, &cell) in path.iter().enumerate() {
            let sign = if pos % 2 == 0 { -1.0 } else { 1.0 };
            basis.cells[cell].2 = (basis.cells[cell].2 + sign * theta).max(0.0);
        }
        let (li, lj, _) = basis.cells[leaving];
        basis.in_basis[li * m + lj] = false;
        basis.in_basis[ei * m + ej] = true;
        basis.cells[leaving] = (ei, ej, theta);
    }

    Err(Error::InvalidSolverParameter("transportation simplex exceeded its pivot cap"))
}

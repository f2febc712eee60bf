//! Exact discrete optimal transport between two finite weighted point sets.
//!
//! [`solve_exact`] runs the transportation simplex: a north-west-corner
//! starting basis, dual potentials propagated over the basis spanning tree,
//! and cycle pivots. Entering cells follow the most negative reduced cost;
//! after a run of degenerate pivots the solver falls back to Bland's
//! smallest-index rule until progress resumes, which rules out cycling.

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on the total mass of each marginal.
pub const MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// Row-major `mu.len() x nu.len()` cost matrix.
    pub cost: Vec<f64>,
}

impl TransportProblem {
    pub fn new(mu: Vec<f64>, nu: Vec<f64>, cost: Vec<f64>) -> Result<Self> {
        let prob = Self { mu, nu, cost };
        prob.validate()?;
        Ok(prob)
    }

    /// Problem with cost `c(i, j)` evaluated on the full grid.
    pub fn from_fn(mu: Vec<f64>, nu: Vec<f64>, c: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let (m, n) = (mu.len(), nu.len());
        let cost = (0..m * n).map(|k| c(k / n, k % n)).collect();
        Self::new(mu, nu, cost)
    }

    pub fn rows(&self) -> usize {
        self.mu.len()
    }

    pub fn cols(&self) -> usize {
        self.nu.len()
    }

    pub fn cost_at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.nu.len() + j]
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = (self.mu.len(), self.nu.len());
        if m == 0 || n == 0 {
            return Err(Error::InvalidParams(
                "transport marginals must be non-empty".into(),
            ));
        }
        if self.cost.len() != m * n {
            return Err(Error::DimensionMismatch {
                expected: m * n,
                got: self.cost.len(),
            });
        }
        if self
            .mu
            .iter()
            .chain(&self.nu)
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::InvalidParams(
                "transport weights must be finite and nonnegative".into(),
            ));
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParams(
                "transport costs must be finite".into(),
            ));
        }
        let (sm, sn): (f64, f64) = (self.mu.iter().sum(), self.nu.iter().sum());
        if (sm - 1.0).abs() > MASS_TOL || (sn - 1.0).abs() > MASS_TOL {
            return Err(Error::Infeasible(format!(
                "marginal masses {sm} and {sn} are not both 1"
            )));
        }
        Ok(())
    }
}

/// An optimal basic plan with its dual certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Nonzero entries `(i, j, mass)` in row-major order.
    pub entries: Vec<(usize, usize, f64)>,
    pub objective: f64,
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

impl TransportPlan {
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for &(i, j, w) in &self.entries {
            out[i][j] = w;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(i, _, w) in &self.entries {
            s[i] += w;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for &(_, j, w) in &self.entries {
            s[j] += w;
        }
        s
    }
}

/// Basis cell of the simplex: a tree edge between row `i` and column `j`.
#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    flow: f64,
}

/// North-west-corner rule. Always returns exactly `m + n - 1` cells that
/// form a spanning tree of the row/column bipartite graph.
fn north_west_corner(mu: &[f64], nu: &[f64]) -> Vec<Cell> {
    let (m, n) = (mu.len(), nu.len());
    let (mut supply, mut demand) = (mu[0], nu[0]);
    let (mut i, mut j) = (0, 0);
    let mut basis = Vec::with_capacity(m + n - 1);
    loop {
        let flow = supply.min(demand).max(0.0);
        basis.push(Cell { i, j, flow });
        supply -= flow;
        demand -= flow;
        if i + 1 == m && j + 1 == n {
            break;
        }
        if j + 1 == n || (i + 1 < m && supply <= demand) {
            i += 1;
            supply = mu[i];
        } else {
            j += 1;
            demand = nu[j];
        }
    }
    basis
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basis cells.
fn potentials(prob: &TransportProblem, basis: &[Cell]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (prob.rows(), prob.cols());
    let adj = adjacency(m, n, basis);
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut stack = vec![0usize];
    while let Some(node) = stack.pop() {
        for &(other, k) in &adj[node] {
            let c = prob.cost_at(basis[k].i, basis[k].j);
            if node < m {
                let col = other - m;
                if v[col].is_nan() {
                    v[col] = c - u[node];
                    stack.push(other);
                }
            } else if u[other].is_nan() {
                u[other] = c - v[node - m];
                stack.push(other);
            }
        }
    }
    (u, v)
}

/// Graph nodes `0..m` are rows and `m..m+n` columns; each entry carries the
/// neighbour and the index of the basis cell on that edge.
fn adjacency(m: usize, n: usize, basis: &[Cell]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); m + n];
    for (k, c) in basis.iter().enumerate() {
        adj[c.i].push((m + c.j, k));
        adj[m + c.j].push((c.i, k));
    }
    adj
}

/// Basis cells on the tree path from row `i` to column `j`, in order.
fn tree_path(m: usize, n: usize, basis: &[Cell], i: usize, j: usize) -> Vec<usize> {
    let adj = adjacency(m, n, basis);
    let mut via = vec![usize::MAX; m + n];
    let mut prev = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    seen[i] = true;
    let mut queue = std::collections::VecDeque::from([i]);
    while let Some(node) = queue.pop_front() {
        if node == m + j {
            break;
        }
        for &(other, k) in &adj[node] {
            if !seen[other] {
                seen[other] = true;
                via[other] = k;
                prev[other] = node;
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = m + j;
    while node != i {
        path.push(via[node]);
        node = prev[node];
    }
    path.reverse();
    path
}

/// Solves the transport LP to an optimal vertex.
pub fn solve_exact(prob: &TransportProblem) -> Result<TransportPlan> {
    prob.validate()?;
    let (m, n) = (prob.rows(), prob.cols());
    let mut basis = north_west_corner(&prob.mu, &prob.nu);
    let scale = prob.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let eps = 1e-12 * scale;
    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let mut degenerate_run = 0usize;
    let mut in_basis = vec![false; m * n];
    for c in &basis {
        in_basis[c.i * n + c.j] = true;
    }

    for _ in 0..max_pivots {
        let (u, v) = potentials(prob, &basis);
        let bland = degenerate_run > m + n;
        let mut entering = None;
        let mut best = -eps;
        'scan: for i in 0..m {
            for j in 0..n {
                if in_basis[i * n + j] {
                    continue;
                }
                let r = prob.cost_at(i, j) - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(finish(prob, &basis, u, v));
        };

        // Path from row ei to column ej; signs alternate -, +, -, ... from
        // the row end, the entering cell itself being +.
        let path = tree_path(m, n, &basis, ei, ej);
        let mut leave = path[0];
        for &k in path.iter().step_by(2) {
            let (a, b) = (&basis[k], &basis[leave]);
            if a.flow < b.flow || (a.flow == b.flow && (a.i * n + a.j) < (b.i * n + b.j)) {
                leave = k;
            }
        }
        let theta = basis[leave].flow;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[k].flow = (basis[k].flow - theta).max(0.0);
            } else {
                basis[k].flow += theta;
            }
        }
        degenerate_run = if theta > 0.0 { 0 } else { degenerate_run + 1 };
        let old = basis[leave];
        in_basis[old.i * n + old.j] = false;
        in_basis[ei * n + ej] = true;
        basis[leave] = Cell {
            i: ei,
            j: ej,
            flow: theta,
        };
    }
    Err(Error::MaxIterations {
        iterations: max_pivots,
        residual: f64::NAN,
    })
}

fn finish(prob: &TransportProblem, basis: &[Cell], u: Vec<f64>, v: Vec<f64>) -> TransportPlan {
    let n = prob.cols();
    let mut entries: Vec<(usize, usize, f64)> = basis
        .iter()
        .filter(|c| c.flow > 0.0)
        .map(|c| (c.i, c.j, c.flow))
        .collect();
    entries.sort_by_key(|&(i, j, _)| i * n + j);
    let objective = entries
        .iter()
        .map(|&(i, j, w)| w * prob.cost_at(i, j))
        .sum();
    TransportPlan {
        rows: prob.rows(),
        cols: n,
        entries,
        objective,
        row_potentials: u,
        col_potentials: v,
    }
}

/// Monotone (quantile) coupling between two sorted one-dimensional
/// marginals with cost `|x - y|^p`, optimal for `p >= 1`.
pub fn solve_sorted_1d(
    x: &[f64],
    mu: &[f64],
    y: &[f64],
    nu: &[f64],
    p: f64,
) -> Result<TransportPlan> {
    if x.len() != mu.len() || y.len() != nu.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: mu.len(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParams(format!(
            "monotone coupling needs p >= 1, got {p}"
        )));
    }
    if x.windows(2).any(|w| !(w[0] <= w[1])) || y.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParams(
            "points must be sorted ascending".into(),
        ));
    }
    let prob =
        TransportProblem::from_fn(mu.to_vec(), nu.to_vec(), |i, j| (x[i] - y[j]).abs().powf(p))?;
    let basis = north_west_corner(&prob.mu, &prob.nu);
    let (u, v) = potentials(&prob, &basis);
    Ok(finish(&prob, &basis, u, v))
}

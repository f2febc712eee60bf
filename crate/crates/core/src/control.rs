//! Multistage convex control on a scenario tree.
//!
//! A predictable control carries one scalar per non-leaf node: the control
//! `a_t` used over `(t-1, t]` sits on the time-`(t-1)` node, so `a_1` is
//! attached to the root and is deterministic. The value
//! `v(P) = min_a E_P[f(X, a(X))]` over `a in [-L, L]` is a finite convex
//! program solved by diagonally scaled projected gradient with
//! Barzilai-Borwein trial steps and Armijo backtracking.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::audit::{relative_min_eigenvalue, CONVEXITY_TOL};
use crate::cost::{ControlledCost, CostModel};
use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

pub const DEFAULT_BOUND: f64 = 10.0;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;
const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_GRID_POINTS: f64 = 1e6;

/// Box `[-L, L]` for every control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub l: f64,
}

impl ControlBounds {
    pub fn new(l: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "control bound L = {l} must be positive and finite"
            )));
        }
        Ok(Self { l })
    }

    fn project(&self, v: f64) -> f64 {
        v.clamp(-self.l, self.l)
    }
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self { l: DEFAULT_BOUND }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// One control value per non-leaf node, in level order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlPolicy {
    pub nodes: Vec<NodeId>,
    pub values: Vec<f64>,
}

impl ControlPolicy {
    pub fn get(&self, node: NodeId) -> Option<f64> {
        self.nodes
            .iter()
            .position(|&n| n == node)
            .map(|k| self.values[k])
    }

    /// The controls `(a_1, ..., a_T)` read along the path to `leaf`.
    pub fn path_controls(&self, tree: &ScenarioTree, leaf: NodeId) -> Vec<f64> {
        let mut out = Vec::with_capacity(tree.horizon());
        let mut cur = leaf;
        while let Some(parent) = tree.parent(cur) {
            out.push(self.get(parent).expect("policy covers every non-leaf node"));
            cur = parent;
        }
        out.reverse();
        out
    }

    pub fn sup_distance(&self, other: &ControlPolicy) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueReport {
    pub value: f64,
    pub policy: ControlPolicy,
    /// Sup-norm of `theta - proj(theta - D^{-1} grad)` at return.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct PathData {
    prob: f64,
    x: Vec<f64>,
    /// Variable index of `a_t` along this path.
    vars: Vec<usize>,
}

/// The finite convex program behind [`solve_value`].
pub struct ControlProblem<'a> {
    tree: &'a ScenarioTree,
    cost: &'a dyn ControlledCost,
    bounds: ControlBounds,
    nodes: Vec<NodeId>,
    weights: Vec<f64>,
    paths: Vec<PathData>,
}

impl<'a> ControlProblem<'a> {
    pub fn new(
        tree: &'a ScenarioTree,
        model: &'a CostModel,
        bounds: ControlBounds,
    ) -> Result<Self> {
        if model.horizon() != tree.horizon() {
            return Err(Error::HorizonMismatch {
                left: tree.horizon(),
                right: model.horizon(),
            });
        }
        let cost = model.as_controlled()?;
        let nodes: Vec<NodeId> = (0..tree.horizon())
            .flat_map(|t| tree.level(t).iter().copied())
            .collect();
        let mut var_of = vec![usize::MAX; tree.len()];
        for (k, n) in nodes.iter().enumerate() {
            var_of[n.0] = k;
        }
        let weights = nodes.iter().map(|&n| tree.path_prob(n)).collect();
        let paths = tree
            .enumerate_paths()
            .paths
            .into_iter()
            .map(|e| {
                let nodes = tree.path_nodes(e.leaf);
                let vars = nodes
                    .iter()
                    .map(|&n| var_of[tree.parent(n).expect("non-root").0])
                    .collect();
                PathData {
                    prob: e.prob,
                    x: e.values,
                    vars,
                }
            })
            .collect();
        Ok(Self {
            tree,
            cost,
            bounds,
            nodes,
            weights,
            paths,
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    fn controls(&self, path: &PathData, theta: &[f64]) -> Vec<f64> {
        path.vars.iter().map(|&k| theta[k]).collect()
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.paths
            .iter()
            .map(|p| p.prob * self.cost.eval(&p.x, &self.controls(p, theta)))
            .sum()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for p in &self.paths {
            let ga = self.cost.grad_a(&p.x, &self.controls(p, theta));
            for (t, &k) in p.vars.iter().enumerate() {
                g[k] += p.prob * ga[t];
            }
        }
        g
    }

    /// `sum_paths prob * S^T H S` with `S` the path-to-variable selection.
    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for p in &self.paths {
            let hp = self.cost.hess_a(&p.x, &self.controls(p, theta));
            for (s, &i) in p.vars.iter().enumerate() {
                for (t, &j) in p.vars.iter().enumerate() {
                    h[(i, j)] += p.prob * hp[(s, t)];
                }
            }
        }
        h
    }

    /// Smallest eigenvalue of `D^{-1/2} H D^{-1/2}`, `D` the node
    /// probabilities: a positive value certifies strict convexity of the
    /// objective in the policy, hence uniqueness of the optimizer.
    pub fn min_curvature(&self, theta: &[f64]) -> f64 {
        let mut h = self.hessian(theta);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                h[(i, j)] /= (self.weights[i] * self.weights[j]).sqrt();
            }
        }
        SymmetricEigen::new(h).eigenvalues.min()
    }

    pub fn policy(&self, theta: &[f64]) -> ControlPolicy {
        ControlPolicy {
            nodes: self.nodes.clone(),
            values: theta.to_vec(),
        }
    }

    /// Path-wise Hessian spot check at the origin and a few random policies.
    fn check_convexity(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
        let mut samples = vec![vec![0.0; self.dim()]];
        for _ in 0..3 {
            samples.push(
                (0..self.dim())
                    .map(|_| rng.random_range(-self.bounds.l..self.bounds.l))
                    .collect(),
            );
        }
        for theta in &samples {
            for p in &self.paths {
                let eig = relative_min_eigenvalue(self.cost.hess_a(&p.x, &self.controls(p, theta)));
                if eig < CONVEXITY_TOL {
                    return Err(Error::NotConvex(format!(
                        "relative control Hessian eigenvalue {eig} on a sampled path"
                    )));
                }
            }
        }
        Ok(())
    }

    fn residual(&self, theta: &[f64], grad: &[f64]) -> f64 {
        theta
            .iter()
            .zip(grad)
            .zip(&self.weights)
            .map(|((&th, &g), &w)| (th - self.bounds.project(th - g / w)).abs())
            .fold(0.0, f64::max)
    }

    /// Projected gradient from `init`.
    pub fn solve_from(&self, init: &[f64], opts: &SolverOptions) -> Result<ValueReport> {
        if init.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: init.len(),
            });
        }
        let mut theta: Vec<f64> = init.iter().map(|&v| self.bounds.project(v)).collect();
        let mut value = self.objective(&theta);
        let mut grad = self.gradient(&theta);
        let mut step = 1.0;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for iter in 0..opts.max_iter {
            let residual = self.residual(&theta, &grad);
            if residual <= opts.tol {
                return Ok(ValueReport {
                    value,
                    policy: self.policy(&theta),
                    kkt_residual: residual,
                    iterations: iter,
                });
            }
            if let Some((old_theta, old_grad)) = &prev {
                // Barzilai-Borwein step in the metric D
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..self.dim() {
                    let s = theta[k] - old_theta[k];
                    ss += self.weights[k] * s * s;
                    sy += s * (grad[k] - old_grad[k]);
                }
                if sy > 0.0 && ss > 0.0 {
                    step = (ss / sy).clamp(1e-12, 1e12);
                }
            }
            let slack = 4.0 * f64::EPSILON * value.abs().max(1.0);
            let mut accepted = None;
            let mut alpha = step;
            for _ in 0..200 {
                let trial: Vec<f64> = theta
                    .iter()
                    .zip(&grad)
                    .zip(&self.weights)
                    .map(|((&th, &g), &w)| self.bounds.project(th - alpha * g / w))
                    .collect();
                let decrease: f64 = grad
                    .iter()
                    .zip(trial.iter().zip(&theta))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                let trial_value = self.objective(&trial);
                if trial_value <= value + ARMIJO * decrease + slack {
                    accepted = Some((trial, trial_value));
                    break;
                }
                alpha *= BACKTRACK;
            }
            let Some((next, next_value)) = accepted else {
                return Err(Error::MaxIterations {
                    iterations: iter,
                    residual,
                });
            };
            step = alpha;
            let next_grad = self.gradient(&next);
            prev = Some((
                std::mem::replace(&mut theta, next),
                std::mem::replace(&mut grad, next_grad),
            ));
            value = next_value;
        }
        Err(Error::MaxIterations {
            iterations: opts.max_iter,
            residual: self.residual(&theta, &grad),
        })
    }

    /// Exhaustive minimum over the uniform grid with `grid_n` points per
    /// variable; returns the value and a minimizing grid policy.
    pub fn grid_minimum(&self, grid_n: usize) -> Result<(f64, Vec<f64>)> {
        if grid_n < 2 {
            return Err(Error::InvalidParams(
                "grid needs at least two points".into(),
            ));
        }
        if (grid_n as f64).powi(self.dim() as i32) > MAX_GRID_POINTS {
            return Err(Error::TooLarge(format!(
                "{grid_n}^{} grid points exceed the limit of {MAX_GRID_POINTS}",
                self.dim()
            )));
        }
        let l = self.bounds.l;
        let grid: Vec<f64> = (0..grid_n)
            .map(|k| -l + 2.0 * l * k as f64 / (grid_n - 1) as f64)
            .collect();
        let mut idx = vec![0usize; self.dim()];
        let mut best = (f64::INFINITY, Vec::new());
        loop {
            let theta: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
            let v = self.objective(&theta);
            if v < best.0 {
                best = (v, theta);
            }
            // odometer increment
            let mut pos = 0;
            while pos < idx.len() && idx[pos] + 1 == grid_n {
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
            idx[pos] += 1;
        }
        Ok(best)
    }

    pub fn tree(&self) -> &ScenarioTree {
        self.tree
    }
}

/// `v(P)` and its unique optimizer, started from the zero policy.
pub fn solve_value(
    tree: &ScenarioTree,
    model: &CostModel,
    bounds: ControlBounds,
    opts: &SolverOptions,
) -> Result<ValueReport> {
    let prob = ControlProblem::new(tree, model, bounds)?;
    prob.check_convexity()?;
    prob.solve_from(&vec![0.0; prob.dim()], opts)
}

/// Grid minimum over `[-L, L]` per node; an upper bound on `v(P)`.
pub fn brute_force_value(
    tree: &ScenarioTree,
    model: &CostModel,
    bounds: ControlBounds,
    grid_n: usize,
) -> Result<f64> {
    Ok(ControlProblem::new(tree, model, bounds)?
        .grid_minimum(grid_n)?
        .0)
}

/// Result of re-solving from random starting policies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessWitness {
    pub restarts: usize,
    /// Largest sup-norm distance between any returned policy and the first.
    pub max_spread: f64,
    pub min_curvature: f64,
}

/// Re-solves from `restarts` random initial policies (seeded) and reports
/// the spread of the returned policies and the curvature at the first.
pub fn uniqueness_witness(
    tree: &ScenarioTree,
    model: &CostModel,
    bounds: ControlBounds,
    opts: &SolverOptions,
    restarts: usize,
    seed: u64,
) -> Result<UniquenessWitness> {
    let prob = ControlProblem::new(tree, model, bounds)?;
    prob.check_convexity()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inits: Vec<Vec<f64>> = (0..restarts)
        .map(|_| {
            (0..prob.dim())
                .map(|_| rng.random_range(-bounds.l..bounds.l))
                .collect()
        })
        .collect();
    let reports = inits
        .iter()
        .map(|init| prob.solve_from(init, opts))
        .collect::<Result<Vec<_>>>()?;
    let first = &reports[0].policy;
    Ok(UniquenessWitness {
        restarts,
        max_spread: reports
            .iter()
            .map(|r| r.policy.sup_distance(first))
            .fold(0.0, f64::max),
        min_curvature: prob.min_curvature(&first.values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::catalog::{
        build_utility_cost, LossFn, QuadraticTracking, TerminalSpec, UtilityModel,
    };
    use crate::cost::{ControlledSpec, CostModel};
    use crate::tree::{gen_binomial, gen_random};
    use std::sync::Arc;

    #[derive(Debug)]
    struct Shifted {
        target: f64,
    }

    impl ControlledCost for Shifted {
        fn eval(&self, x: &[f64], a: &[f64]) -> f64 {
            a.iter().map(|v| (v - self.target).powi(2)).sum::<f64>()
                + x.iter().map(|v| v * v).sum::<f64>()
        }

        fn grad_x(&self, x: &[f64], _a: &[f64]) -> Vec<f64> {
            x.iter().map(|v| 2.0 * v).collect()
        }

        fn grad_a(&self, _x: &[f64], a: &[f64]) -> Vec<f64> {
            a.iter().map(|v| 2.0 * (v - self.target)).collect()
        }

        fn hess_a(&self, x: &[f64], _a: &[f64]) -> DMatrix<f64> {
            DMatrix::identity(x.len(), x.len()) * 2.0
        }
    }

    #[test]
    fn separable_quadratic_has_zero_policy() {
        let tree = gen_random(2, 2, 5).unwrap();
        let model = CostModel::register_controlled(2, Arc::new(Shifted { target: 0.0 })).unwrap();
        let rep = solve_value(
            &tree,
            &model,
            ControlBounds::default(),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(rep.policy.values.iter().all(|v| v.abs() < 1e-9));
        let h: f64 = tree
            .enumerate_paths()
            .paths
            .iter()
            .map(|p| p.prob * p.values.iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!((rep.value - h).abs() < 1e-12);
        assert!(rep.kkt_residual <= 1e-9);
    }

    #[test]
    fn box_clamps_policy() {
        let tree = gen_random(3, 2, 6).unwrap();
        let model = CostModel::register_controlled(3, Arc::new(Shifted { target: 1.0 })).unwrap();
        let bounds = ControlBounds::new(0.5).unwrap();
        let rep = solve_value(&tree, &model, bounds, &SolverOptions::default()).unwrap();
        assert!(rep.policy.values.iter().all(|&v| v == 0.5));
        let h: f64 = tree
            .enumerate_paths()
            .paths
            .iter()
            .map(|p| p.prob * p.values.iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert!((rep.value - h - 3.0 * 0.25).abs() < 1e-12);
    }

    fn scalar_utility(payoff: TerminalSpec) -> CostModel {
        let u = UtilityModel {
            loss: LossFn::Quadratic,
            payoff,
            x0: 0.0,
        };
        build_utility_cost(&u, 1).unwrap()
    }

    #[test]
    fn scalar_utility_examples() {
        let tree = gen_binomial(1, 0.0, 1.0, -1.0, 0.6, 0.0).unwrap();
        let opts = SolverOptions::default();
        let zero = scalar_utility(TerminalSpec::Constant { value: 0.0 });
        let rep = solve_value(&tree, &zero, ControlBounds::default(), &opts).unwrap();
        assert!(rep.policy.values[0].abs() < 1e-9 && rep.value.abs() < 1e-12);

        let drifted = scalar_utility(TerminalSpec::Linear { c: vec![1.0] });
        let rep = solve_value(&tree, &drifted, ControlBounds::default(), &opts).unwrap();
        assert!((rep.policy.values[0] + 1.0).abs() < 1e-9);
        assert!(rep.value.abs() < 1e-12);
        let brute = brute_force_value(&tree, &drifted, ControlBounds::default(), 41).unwrap();
        assert!(brute.abs() < 1e-12);
    }

    #[test]
    fn solve_never_exceeds_grid_minimum() {
        let tree = gen_random(2, 2, 8).unwrap();
        let model = ControlledSpec::QuadraticTracking(QuadraticTracking {
            kappa: 1.0,
            beta: 0.3,
            hedge: 1.0,
            x0: 0.0,
            payoff: None,
        })
        .build(2)
        .unwrap();
        let bounds = ControlBounds::new(2.0).unwrap();
        let rep = solve_value(&tree, &model, bounds, &SolverOptions::default()).unwrap();
        let brute = brute_force_value(&tree, &model, bounds, 41).unwrap();
        assert!(rep.value <= brute + 1e-12);
        assert!(brute - rep.value < 0.01);
    }

    #[test]
    fn restarts_agree() {
        let tree = gen_random(2, 2, 12).unwrap();
        let u = UtilityModel {
            loss: LossFn::Exponential { gamma: 1.0 },
            payoff: TerminalSpec::AsianCall {
                strike: 0.0,
                smoothing: 0.5,
            },
            x0: 0.0,
        };
        let model = build_utility_cost(&u, 2).unwrap();
        let w = uniqueness_witness(
            &tree,
            &model,
            ControlBounds::default(),
            &SolverOptions::default(),
            16,
            3,
        )
        .unwrap();
        assert!(w.max_spread < 1e-6, "{w:?}");
        assert!(w.min_curvature > 0.0);
    }

    #[test]
    fn grid_limit() {
        let tree = gen_random(3, 3, 1).unwrap();
        let model = CostModel::register_controlled(3, Arc::new(Shifted { target: 0.0 })).unwrap();
        assert!(matches!(
            brute_force_value(&tree, &model, ControlBounds::default(), 11),
            Err(Error::TooLarge(_))
        ));
    }
}

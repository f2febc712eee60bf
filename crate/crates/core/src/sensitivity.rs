//! First-order sensitivities of expectations, control values and stopping
//! values with respect to adapted Wasserstein perturbations.
//!
//! Every problem class reduces to the same object: an integrand
//! `h_t(x) = d/dx_t f(x, .)` evaluated along each path (at the optimal
//! control or stopping time where applicable), its adapted projection
//! `F_t = E[h_t | F_t]`, and the `l^q(L^q)` norm
//! `(sum_t E|F_t|^q)^{1/q}`, which is the slope of the worst-case value at
//! radius zero. The direction `Z` attaining the Hölder equalities is built
//! explicitly and turned into a perturbed model.

use serde::{Deserialize, Serialize};

use crate::adapted::{bicausalize, AwParams, CouplingTree, Direction};
use crate::control::{solve_value, ControlBounds, ControlPolicy, SolverOptions};
use crate::cost::catalog::build_utility_cost;
use crate::cost::{Argument, CostModel, ScalarFn, UtilityModel};
use crate::error::{Error, Result};
use crate::stopping::{solve_stopping, StoppingPolicy};
use crate::tree::{NodeId, ScenarioTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    Terminal,
    Control,
    Stopping,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub problem_class: ProblemClass,
    pub p: f64,
    pub q: f64,
    /// `F_t` on the time-`t` nodes, `f_process[t - 1]` aligned with
    /// `tree.level(t)`.
    #[serde(rename = "F")]
    pub f_process: Vec<Vec<f64>>,
    /// `E|F_t|^q` per stage.
    pub stage_qnorms: Vec<f64>,
    pub first_order: f64,
}

impl SensitivityReport {
    /// Builds the report from per-leaf integrands `h[leaf][t - 1]`.
    pub fn from_leaf_integrands(
        tree: &ScenarioTree,
        h: &[Vec<f64>],
        params: AwParams,
        problem_class: ProblemClass,
    ) -> Result<Self> {
        let q = params.q();
        let mut f_process = Vec::with_capacity(tree.horizon());
        let mut stage_qnorms = Vec::with_capacity(tree.horizon());
        for t in 1..=tree.horizon() {
            let leaf_vals: Vec<f64> = h.iter().map(|row| row[t - 1]).collect();
            let f_t = tree.conditional_expectation(&leaf_vals, t)?;
            stage_qnorms.push(
                tree.level(t)
                    .iter()
                    .zip(&f_t)
                    .map(|(&n, f)| tree.path_prob(n) * f.abs().powf(q))
                    .sum(),
            );
            f_process.push(f_t);
        }
        let first_order = stage_qnorms.iter().sum::<f64>().powf(1.0 / q);
        Ok(Self {
            problem_class,
            p: params.p(),
            q,
            f_process,
            stage_qnorms,
            first_order,
        })
    }

    /// `F` indexed by node id (0 at the root).
    pub fn node_values(&self, tree: &ScenarioTree) -> Vec<f64> {
        let mut out = vec![0.0; tree.len()];
        for (t, row) in self.f_process.iter().enumerate() {
            for (&n, &v) in tree.level(t + 1).iter().zip(row) {
                out[n.0] = v;
            }
        }
        out
    }
}

fn check_horizon(tree: &ScenarioTree, model: &CostModel) -> Result<()> {
    if tree.horizon() != model.horizon() {
        return Err(Error::HorizonMismatch {
            left: tree.horizon(),
            right: model.horizon(),
        });
    }
    Ok(())
}

/// Slope of `sup_{Q in B_r(P)} E_Q[f]` at `r = 0`.
pub fn sensitivity_terminal(
    tree: &ScenarioTree,
    model: &CostModel,
    params: AwParams,
) -> Result<SensitivityReport> {
    check_horizon(tree, model)?;
    let h = tree
        .leaves()
        .iter()
        .map(|&l| model.grad_x(&tree.path_values(l), Argument::None))
        .collect::<Result<Vec<_>>>()?;
    SensitivityReport::from_leaf_integrands(tree, &h, params, ProblemClass::Terminal)
}

/// Integrand of the control class at a given policy.
pub fn sensitivity_at_policy(
    tree: &ScenarioTree,
    model: &CostModel,
    policy: &ControlPolicy,
    params: AwParams,
) -> Result<SensitivityReport> {
    check_horizon(tree, model)?;
    let h = tree
        .leaves()
        .iter()
        .map(|&l| {
            model.grad_x(
                &tree.path_values(l),
                Argument::Control(&policy.path_controls(tree, l)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SensitivityReport::from_leaf_integrands(tree, &h, params, ProblemClass::Control)
}

/// Slope of the worst-case control value `v` at `r = 0`, evaluated at the
/// optimal policy.
pub fn sensitivity_control(
    tree: &ScenarioTree,
    model: &CostModel,
    bounds: ControlBounds,
    params: AwParams,
    opts: &SolverOptions,
) -> Result<SensitivityReport> {
    let report = solve_value(tree, model, bounds, opts)?;
    sensitivity_at_policy(tree, model, &report.policy, params)
}

/// Integrand of the stopping class at a given stopping time.
pub fn sensitivity_at_stopping(
    tree: &ScenarioTree,
    model: &CostModel,
    policy: &StoppingPolicy,
    params: AwParams,
) -> Result<SensitivityReport> {
    check_horizon(tree, model)?;
    let h = tree
        .leaves()
        .iter()
        .zip(&policy.tau)
        .map(|(&l, &tau)| model.grad_x(&tree.path_values(l), Argument::Time(tau)))
        .collect::<Result<Vec<_>>>()?;
    SensitivityReport::from_leaf_integrands(tree, &h, params, ProblemClass::Stopping)
}

/// Slope of the worst-case stopping value at `r = 0`; requires a unique
/// optimal stopping time.
pub fn sensitivity_stopping(
    tree: &ScenarioTree,
    model: &CostModel,
    params: AwParams,
    tol: f64,
) -> Result<SensitivityReport> {
    let sol = solve_stopping(tree, model, tol)?;
    sensitivity_at_stopping(tree, model, &sol.policy, params)
}

/// `E[|g'(X_tau)|^q]^{1/q}` for a Markovian stopping cost `g(x_t)`.
pub fn markov_stopping_shortcut(
    tree: &ScenarioTree,
    g: &ScalarFn,
    policy: &StoppingPolicy,
    params: AwParams,
) -> f64 {
    let q = params.q();
    tree.leaves()
        .iter()
        .map(|&l| {
            let stop = policy.stop_node(tree, l);
            tree.path_prob(l) * g.derivative(tree.value(stop)).abs().powf(q)
        })
        .sum::<f64>()
        .powf(1.0 / q)
}

/// The utility-maximization sensitivity written through the loss:
/// `V_t = (a*_{t+1} - a*_t) E[l'(Z) | F_t] - E[l'(Z) d_t g(X) | F_t]`
/// with `Z = g(X) + sum_t a*_t (X_t - X_{t-1})` and `a*_{T+1} = 0`.
///
/// Requires `X_t != X_{t-1}` on every atom (with `X_0 = x0`).
pub fn utility_loss_sensitivity(
    tree: &ScenarioTree,
    utility: &UtilityModel,
    bounds: ControlBounds,
    params: AwParams,
    opts: &SolverOptions,
) -> Result<SensitivityReport> {
    for n in tree.nodes().iter().filter(|n| n.time > 0) {
        let prev = match n.parent {
            Some(p) if tree.time(p) > 0 => tree.value(p),
            _ => utility.x0,
        };
        if tree.value(n.id) == prev {
            return Err(Error::FlatStep { node: n.id.0 });
        }
    }
    let model = build_utility_cost(utility, tree.horizon())?;
    let policy = solve_value(tree, &model, bounds, opts)?.policy;
    let horizon = tree.horizon();
    let mut dl = Vec::with_capacity(tree.leaves().len());
    let mut dl_dg = Vec::with_capacity(tree.leaves().len());
    for &leaf in tree.leaves() {
        let x = tree.path_values(leaf);
        let z = utility.argument(&x, &policy.path_controls(tree, leaf));
        let d1 = utility.loss.eval3(z).1;
        dl.push(d1);
        dl_dg.push(
            crate::cost::TerminalCost::grad_x(&utility.payoff, &x)
                .into_iter()
                .map(|g| d1 * g)
                .collect::<Vec<_>>(),
        );
    }
    let mut h = vec![vec![0.0; horizon]; tree.leaves().len()];
    let mut f_process = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let e_dl = tree.conditional_expectation(&dl, t)?;
        let col: Vec<f64> = dl_dg.iter().map(|r| r[t - 1]).collect();
        let e_dl_dg = tree.conditional_expectation(&col, t)?;
        let v_t: Vec<f64> = tree
            .level(t)
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let next = if t < horizon {
                    policy.get(n).expect("non-leaf")
                } else {
                    0.0
                };
                let cur = policy
                    .get(tree.parent(n).expect("non-root"))
                    .expect("non-leaf");
                (next - cur) * e_dl[k] - e_dl_dg[k]
            })
            .collect();
        f_process.push(v_t);
    }
    // lift to leaves only to reuse the aggregation; V_t is already adapted
    for (t, v_t) in f_process.iter().enumerate() {
        let lifted = tree.lift_to_leaves(v_t, t + 1);
        for (row, v) in h.iter_mut().zip(lifted) {
            row[t] = v;
        }
    }
    let mut report =
        SensitivityReport::from_leaf_integrands(tree, &h, params, ProblemClass::Control)?;
    report.f_process = f_process;
    Ok(report)
}

/// The Hölder-dual direction attaining `sum_t E[F_t Z_t] = first_order`
/// with `sum_t E|Z_t|^p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCaseDirection {
    /// `Z_t` aligned with `tree.level(t)`, `z[t - 1]`.
    #[serde(rename = "Z")]
    pub z: Vec<Vec<f64>>,
    pub stage_weights: Vec<f64>,
    /// `sum_t E|Z_t|^p`.
    pub norm_check: f64,
    /// `sum_t E[F_t Z_t]`.
    pub pairing: f64,
    /// Set when `first_order = 0`; then `Z = 0`.
    pub degenerate: bool,
}

impl WorstCaseDirection {
    /// `Z` indexed by node id (0 at the root).
    pub fn node_values(&self, tree: &ScenarioTree) -> Vec<f64> {
        let mut out = vec![0.0; tree.len()];
        for (t, row) in self.z.iter().enumerate() {
            for (&n, &v) in tree.level(t + 1).iter().zip(row) {
                out[n.0] = v;
            }
        }
        out
    }
}

/// Equality case of the two Hölder inequalities: stage weights
/// `a_t = u_t^{q/p} / (sum_s u_s^q)^{1/p}` with `u_t = (E|F_t|^q)^{1/q}`,
/// and `Z_t = a_t sign(F_t) |F_t|^{q-1} / u_t^{q-1}`.
pub fn worst_case_direction(
    tree: &ScenarioTree,
    report: &SensitivityReport,
) -> Result<WorstCaseDirection> {
    if report.f_process.len() != tree.horizon() {
        return Err(Error::DimensionMismatch {
            expected: tree.horizon(),
            got: report.f_process.len(),
        });
    }
    let (p, q) = (report.p, report.q);
    let total: f64 = report.stage_qnorms.iter().sum();
    if !(total > 0.0) {
        return Ok(WorstCaseDirection {
            z: report
                .f_process
                .iter()
                .map(|row| vec![0.0; row.len()])
                .collect(),
            stage_weights: vec![0.0; tree.horizon()],
            norm_check: 0.0,
            pairing: 0.0,
            degenerate: true,
        });
    }
    let u: Vec<f64> = report
        .stage_qnorms
        .iter()
        .map(|s| s.powf(1.0 / q))
        .collect();
    let stage_weights: Vec<f64> = u
        .iter()
        .map(|ut| ut.powf(q / p) / total.powf(1.0 / p))
        .collect();
    let z: Vec<Vec<f64>> = report
        .f_process
        .iter()
        .enumerate()
        .map(|(t, row)| {
            row.iter()
                .map(|&f| {
                    if u[t] > 0.0 {
                        stage_weights[t] * f.signum() * f.abs().powf(q - 1.0) / u[t].powf(q - 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let (mut norm_check, mut pairing) = (0.0, 0.0);
    for t in 1..=tree.horizon() {
        for (k, &n) in tree.level(t).iter().enumerate() {
            let w = tree.path_prob(n);
            norm_check += w * z[t - 1][k].abs().powf(p);
            pairing += w * report.f_process[t - 1][k] * z[t - 1][k];
        }
    }
    Ok(WorstCaseDirection {
        z,
        stage_weights,
        norm_check,
        pairing,
        degenerate: false,
    })
}

/// A perturbed second model together with the coupling certifying its
/// distance to the first.
#[derive(Debug, Clone)]
pub struct PerturbedModel {
    pub tree: ScenarioTree,
    pub coupling: CouplingTree,
    /// Whether sibling collisions forced the bicausalization step.
    pub bicausalized: bool,
}

/// The model of `X + shift(X)` for a node-indexed (hence adapted) shift.
///
/// Paths that land on equal values are merged; if that breaks causality
/// of the Monge coupling from the new model back to `tree`, the coupling is
/// repaired by [`bicausalize`] with the given `delta` (skipped for
/// `delta = 0`).
pub fn shifted_model(tree: &ScenarioTree, shift: &[f64], delta: f64) -> Result<PerturbedModel> {
    if shift.len() != tree.len() {
        return Err(Error::DimensionMismatch {
            expected: tree.len(),
            got: shift.len(),
        });
    }
    let shifted_paths: Vec<(Vec<f64>, f64)> = tree
        .leaves()
        .iter()
        .map(|&l| {
            let values = tree
                .path_nodes(l)
                .iter()
                .map(|&n| tree.value(n) + shift[n.0] + 0.0)
                .collect();
            (values, tree.path_prob(l))
        })
        .collect();
    let perturbed = ScenarioTree::from_weighted_paths(tree.horizon(), &shifted_paths)?;
    let masses: Vec<(NodeId, NodeId, f64)> = tree
        .leaves()
        .iter()
        .zip(&shifted_paths)
        .map(|(&l, (path, w))| {
            (
                l,
                perturbed.find_path(path).expect("shifted path is present"),
                *w,
            )
        })
        .collect();
    let coupling = CouplingTree::from_leaf_masses(tree, &perturbed, &masses)?;
    if delta == 0.0 || coupling.check_causal(Direction::YtoX) {
        return Ok(PerturbedModel {
            tree: perturbed,
            coupling,
            bicausalized: false,
        });
    }
    let (coupling, perturbed) = bicausalize(&coupling, delta)?;
    Ok(PerturbedModel {
        tree: perturbed,
        coupling,
        bicausalized: true,
    })
}

/// The model of `X + r Z`. Its adapted distance to `tree` is at most
/// `r + delta T^{1/p}` (in fact `r + delta T^{1/p} / 2`).
pub fn perturbed_model(
    tree: &ScenarioTree,
    direction: &WorstCaseDirection,
    r: f64,
    delta: f64,
) -> Result<PerturbedModel> {
    if !(r >= 0.0 && r.is_finite()) || !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "radius {r} and delta {delta} must be nonnegative"
        )));
    }
    let shift: Vec<f64> = direction
        .node_values(tree)
        .into_iter()
        .map(|z| r * z)
        .collect();
    shifted_model(tree, &shift, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapted::aw_distance;
    use crate::cost::{LossFn, StoppingSpec, TerminalSpec};
    use crate::stopping::DEFAULT_STOPPING_TOL;
    use crate::tree::gen_binomial;

    fn p2() -> AwParams {
        AwParams::new(2.0).unwrap()
    }

    #[test]
    fn linear_cost_first_order() {
        let tree = crate::tree::gen_random(2, 2, 3).unwrap();
        let model = TerminalSpec::Linear { c: vec![1.0, 1.0] }.build(2).unwrap();
        let rep = sensitivity_terminal(&tree, &model, p2()).unwrap();
        assert!((rep.first_order - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_cost_has_zero_slope() {
        let tree = crate::tree::gen_random(2, 2, 3).unwrap();
        let model = TerminalSpec::Constant { value: 3.0 }.build(2).unwrap();
        let rep = sensitivity_terminal(&tree, &model, p2()).unwrap();
        assert_eq!(rep.first_order, 0.0);
        assert!(worst_case_direction(&tree, &rep).unwrap().degenerate);
    }

    #[test]
    fn product_cost_on_martingale() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let model = TerminalSpec::Product {
            i: 1,
            j: 2,
            scale: 1.0,
        }
        .build(2)
        .unwrap();
        let rep = sensitivity_terminal(&tree, &model, p2()).unwrap();
        // F_1 = E[X_2 | X_1] = X_1 and F_2 = X_1
        assert_eq!(rep.f_process[0], vec![1.0, -1.0]);
        assert!((rep.first_order - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn drifted_stopping_sensitivity() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, -0.1).unwrap();
        let spec = StoppingSpec::Markov {
            g: ScalarFn::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
        };
        let model = spec.build(2).unwrap();
        let rep = sensitivity_stopping(&tree, &model, p2(), DEFAULT_STOPPING_TOL).unwrap();
        assert_eq!(rep.f_process[0], vec![0.0, 0.0]);
        assert!((rep.first_order - 1.0).abs() < 1e-15);
        let sol = solve_stopping(&tree, &model, DEFAULT_STOPPING_TOL).unwrap();
        let shortcut =
            markov_stopping_shortcut(&tree, spec.markov_payoff().unwrap(), &sol.policy, p2());
        assert!((shortcut - rep.first_order).abs() < 1e-15);
    }

    #[test]
    fn hoelder_direction_for_last_stage() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let model = TerminalSpec::Linear { c: vec![0.0, 1.0] }.build(2).unwrap();
        let rep = sensitivity_terminal(&tree, &model, p2()).unwrap();
        let dir = worst_case_direction(&tree, &rep).unwrap();
        assert_eq!(dir.stage_weights, vec![0.0, 1.0]);
        assert!(dir.z[1].iter().all(|&z| z == 1.0));
        assert!((dir.norm_check - 1.0).abs() < 1e-15);

        let q = perturbed_model(&tree, &dir, 0.3, 0.003).unwrap();
        assert!(!q.bicausalized);
        let ep: f64 = tree
            .leaves()
            .iter()
            .map(|&l| tree.path_prob(l) * tree.value(l))
            .sum();
        let eq: f64 = q
            .tree
            .leaves()
            .iter()
            .map(|&l| q.tree.path_prob(l) * q.tree.value(l))
            .sum();
        assert!((eq - ep - 0.3).abs() < 1e-12);
        let d = aw_distance(&tree, &q.tree, p2()).unwrap().distance;
        assert!(d <= 0.3 + 1e-9);
    }

    #[test]
    fn zero_radius_returns_model() {
        let tree = crate::tree::gen_random(2, 2, 1).unwrap();
        let model = TerminalSpec::Linear { c: vec![1.0, -1.0] }
            .build(2)
            .unwrap();
        let dir = worst_case_direction(&tree, &sensitivity_terminal(&tree, &model, p2()).unwrap())
            .unwrap();
        let q = perturbed_model(&tree, &dir, 0.0, 0.0).unwrap();
        assert!(q.tree.isomorphic(&tree));
    }

    #[test]
    fn flat_step_detected() {
        let mut b = crate::tree::TreeBuilder::new(2);
        let n = b.add_child(b.root(), 1.0, 1.0);
        b.add_child(n, 1.0, 0.5);
        b.add_child(n, 2.0, 0.5);
        let tree = b.build().unwrap();
        let u = UtilityModel {
            loss: LossFn::Quadratic,
            payoff: TerminalSpec::Constant { value: 0.0 },
            x0: 0.0,
        };
        assert!(matches!(
            utility_loss_sensitivity(
                &tree,
                &u,
                ControlBounds::default(),
                p2(),
                &SolverOptions::default()
            ),
            Err(Error::FlatStep { .. })
        ));
    }

    #[test]
    fn loss_formula_agrees_with_control_sensitivity() {
        let tree = gen_binomial(2, 0.0, 1.0, -0.5, 0.4, 0.1).unwrap();
        let u = UtilityModel {
            loss: LossFn::Exponential { gamma: 0.8 },
            payoff: TerminalSpec::AsianCall {
                strike: 0.1,
                smoothing: 0.3,
            },
            x0: 0.0,
        };
        let model = build_utility_cost(&u, 2).unwrap();
        let opts = SolverOptions::default();
        let direct =
            sensitivity_control(&tree, &model, ControlBounds::default(), p2(), &opts).unwrap();
        let via_loss =
            utility_loss_sensitivity(&tree, &u, ControlBounds::default(), p2(), &opts).unwrap();
        assert!(
            (direct.first_order - via_loss.first_order).abs() <= 1e-8 * direct.first_order.max(1.0)
        );
    }
}

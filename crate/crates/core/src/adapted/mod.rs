//! Adapted Wasserstein distance between scenario trees.
//!
//! The distance is computed by backward recursion over pairs of nodes: the
//! value of a leaf pair is 0, and the value of a pair of time-`(t-1)` nodes
//! is an optimal transport between their conditional child distributions
//! with cost `|x - y|^p` plus the value of the child pair. Gluing the
//! per-pair optimal plans gives an optimal bicausal coupling.

mod bicausal;
mod coupling;
mod oracle;

pub use bicausal::bicausalize;
pub use coupling::{CouplingTree, Direction, PairNode, CAUSAL_TOL, MARGINAL_TOL};
pub use oracle::brute_force_bicausal;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::{solve_exact, solve_sorted_1d, TransportPlan, TransportProblem};
use crate::tree::{NodeId, ScenarioTree};

/// Order `p > 1` of the distance; the conjugate exponent is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AwParams {
    p: f64,
}

impl AwParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "order p = {p} must be finite and > 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Conjugate Hölder exponent `p / (p - 1)`.
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

impl TryFrom<f64> for AwParams {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        Self::new(p)
    }
}

impl From<AwParams> for f64 {
    fn from(params: AwParams) -> f64 {
        params.p
    }
}

#[derive(Debug, Clone)]
pub struct AwResult {
    pub distance: f64,
    pub pth_power: f64,
    /// `E_pi[|X_t - Y_t|^p]` under the returned coupling, `t = 1..=T`.
    pub per_stage_costs: Vec<f64>,
    pub coupling: CouplingTree,
}

/// `AW_p(P, Q)` with an optimal bicausal coupling.
pub fn aw_distance(
    first: &ScenarioTree,
    second: &ScenarioTree,
    params: AwParams,
) -> Result<AwResult> {
    let (pth_power, plans) = recursion(first, second, params.p(), true)?;
    let coupling = glue(first, second, &plans);
    Ok(AwResult {
        distance: pth_power.powf(1.0 / params.p()),
        pth_power,
        per_stage_costs: coupling.stage_costs(params.p()),
        coupling,
    })
}

/// `AW_p(P, Q)^p` without assembling the coupling.
pub fn aw_pth_power(first: &ScenarioTree, second: &ScenarioTree, params: AwParams) -> Result<f64> {
    Ok(recursion(first, second, params.p(), false)?.0)
}

/// Ordinary Wasserstein-`p` distance between the laws on `R^T`, ignoring
/// the filtrations: one transport problem over paths with cost
/// `sum_t |x_t - y_t|^p`. Returns the `p`-th power.
pub fn flat_wasserstein_pth_power(
    first: &ScenarioTree,
    second: &ScenarioTree,
    params: AwParams,
) -> Result<f64> {
    check_horizons(first, second)?;
    let (pa, pb) = (first.enumerate_paths(), second.enumerate_paths());
    let prob = TransportProblem::from_fn(
        pa.paths.iter().map(|e| e.prob).collect(),
        pb.paths.iter().map(|e| e.prob).collect(),
        |i, j| {
            pa.paths[i]
                .values
                .iter()
                .zip(&pb.paths[j].values)
                .map(|(x, y)| (x - y).abs().powf(params.p()))
                .sum()
        },
    )?;
    Ok(solve_exact(&prob)?.objective)
}

pub fn flat_wasserstein(
    first: &ScenarioTree,
    second: &ScenarioTree,
    params: AwParams,
) -> Result<f64> {
    Ok(flat_wasserstein_pth_power(first, second, params)?.powf(1.0 / params.p()))
}

fn check_horizons(first: &ScenarioTree, second: &ScenarioTree) -> Result<()> {
    if first.horizon() != second.horizon() {
        return Err(Error::HorizonMismatch {
            left: first.horizon(),
            right: second.horizon(),
        });
    }
    Ok(())
}

/// Per-level optimal plans, `plans[t][i * |level_Q(t)| + j]` for the pair
/// `(level_P(t)[i], level_Q(t)[j])`.
type LevelPlans = Vec<Vec<TransportPlan>>;

fn recursion(
    first: &ScenarioTree,
    second: &ScenarioTree,
    p: f64,
    keep_plans: bool,
) -> Result<(f64, LevelPlans)> {
    check_horizons(first, second)?;
    let horizon = first.horizon();
    let mut plans: LevelPlans = vec![Vec::new(); horizon];
    let mut value = vec![0.0; first.level(horizon).len() * second.level(horizon).len()];
    for t in (0..horizon).rev() {
        let (la, lb) = (first.level(t), second.level(t));
        let width = second.level(t + 1).len();
        let final_stage = t + 1 == horizon;
        let next = &value;
        let solved: Vec<TransportPlan> = (0..la.len() * lb.len())
            .into_par_iter()
            .map(|k| {
                let (a, b) = (la[k / lb.len()], lb[k % lb.len()]);
                if final_stage {
                    monotone_stage(first, second, a, b, p)
                } else {
                    let (ca, cb) = (first.children(a), second.children(b));
                    let prob = TransportProblem::from_fn(
                        ca.iter().map(|&c| first.node(c).cond_prob).collect(),
                        cb.iter().map(|&c| second.node(c).cond_prob).collect(),
                        |i, j| {
                            let (x, y) = (ca[i], cb[j]);
                            (first.value(x) - second.value(y)).abs().powf(p)
                                + next[first.level_pos(x) * width + second.level_pos(y)]
                        },
                    )?;
                    solve_exact(&prob)
                }
            })
            .collect::<Result<_>>()?;
        value = solved.iter().map(|plan| plan.objective).collect();
        if keep_plans {
            plans[t] = solved;
        }
    }
    Ok((value[0], plans))
}

/// Last-stage transport between child distributions: the monotone coupling
/// of the sorted children, reported in the original child order.
fn monotone_stage(
    first: &ScenarioTree,
    second: &ScenarioTree,
    a: NodeId,
    b: NodeId,
    p: f64,
) -> Result<TransportPlan> {
    let sorted = |tree: &ScenarioTree, n: NodeId| {
        let mut kids: Vec<(usize, NodeId)> = tree.children(n).iter().copied().enumerate().collect();
        kids.sort_by(|u, v| tree.value(u.1).total_cmp(&tree.value(v.1)));
        kids
    };
    let (ka, kb) = (sorted(first, a), sorted(second, b));
    let xs: Vec<f64> = ka.iter().map(|k| first.value(k.1)).collect();
    let ys: Vec<f64> = kb.iter().map(|k| second.value(k.1)).collect();
    let mu: Vec<f64> = ka.iter().map(|k| first.node(k.1).cond_prob).collect();
    let nu: Vec<f64> = kb.iter().map(|k| second.node(k.1).cond_prob).collect();
    let plan = solve_sorted_1d(&xs, &mu, &ys, &nu, p)?;
    let mut entries: Vec<(usize, usize, f64)> = plan
        .entries
        .iter()
        .map(|&(i, j, w)| (ka[i].0, kb[j].0, w))
        .collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    let mut row_potentials = vec![0.0; ka.len()];
    let mut col_potentials = vec![0.0; kb.len()];
    for (pos, k) in ka.iter().enumerate() {
        row_potentials[k.0] = plan.row_potentials[pos];
    }
    for (pos, k) in kb.iter().enumerate() {
        col_potentials[k.0] = plan.col_potentials[pos];
    }
    Ok(TransportPlan {
        entries,
        row_potentials,
        col_potentials,
        ..plan
    })
}

fn glue(first: &ScenarioTree, second: &ScenarioTree, plans: &LevelPlans) -> CouplingTree {
    let mut pairs = vec![PairNode {
        x: first.root(),
        y: second.root(),
        time: 0,
        cond_prob: 1.0,
        mass: 1.0,
        parent: None,
    }];
    let mut k = 0;
    while k < pairs.len() {
        let (a, b, t, mass) = (pairs[k].x, pairs[k].y, pairs[k].time, pairs[k].mass);
        if t < first.horizon() {
            let width = second.level(t).len();
            let plan = &plans[t][first.level_pos(a) * width + second.level_pos(b)];
            let (ca, cb) = (first.children(a), second.children(b));
            for &(i, j, w) in &plan.entries {
                pairs.push(PairNode {
                    x: ca[i],
                    y: cb[j],
                    time: t + 1,
                    cond_prob: w,
                    mass: mass * w,
                    parent: Some(k),
                });
            }
        }
        k += 1;
    }
    CouplingTree::from_pairs(first.clone(), second.clone(), pairs)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tree::{gen_binomial, gen_random, TreeBuilder};

    pub(crate) fn gap_pair() -> (ScenarioTree, ScenarioTree) {
        let mut b = TreeBuilder::new(2);
        let n = b.add_child(b.root(), 0.0, 1.0);
        b.add_child(n, 1.0, 0.5);
        b.add_child(n, -1.0, 0.5);
        let p = b.build().unwrap();
        let mut b = TreeBuilder::new(2);
        let u = b.add_child(b.root(), 0.1, 0.5);
        let d = b.add_child(b.root(), -0.1, 0.5);
        b.add_child(u, 1.0, 1.0);
        b.add_child(d, -1.0, 1.0);
        (p, b.build().unwrap())
    }

    #[test]
    fn identical_trees_have_zero_distance() {
        let p = gen_random(3, 2, 9).unwrap();
        let res = aw_distance(&p, &p, AwParams::new(2.0).unwrap()).unwrap();
        assert_eq!(res.pth_power, 0.0);
        assert!(res
            .coupling
            .leaf_masses()
            .iter()
            .all(|&(a, b, _)| p.path_values(a) == p.path_values(b)));
    }

    #[test]
    fn adapted_gap_example() {
        let (p, q) = gap_pair();
        let params = AwParams::new(2.0).unwrap();
        let res = aw_distance(&p, &q, params).unwrap();
        assert!((res.pth_power - 2.01).abs() < 1e-12);
        assert!((res.distance - 2.01f64.sqrt()).abs() < 1e-12);
        assert!((res.per_stage_costs[0] - 0.01).abs() < 1e-12);
        assert!((res.per_stage_costs[1] - 2.0).abs() < 1e-12);
        assert!(res.coupling.is_bicausal());
        let flat = flat_wasserstein(&p, &q, params).unwrap();
        assert!((flat - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_period_equals_flat() {
        let params = AwParams::new(3.0).unwrap();
        let (p, q) = (gen_random(1, 3, 1).unwrap(), gen_random(1, 2, 2).unwrap());
        let aw = aw_pth_power(&p, &q, params).unwrap();
        let flat = flat_wasserstein_pth_power(&p, &q, params).unwrap();
        assert!((aw - flat).abs() < 1e-12);
    }

    #[test]
    fn horizon_mismatch() {
        let (p, q) = (gen_random(1, 2, 1).unwrap(), gen_random(2, 2, 1).unwrap());
        assert!(matches!(
            aw_distance(&p, &q, AwParams::new(2.0).unwrap()),
            Err(Error::HorizonMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn params_reject_small_order() {
        assert!(AwParams::new(1.0).is_err());
        let params = AwParams::new(3.0).unwrap();
        assert!((1.0 / params.p() + 1.0 / params.q() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn shifted_binomial_distance() {
        let p = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let q = gen_binomial(2, 0.5, 1.0, -1.0, 0.5, 0.0).unwrap();
        let res = aw_distance(&p, &q, AwParams::new(2.0).unwrap()).unwrap();
        assert!((res.pth_power - 0.5).abs() < 1e-12);
    }
}

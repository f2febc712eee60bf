//! Linear-programming oracle for the adapted distance on small trees.
//!
//! The decision variables are the joint probabilities `pi(a, b)` of leaf
//! pairs. Besides the two marginal constraints, every causality identity
//! `pi(a, b_t) P(a_t) = pi(a_t, b_t) P(a)` (and its mirror image) is added
//! explicitly, so the feasible set is exactly the bicausal polytope.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};

use super::{check_horizons, AwParams, AwResult, CouplingTree};
use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

const MAX_HORIZON: usize = 3;
const MAX_LEAF_PAIRS: usize = 10_000;

/// Minimises `E_pi[sum_t |X_t - Y_t|^p]` over bicausal couplings by a
/// generic LP solver. Limited to `T <= 3` and at most `10^4` leaf pairs.
pub fn brute_force_bicausal(
    first: &ScenarioTree,
    second: &ScenarioTree,
    params: AwParams,
) -> Result<AwResult> {
    check_horizons(first, second)?;
    let horizon = first.horizon();
    let (la, lb) = (first.leaves(), second.leaves());
    if horizon > MAX_HORIZON || la.len().saturating_mul(lb.len()) > MAX_LEAF_PAIRS {
        return Err(Error::TooLarge(format!(
            "bicausal LP limited to T <= {MAX_HORIZON} and {MAX_LEAF_PAIRS} leaf pairs, got T = {horizon} and {} pairs",
            la.len() * lb.len()
        )));
    }
    let (m, n) = (la.len(), lb.len());
    let p = params.p();
    let (paths_a, paths_b) = (first.enumerate_paths(), second.enumerate_paths());

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Variable> = (0..m * n)
        .map(|k| {
            let (x, y) = (&paths_a.paths[k / n].values, &paths_b.paths[k % n].values);
            let cost: f64 = x.iter().zip(y).map(|(u, v)| (u - v).abs().powf(p)).sum();
            lp.add_var(cost, (0.0, f64::INFINITY))
        })
        .collect();
    for i in 0..m {
        let row: Vec<(Variable, f64)> = (0..n).map(|j| (vars[i * n + j], 1.0)).collect();
        lp.add_constraint(row, ComparisonOp::Eq, first.path_prob(la[i]));
    }
    for j in 0..n {
        let col: Vec<(Variable, f64)> = (0..m).map(|i| (vars[i * n + j], 1.0)).collect();
        lp.add_constraint(col, ComparisonOp::Eq, second.path_prob(lb[j]));
    }

    // index(i, j) addresses pi(a_i, b_j) in the orientation of `tree`
    let mut add_causality =
        |tree: &ScenarioTree, other: &ScenarioTree, index: &dyn Fn(usize, usize) -> usize| {
            for t in 1..horizon {
                for &bt in other.level(t) {
                    let cols = other.leaf_range(bt);
                    for (li, &leaf) in tree.leaves().iter().enumerate() {
                        let at = tree.ancestor_at(leaf, t);
                        let (p_at, p_leaf) = (tree.path_prob(at), tree.path_prob(leaf));
                        let mut coeff = vec![0.0; m * n];
                        for j in cols.clone() {
                            coeff[index(li, j)] += p_at;
                            for i in tree.leaf_range(at) {
                                coeff[index(i, j)] -= p_leaf;
                            }
                        }
                        let expr: Vec<(Variable, f64)> = coeff
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| **c != 0.0)
                            .map(|(k, &c)| (vars[k], c))
                            .collect();
                        lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
                    }
                }
            }
        };
    add_causality(first, second, &|i, j| i * n + j);
    add_causality(second, first, &|j, i| i * n + j);

    let solution = lp
        .solve()
        .map_err(|e| Error::Lp(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::Lp("solver was interrupted".into()))?;
    let masses: Vec<_> = (0..m * n)
        .map(|k| (la[k / n], lb[k % n], solution.var_value(vars[k]).max(0.0)))
        .collect();
    let coupling = CouplingTree::assemble_from_leaf_masses(first, second, &masses);
    let pth_power = solution.objective().max(0.0);
    Ok(AwResult {
        distance: pth_power.powf(1.0 / p),
        pth_power,
        per_stage_costs: coupling.stage_costs(p),
        coupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapted::aw_pth_power;
    use crate::tree::gen_random;

    #[test]
    fn identical_trees() {
        let p = gen_random(2, 2, 3).unwrap();
        let res = brute_force_bicausal(&p, &p, AwParams::new(2.0).unwrap()).unwrap();
        assert!(res.pth_power.abs() < 1e-9);
    }

    #[test]
    fn gap_example() {
        let (p, q) = crate::adapted::tests::gap_pair();
        let res = brute_force_bicausal(&p, &q, AwParams::new(2.0).unwrap()).unwrap();
        assert!((res.pth_power - 2.01).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_recursion() {
        let params = AwParams::new(2.0).unwrap();
        for seed in 0..10 {
            let (p, q) = (
                gen_random(2, 2, seed).unwrap(),
                gen_random(2, 3, 100 + seed).unwrap(),
            );
            let lp = brute_force_bicausal(&p, &q, params).unwrap().pth_power;
            let dp = aw_pth_power(&p, &q, params).unwrap();
            assert!((lp - dp).abs() < 1e-7, "seed {seed}: {lp} vs {dp}");
        }
    }

    #[test]
    fn too_large() {
        let p = gen_random(4, 2, 1).unwrap();
        assert!(matches!(
            brute_force_bicausal(&p, &p, AwParams::new(2.0).unwrap()),
            Err(Error::TooLarge(_))
        ));
    }
}

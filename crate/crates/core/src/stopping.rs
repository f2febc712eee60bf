//! Optimal stopping on a scenario tree by backward induction.
//!
//! `s(P) = min_tau E_P[f(X, tau)]` over stopping times with values in
//! `1..=T`. The Snell envelope is `U_T = f(X, T)` and
//! `U_t = min(f(X, t), E[U_{t+1} | F_t])`; the optimal rule stops at the
//! first node where stopping is strictly cheaper than continuing.

use serde::Serialize;

use crate::cost::CostModel;
use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

pub const DEFAULT_STOPPING_TOL: f64 = 1e-9;
const MAX_STOPPING_TIMES: f64 = 1e6;

/// A stopping time as the set of nodes where it stops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingPolicy {
    /// Antichain met exactly once by every root-to-leaf path, sorted.
    pub stop_set: Vec<NodeId>,
    /// `tau` per leaf, aligned with the tree's leaves.
    pub tau: Vec<usize>,
}

impl StoppingPolicy {
    /// Validates that `stop_set` is an antichain covering every path once.
    pub fn from_stop_set(tree: &ScenarioTree, mut stop_set: Vec<NodeId>) -> Result<Self> {
        stop_set.sort();
        stop_set.dedup();
        let mut is_stop = vec![false; tree.len()];
        for &n in &stop_set {
            if n.0 >= tree.len() || tree.time(n) == 0 {
                return Err(Error::InvalidParams(format!(
                    "node {} cannot be a stopping node",
                    n.0
                )));
            }
            is_stop[n.0] = true;
        }
        let mut tau = Vec::with_capacity(tree.leaves().len());
        for &leaf in tree.leaves() {
            let hits: Vec<NodeId> = tree
                .path_nodes(leaf)
                .into_iter()
                .filter(|n| is_stop[n.0])
                .collect();
            if hits.len() != 1 {
                return Err(Error::InvalidParams(format!(
                    "path to leaf {} meets the stopping set {} times",
                    leaf.0,
                    hits.len()
                )));
            }
            tau.push(tree.time(hits[0]));
        }
        Ok(Self { stop_set, tau })
    }

    pub fn stops_at(&self, node: NodeId) -> bool {
        self.stop_set.binary_search(&node).is_ok()
    }

    /// The stopping node on the path to `leaf`.
    pub fn stop_node(&self, tree: &ScenarioTree, leaf: NodeId) -> NodeId {
        tree.ancestor_at(leaf, self.tau[tree.leaf_index(leaf)])
    }
}

/// Node-indexed backward-induction quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnellTable {
    pub envelope: Vec<f64>,
    /// `f(x, t)` at non-root nodes.
    pub stop_value: Vec<Option<f64>>,
    /// `E[U_{t+1} | F_t]` at non-leaf nodes.
    pub continuation: Vec<Option<f64>>,
    /// Smallest `|stop value - continuation|` over nodes at times
    /// `1..T-1` that the optimal rule reaches before stopping; infinite
    /// when there is no such node.
    pub uniqueness_margin: f64,
    pub margin_node: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingSolution {
    pub value: f64,
    pub policy: StoppingPolicy,
    pub table: SnellTable,
}

/// `f(x, t)` at a time-`t` node, read along any path through it.
pub(crate) fn node_stop_values(tree: &ScenarioTree, model: &CostModel) -> Result<Vec<Option<f64>>> {
    let cost = model.as_stopping()?;
    if model.horizon() != tree.horizon() {
        return Err(Error::HorizonMismatch {
            left: tree.horizon(),
            right: model.horizon(),
        });
    }
    Ok(tree
        .nodes()
        .iter()
        .map(|n| {
            (n.time > 0).then(|| {
                let leaf = tree.leaves()[tree.leaf_range(n.id).start];
                cost.eval(&tree.path_values(leaf), n.time)
            })
        })
        .collect())
}

/// Backward induction without the uniqueness requirement.
pub fn snell_envelope(tree: &ScenarioTree, model: &CostModel) -> Result<StoppingSolution> {
    let stop_value = node_stop_values(tree, model)?;
    let horizon = tree.horizon();
    let mut envelope = vec![0.0; tree.len()];
    let mut continuation = vec![None; tree.len()];
    for t in (0..=horizon).rev() {
        for &n in tree.level(t) {
            if t == horizon {
                envelope[n.0] = stop_value[n.0].expect("leaf has a stop value");
                continue;
            }
            let cont: f64 = tree
                .children(n)
                .iter()
                .map(|&c| tree.node(c).cond_prob * envelope[c.0])
                .sum();
            continuation[n.0] = Some(cont);
            envelope[n.0] = match stop_value[n.0] {
                Some(s) => s.min(cont),
                None => cont,
            };
        }
    }

    let mut stop_set = Vec::new();
    let mut margin = (f64::INFINITY, None);
    let mut stack = vec![tree.root()];
    while let Some(n) = stack.pop() {
        let t = tree.time(n);
        if t == horizon {
            stop_set.push(n);
            continue;
        }
        if let (Some(s), Some(c)) = (stop_value[n.0], continuation[n.0]) {
            let gap = (s - c).abs();
            if gap < margin.0 {
                margin = (gap, Some(n));
            }
            if s < c {
                stop_set.push(n);
                continue;
            }
        }
        stack.extend(tree.children(n).iter().rev());
    }
    let policy = StoppingPolicy::from_stop_set(tree, stop_set)?;
    Ok(StoppingSolution {
        value: envelope[tree.root().0],
        policy,
        table: SnellTable {
            envelope,
            stop_value,
            continuation,
            uniqueness_margin: margin.0,
            margin_node: margin.1,
        },
    })
}

/// Optimal stopping value and the unique optimal stopping time; fails with
/// `AmbiguousStopping` if the uniqueness margin is at most `tol`.
pub fn solve_stopping(
    tree: &ScenarioTree,
    model: &CostModel,
    tol: f64,
) -> Result<StoppingSolution> {
    let sol = snell_envelope(tree, model)?;
    if sol.table.uniqueness_margin <= tol {
        return Err(Error::AmbiguousStopping {
            node: sol.table.margin_node.map_or(0, |n| n.0),
            margin: sol.table.uniqueness_margin,
        });
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceStopping {
    pub value: f64,
    pub policy: StoppingPolicy,
    /// Whether no other stopping time attains the minimum (within 1e-12
    /// relative).
    pub unique: bool,
    pub candidates: usize,
}

/// Enumerates every stopping time and returns the cheapest.
pub fn brute_force_stopping(tree: &ScenarioTree, model: &CostModel) -> Result<BruteForceStopping> {
    let stop_value = node_stop_values(tree, model)?;
    // number of stopping times of each subtree
    let mut count = vec![0.0f64; tree.len()];
    for t in (0..=tree.horizon()).rev() {
        for &n in tree.level(t) {
            let below: f64 = tree.children(n).iter().map(|c| count[c.0]).product();
            count[n.0] = if t == tree.horizon() {
                1.0
            } else if t == 0 {
                below
            } else {
                1.0 + below
            };
        }
    }
    let total = count[tree.root().0];
    if total > MAX_STOPPING_TIMES {
        return Err(Error::TooLarge(format!(
            "{total} stopping times exceed the limit of {MAX_STOPPING_TIMES}"
        )));
    }

    let options = enumerate(tree, tree.root(), &stop_value);
    let best = options.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * best.abs().max(1.0);
    let winners: Vec<&(f64, Vec<NodeId>)> = options.iter().filter(|o| o.0 <= best + tol).collect();
    let arg = options
        .iter()
        .find(|o| o.0 == best)
        .expect("at least one stopping time");
    Ok(BruteForceStopping {
        value: best,
        policy: StoppingPolicy::from_stop_set(tree, arg.1.clone())?,
        unique: winners.len() == 1,
        candidates: options.len(),
    })
}

/// All `(E[f(X, tau); subtree], stop set)` pairs for stopping rules of
/// the subtree below `n`, with masses taken unconditionally.
fn enumerate(
    tree: &ScenarioTree,
    n: NodeId,
    stop_value: &[Option<f64>],
) -> Vec<(f64, Vec<NodeId>)> {
    let here = stop_value[n.0].map(|s| (tree.path_prob(n) * s, vec![n]));
    if tree.is_leaf(n) {
        return here.into_iter().collect();
    }
    let mut combos: Vec<(f64, Vec<NodeId>)> = vec![(0.0, Vec::new())];
    for &c in tree.children(n) {
        let sub = enumerate(tree, c, stop_value);
        combos = combos
            .iter()
            .flat_map(|(v, set)| {
                sub.iter().map(move |(w, s)| {
                    let mut joined = set.clone();
                    joined.extend_from_slice(s);
                    (v + w, joined)
                })
            })
            .collect();
    }
    let mut out: Vec<_> = here.into_iter().collect();
    out.extend(combos);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{ScalarFn, StoppingSpec};
    use crate::tree::gen_binomial;

    fn identity_cost(horizon: usize) -> CostModel {
        StoppingSpec::Markov {
            g: ScalarFn::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
        }
        .build(horizon)
        .unwrap()
    }

    #[test]
    fn single_period_stops_everywhere() {
        let tree = gen_binomial(1, 0.0, 1.0, -1.0, 0.3, 0.0).unwrap();
        let sol = solve_stopping(&tree, &identity_cost(1), DEFAULT_STOPPING_TOL).unwrap();
        assert_eq!(sol.policy.tau, vec![1, 1]);
        assert!((sol.value - (0.3 - 0.7)).abs() < 1e-15);
        let brute = brute_force_stopping(&tree, &identity_cost(1)).unwrap();
        assert_eq!(brute.value, sol.value);
        assert_eq!(brute.policy, sol.policy);
    }

    #[test]
    fn drifted_binomial_continues() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, -0.1).unwrap();
        let sol = solve_stopping(&tree, &identity_cost(2), DEFAULT_STOPPING_TOL).unwrap();
        assert_eq!(sol.policy.tau, vec![2; 4]);
        assert!((sol.value + 0.1).abs() < 1e-15);
        assert!((sol.table.uniqueness_margin - 0.1).abs() < 1e-12);
        let brute = brute_force_stopping(&tree, &identity_cost(2)).unwrap();
        assert!((brute.value + 0.1).abs() < 1e-15);
        assert!(brute.unique);
        assert_eq!(brute.policy, sol.policy);
        assert_eq!(brute.candidates, 4);
    }

    #[test]
    fn martingale_is_ambiguous() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        assert!(matches!(
            solve_stopping(&tree, &identity_cost(2), DEFAULT_STOPPING_TOL),
            Err(Error::AmbiguousStopping { .. })
        ));
        assert!(
            !brute_force_stopping(&tree, &identity_cost(2))
                .unwrap()
                .unique
        );
    }

    #[test]
    fn envelope_is_min_of_stop_and_continuation() {
        let tree = crate::tree::gen_random(3, 2, 4).unwrap();
        let sol = snell_envelope(&tree, &identity_cost(3)).unwrap();
        for n in tree.nodes().iter().filter(|n| n.time > 0 && n.time < 3) {
            let (s, c) = (
                sol.table.stop_value[n.id.0].unwrap(),
                sol.table.continuation[n.id.0].unwrap(),
            );
            assert_eq!(sol.table.envelope[n.id.0], s.min(c));
        }
    }

    #[test]
    fn invalid_stop_sets_rejected() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let first = tree.level(1)[0];
        let below = tree.children(first)[0];
        assert!(StoppingPolicy::from_stop_set(&tree, vec![first, below]).is_err());
        assert!(StoppingPolicy::from_stop_set(&tree, vec![first]).is_err());
    }
}

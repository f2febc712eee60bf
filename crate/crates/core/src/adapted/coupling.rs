//! Couplings between two scenario trees as synchronized product trees.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// Tolerance of the cross-multiplied causality identities.
pub const CAUSAL_TOL: f64 = 1e-10;
/// Tolerance on the marginals of a coupling.
pub const MARGINAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// The first process does not anticipate the second.
    XtoY,
    YtoX,
}

/// A node `(a_t, b_t)` of the product tree: atoms of both filtrations at
/// time `t`, with the joint conditional probability given the parent pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairNode {
    pub x: NodeId,
    pub y: NodeId,
    pub time: usize,
    pub cond_prob: f64,
    /// Unconditional mass `pi(a_t, b_t)`.
    pub mass: f64,
    pub parent: Option<usize>,
}

/// A coupling of two scenario trees with equal horizons.
#[derive(Debug, Clone)]
pub struct CouplingTree {
    first: ScenarioTree,
    second: ScenarioTree,
    pairs: Vec<PairNode>,
    children: Vec<Vec<usize>>,
}

impl CouplingTree {
    /// Assembles a pair tree; `pairs[0]` must be the root pair and parents
    /// must precede children.
    pub(crate) fn from_pairs(
        first: ScenarioTree,
        second: ScenarioTree,
        pairs: Vec<PairNode>,
    ) -> Self {
        let mut children = vec![Vec::new(); pairs.len()];
        for (k, pn) in pairs.iter().enumerate() {
            if let Some(p) = pn.parent {
                children[p].push(k);
            }
        }
        Self {
            first,
            second,
            pairs,
            children,
        }
    }

    /// Builds the coupling whose law on leaf pairs is `masses`. Repeated
    /// leaf pairs are accumulated; marginals are checked within
    /// [`MARGINAL_TOL`].
    pub fn from_leaf_masses(
        first: &ScenarioTree,
        second: &ScenarioTree,
        masses: &[(NodeId, NodeId, f64)],
    ) -> Result<Self> {
        if first.horizon() != second.horizon() {
            return Err(Error::HorizonMismatch {
                left: first.horizon(),
                right: second.horizon(),
            });
        }
        let mut row = vec![0.0; first.leaves().len()];
        let mut col = vec![0.0; second.leaves().len()];
        for &(a, b, w) in masses {
            if !first.is_leaf(a) || !second.is_leaf(b) {
                return Err(Error::InvalidParams(
                    "coupling masses must sit on leaf pairs".into(),
                ));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "coupling mass {w} is negative"
                )));
            }
            row[first.leaf_index(a)] += w;
            col[second.leaf_index(b)] += w;
        }
        let row_ok = first
            .leaves()
            .iter()
            .zip(&row)
            .all(|(&l, &m)| (first.path_prob(l) - m).abs() <= MARGINAL_TOL);
        let col_ok = second
            .leaves()
            .iter()
            .zip(&col)
            .all(|(&l, &m)| (second.path_prob(l) - m).abs() <= MARGINAL_TOL);
        if !(row_ok && col_ok) {
            return Err(Error::InvalidParams(
                "coupling marginals do not match the trees".into(),
            ));
        }
        Ok(Self::assemble_from_leaf_masses(first, second, masses))
    }

    /// Same as [`Self::from_leaf_masses`] without the marginal audit; the
    /// caller guarantees the masses describe a coupling.
    pub(crate) fn assemble_from_leaf_masses(
        first: &ScenarioTree,
        second: &ScenarioTree,
        masses: &[(NodeId, NodeId, f64)],
    ) -> Self {
        let horizon = first.horizon();
        let mut pairs = vec![PairNode {
            x: first.root(),
            y: second.root(),
            time: 0,
            cond_prob: 1.0,
            mass: 1.0,
            parent: None,
        }];
        let mut index: HashMap<(NodeId, NodeId), usize> = HashMap::new();
        let mut mass = vec![0.0];
        for &(a, b, w) in masses.iter().filter(|m| m.2 > 0.0) {
            mass[0] += w;
            let (pa, pb) = (first.path_nodes(a), second.path_nodes(b));
            let mut cur = 0usize;
            for t in 0..horizon {
                let key = (pa[t], pb[t]);
                let next = *index.entry(key).or_insert_with(|| {
                    pairs.push(PairNode {
                        x: key.0,
                        y: key.1,
                        time: t + 1,
                        cond_prob: 0.0,
                        mass: 0.0,
                        parent: Some(cur),
                    });
                    mass.push(0.0);
                    pairs.len() - 1
                });
                mass[next] += w;
                cur = next;
            }
        }
        for k in 0..pairs.len() {
            pairs[k].mass = mass[k];
            pairs[k].cond_prob = match pairs[k].parent {
                Some(p) => mass[k] / mass[p],
                None => 1.0,
            };
        }
        Self::from_pairs(first.clone(), second.clone(), pairs)
    }

    /// Independent coupling `P (x) Q`.
    pub fn product(first: &ScenarioTree, second: &ScenarioTree) -> Result<Self> {
        let mut masses = Vec::with_capacity(first.leaves().len() * second.leaves().len());
        for &a in first.leaves() {
            for &b in second.leaves() {
                masses.push((a, b, first.path_prob(a) * second.path_prob(b)));
            }
        }
        Self::from_leaf_masses(first, second, &masses)
    }

    pub fn first(&self) -> &ScenarioTree {
        &self.first
    }

    pub fn second(&self) -> &ScenarioTree {
        &self.second
    }

    pub fn horizon(&self) -> usize {
        self.first.horizon()
    }

    pub fn pairs(&self) -> &[PairNode] {
        &self.pairs
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    /// `(leaf of P, leaf of Q, mass)` for every terminal pair.
    pub fn leaf_masses(&self) -> Vec<(NodeId, NodeId, f64)> {
        let horizon = self.horizon();
        self.pairs
            .iter()
            .filter(|p| p.time == horizon)
            .map(|p| (p.x, p.y, p.mass))
            .collect()
    }

    /// `E_pi[|X_t - Y_t|^p]` for `t = 1..=T`.
    pub fn stage_costs(&self, p: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon()];
        for pn in self.pairs.iter().filter(|pn| pn.time > 0) {
            let d = self.first.value(pn.x) - self.second.value(pn.y);
            out[pn.time - 1] += pn.mass * d.abs().powf(p);
        }
        out
    }

    /// The same coupling with the roles of the marginals exchanged.
    pub fn transpose(&self) -> Self {
        let pairs = self
            .pairs
            .iter()
            .map(|p| PairNode {
                x: p.y,
                y: p.x,
                ..p.clone()
            })
            .collect();
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            pairs,
            children: self.children.clone(),
        }
    }

    /// Whether the coupling is causal in `direction`.
    ///
    /// For `X -> Y` and every `t < T`, every pair atom `(a_t, b_t)` of mass
    /// `m` and every leaf `a` of `P` below `a_t`, checks
    /// `|pi(a, b_t) P(a_t) - m P(a)| <= 1e-10`, i.e. the law of `Y_{1..t}`
    /// given all of `X` only depends on `X_{1..t}`.
    pub fn check_causal(&self, direction: Direction) -> bool {
        match direction {
            Direction::XtoY => self.causal_first_to_second(),
            Direction::YtoX => self.transpose().causal_first_to_second(),
        }
    }

    pub fn is_bicausal(&self) -> bool {
        self.check_causal(Direction::XtoY) && self.check_causal(Direction::YtoX)
    }

    fn causal_first_to_second(&self) -> bool {
        let horizon = self.horizon();
        // joint[(pair node k, leaf index of P)] = pi(a, b_t)
        let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
        for (k, pn) in self
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.time == horizon)
        {
            let leaf = self.first.leaf_index(pn.x);
            let mut cur = pn.parent;
            while let Some(anc) = cur {
                if self.pairs[anc].time > 0 {
                    *joint.entry((anc, leaf)).or_insert(0.0) += self.pairs[k].mass;
                }
                cur = self.pairs[anc].parent;
            }
        }
        let leaves = self.first.leaves();
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.time > 0 && p.time < horizon)
            .all(|(k, pn)| {
                let p_at = self.first.path_prob(pn.x);
                self.first.leaf_range(pn.x).all(|li| {
                    let pi_ab = joint.get(&(k, li)).copied().unwrap_or(0.0);
                    (pi_ab * p_at - pn.mass * self.first.path_prob(leaves[li])).abs() <= CAUSAL_TOL
                })
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{gen_random, TreeBuilder};

    /// P: X_1 = 0, X_2 = +-1; Q: Y_1 = +-0.1, Y_2 = sign(Y_1).
    fn gap_pair() -> (ScenarioTree, ScenarioTree) {
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
    fn product_is_bicausal() {
        let (p, q) = (gen_random(2, 2, 1).unwrap(), gen_random(2, 3, 2).unwrap());
        let c = CouplingTree::product(&p, &q).unwrap();
        assert!(c.is_bicausal());
    }

    #[test]
    fn anticipating_coupling_is_not_causal() {
        let (p, q) = gap_pair();
        // match X_2 = +1 with Y_1 = +0.1: Y_1 depends on the future of X
        let masses = vec![
            (p.leaves()[0], q.leaves()[0], 0.5),
            (p.leaves()[1], q.leaves()[1], 0.5),
        ];
        let c = CouplingTree::from_leaf_masses(&p, &q, &masses).unwrap();
        assert!(!c.check_causal(Direction::XtoY));
        assert!(c.check_causal(Direction::YtoX));
        let costs = c.stage_costs(2.0);
        assert!((costs[0] - 0.01).abs() < 1e-15 && costs[1] == 0.0);
    }

    #[test]
    fn wrong_marginals_rejected() {
        let (p, q) = gap_pair();
        let masses = vec![(p.leaves()[0], q.leaves()[0], 1.0)];
        assert!(CouplingTree::from_leaf_masses(&p, &q, &masses).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let (p, q) = (gen_random(2, 2, 4).unwrap(), gen_random(2, 2, 5).unwrap());
        let c = CouplingTree::product(&p, &q).unwrap();
        let back = c.transpose().transpose();
        assert_eq!(back.pairs(), c.pairs());
    }
}

//! Finitely supported adapted processes encoded as rooted scenario trees.
//!
//! A [`ScenarioTree`] of horizon `T` carries a law on `R^T` together with its
//! canonical filtration: the root sits at time 0 and carries no value, every
//! node at time `t` holds the coordinate `X_t` on its atom, and the
//! conditional probabilities on the edges describe the transition kernels.
//! Sibling values are pairwise distinct, so paths are in bijection with
//! leaves and the tree filtration equals the filtration generated by `X`.

use std::collections::HashMap;
use std::ops::Range;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on stochasticity checks (kernel sums, leaf mass).
pub const PROB_TOL: f64 = 1e-12;

/// Dense node identifier; equals the node's index in [`ScenarioTree::nodes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub time: usize,
    /// `X_t` on this atom; `None` only at the root.
    pub value: Option<f64>,
    /// Probability of this node given its parent.
    pub cond_prob: f64,
    pub parent: Option<NodeId>,
}

/// A finitely supported law on `R^T` with its natural filtration.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    horizon: usize,
    root: NodeId,
    nodes: Vec<Node>,
    children: Vec<Vec<NodeId>>,
    levels: Vec<Vec<NodeId>>,
    level_pos: Vec<usize>,
    path_prob: Vec<f64>,
    leaf_range: Vec<Range<usize>>,
}

impl PartialEq for ScenarioTree {
    fn eq(&self, other: &Self) -> bool {
        self.horizon == other.horizon && self.nodes == other.nodes
    }
}

/// One root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEntry {
    pub leaf: NodeId,
    pub values: Vec<f64>,
    pub prob: f64,
}

/// All paths of a tree, in leaf (depth-first) order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTable {
    pub paths: Vec<PathEntry>,
}

impl PathTable {
    pub fn total_probability(&self) -> f64 {
        self.paths.iter().map(|p| p.prob).sum()
    }
}

/// Incremental construction of a [`ScenarioTree`]; validation happens in
/// [`TreeBuilder::build`].
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    horizon: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder {
    pub fn new(horizon: usize) -> Self {
        let root = Node {
            id: NodeId(0),
            time: 0,
            value: None,
            cond_prob: 1.0,
            parent: None,
        };
        Self {
            horizon,
            nodes: vec![root],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn add_child(&mut self, parent: NodeId, value: f64, cond_prob: f64) -> NodeId {
        let id = NodeId(self.nodes.len());
        let time = self
            .nodes
            .get(parent.0)
            .map_or(usize::MAX, |p| p.time.saturating_add(1));
        self.nodes.push(Node {
            id,
            time,
            value: Some(value),
            cond_prob,
            parent: Some(parent),
        });
        id
    }

    pub fn build(self) -> Result<ScenarioTree> {
        ScenarioTree::new(self.horizon, self.nodes)
    }
}

impl ScenarioTree {
    /// Validates `nodes` (ids must equal indices) and assembles the tree.
    pub fn new(horizon: usize, nodes: Vec<Node>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::tree(None, "horizon must be at least 1"));
        }
        if nodes.is_empty() {
            return Err(Error::tree(None, "tree has no nodes"));
        }
        let n = nodes.len();
        let mut root = None;
        for (i, node) in nodes.iter().enumerate() {
            if node.id.0 != i {
                return Err(Error::tree(
                    Some(i),
                    format!("id {} does not match position {i}", node.id.0),
                ));
            }
            if !(node.cond_prob > 0.0 && node.cond_prob <= 1.0) {
                return Err(Error::tree(
                    Some(i),
                    format!("conditional probability {} outside (0, 1]", node.cond_prob),
                ));
            }
            match node.parent {
                None => {
                    if root.is_some() {
                        return Err(Error::tree(Some(i), "more than one root"));
                    }
                    if node.time != 0 {
                        return Err(Error::tree(Some(i), "root must sit at time 0"));
                    }
                    if node.value.is_some() {
                        return Err(Error::tree(Some(i), "root must not carry a value"));
                    }
                    root = Some(NodeId(i));
                }
                Some(p) => {
                    let Some(parent) = nodes.get(p.0) else {
                        return Err(Error::tree(Some(i), format!("unknown parent {}", p.0)));
                    };
                    if parent.time.checked_add(1) != Some(node.time) {
                        return Err(Error::tree(
                            Some(i),
                            format!("time {} is not parent time + 1", node.time),
                        ));
                    }
                    if node.time > horizon {
                        return Err(Error::tree(
                            Some(i),
                            format!("time {} exceeds horizon {horizon}", node.time),
                        ));
                    }
                    match node.value {
                        Some(v) if v.is_finite() => {}
                        _ => {
                            return Err(Error::tree(Some(i), "non-root node needs a finite value"))
                        }
                    }
                }
            }
        }
        let root = root.ok_or_else(|| Error::tree(None, "no root node"))?;

        let mut children = vec![Vec::new(); n];
        for node in &nodes {
            if let Some(p) = node.parent {
                children[p.0].push(node.id);
            }
        }
        for (i, kids) in children.iter().enumerate() {
            if nodes[i].time < horizon && kids.is_empty() {
                return Err(Error::tree(
                    Some(i),
                    format!("node at time {} < horizon has no children", nodes[i].time),
                ));
            }
            if kids.is_empty() {
                continue;
            }
            let total: f64 = kids.iter().map(|c| nodes[c.0].cond_prob).sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::tree(
                    Some(i),
                    format!("children probabilities sum to {total}"),
                ));
            }
            let mut seen: Vec<f64> = Vec::with_capacity(kids.len());
            for c in kids {
                let v = nodes[c.0].value.unwrap_or(f64::NAN);
                if seen.contains(&v) {
                    return Err(Error::tree(
                        Some(c.0),
                        format!("value {v} repeats a sibling's value"),
                    ));
                }
                seen.push(v);
            }
        }

        let mut tree = ScenarioTree {
            horizon,
            root,
            nodes,
            children,
            levels: vec![Vec::new(); horizon + 1],
            level_pos: vec![0; n],
            path_prob: vec![0.0; n],
            leaf_range: vec![0..0; n],
        };
        tree.index_depth_first();
        let leaf_mass: f64 = tree.leaves().iter().map(|l| tree.path_prob[l.0]).sum();
        if (leaf_mass - 1.0).abs() > PROB_TOL {
            return Err(Error::tree(
                None,
                format!("leaf probabilities sum to {leaf_mass}"),
            ));
        }
        Ok(tree)
    }

    fn index_depth_first(&mut self) {
        let mut stack = vec![(self.root, false)];
        self.path_prob[self.root.0] = 1.0;
        let mut leaves_seen = 0usize;
        let mut start = vec![0usize; self.nodes.len()];
        while let Some((id, done)) = stack.pop() {
            if done {
                self.leaf_range[id.0] = start[id.0]..leaves_seen;
                continue;
            }
            let t = self.nodes[id.0].time;
            self.level_pos[id.0] = self.levels[t].len();
            self.levels[t].push(id);
            start[id.0] = leaves_seen;
            if t == self.horizon {
                leaves_seen += 1;
            }
            stack.push((id, true));
            for &c in self.children[id.0].iter().rev() {
                self.path_prob[c.0] = self.path_prob[id.0] * self.nodes[c.0].cond_prob;
                stack.push((c, false));
            }
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn time(&self, id: NodeId) -> usize {
        self.nodes[id.0].time
    }

    /// Node value; `NaN` at the root.
    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.unwrap_or(f64::NAN)
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id.0]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].time == self.horizon
    }

    /// Nodes at time `t`, in depth-first order.
    pub fn level(&self, t: usize) -> &[NodeId] {
        &self.levels[t]
    }

    /// Position of `id` inside [`Self::level`] of its time.
    pub fn level_pos(&self, id: NodeId) -> usize {
        self.level_pos[id.0]
    }

    /// Unconditional probability of the atom `id`.
    pub fn path_prob(&self, id: NodeId) -> f64 {
        self.path_prob[id.0]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.levels[self.horizon]
    }

    /// Leaf index of a leaf node (position in [`Self::leaves`]).
    pub fn leaf_index(&self, leaf: NodeId) -> usize {
        debug_assert!(self.is_leaf(leaf));
        self.level_pos[leaf.0]
    }

    /// Indices into [`Self::leaves`] of the leaves below `id`.
    pub fn leaf_range(&self, id: NodeId) -> Range<usize> {
        self.leaf_range[id.0].clone()
    }

    /// The ancestor of `id` at time `t <= time(id)`.
    pub fn ancestor_at(&self, id: NodeId, t: usize) -> NodeId {
        let mut cur = id;
        while self.nodes[cur.0].time > t {
            cur = self.nodes[cur.0]
                .parent
                .expect("non-root node has a parent");
        }
        cur
    }

    /// Nodes along the path to `leaf` at times `1..=T`.
    pub fn path_nodes(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.horizon);
        let mut cur = leaf;
        while let Some(p) = self.nodes[cur.0].parent {
            out.push(cur);
            cur = p;
        }
        out.reverse();
        out
    }

    /// The leaf whose path carries exactly `values`, if any.
    pub fn find_path(&self, values: &[f64]) -> Option<NodeId> {
        if values.len() != self.horizon {
            return None;
        }
        let mut cur = self.root;
        for &v in values {
            cur = *self.children[cur.0].iter().find(|&&c| self.value(c) == v)?;
        }
        Some(cur)
    }

    pub fn path_values(&self, leaf: NodeId) -> Vec<f64> {
        self.path_nodes(leaf)
            .iter()
            .map(|&n| self.value(n))
            .collect()
    }

    /// One entry per leaf; probability is the product of conditional
    /// probabilities along the path.
    pub fn enumerate_paths(&self) -> PathTable {
        let paths = self
            .leaves()
            .iter()
            .map(|&leaf| {
                let nodes = self.path_nodes(leaf);
                let prob = nodes
                    .iter()
                    .fold(1.0, |acc, n| acc * self.nodes[n.0].cond_prob);
                PathEntry {
                    leaf,
                    values: nodes.iter().map(|&n| self.value(n)).collect(),
                    prob,
                }
            })
            .collect();
        PathTable { paths }
    }

    /// `E[h | F_t]` for a leaf function `h` (aligned with [`Self::leaves`]),
    /// returned aligned with [`Self::level`]`(t)`.
    pub fn conditional_expectation(&self, leaf_values: &[f64], t: usize) -> Result<Vec<f64>> {
        self.condition_down(leaf_values, self.horizon, t)
    }

    /// Conditions a time-`from` measurable quantity (aligned with
    /// `level(from)`) down to time `to <= from` by backward averaging.
    /// Conditioning through an intermediate level performs exactly the same
    /// arithmetic as conditioning in one call.
    pub fn condition_down(&self, values: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
        if from > self.horizon || to > from {
            return Err(Error::InvalidParams(format!(
                "cannot condition from time {from} to time {to} on horizon {}",
                self.horizon
            )));
        }
        if values.len() != self.levels[from].len() {
            return Err(Error::DimensionMismatch {
                expected: self.levels[from].len(),
                got: values.len(),
            });
        }
        let mut cur = values.to_vec();
        for t in (to..from).rev() {
            cur = self.levels[t]
                .iter()
                .map(|&id| {
                    self.children[id.0]
                        .iter()
                        .map(|&c| self.nodes[c.0].cond_prob * cur[self.level_pos[c.0]])
                        .sum()
                })
                .collect();
        }
        Ok(cur)
    }

    /// Extends a time-`t` quantity to the leaves (each leaf inherits the
    /// value of its time-`t` ancestor).
    pub fn lift_to_leaves(&self, values: &[f64], t: usize) -> Vec<f64> {
        self.leaves()
            .iter()
            .map(|&l| values[self.level_pos[self.ancestor_at(l, t).0]])
            .collect()
    }

    /// `sum_t E|X_t|^p` accumulated node by node.
    pub fn pth_moment(&self, p: f64) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| n.value.map(|v| self.path_prob[n.id.0] * v.abs().powf(p)))
            .sum()
    }

    /// Drops all coordinates after time `t`.
    pub fn truncate(&self, t: usize) -> Result<ScenarioTree> {
        if t == 0 || t > self.horizon {
            return Err(Error::InvalidParams(format!(
                "cannot truncate horizon {} to {t}",
                self.horizon
            )));
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for node in self.nodes.iter().filter(|n| n.time <= t) {
            remap[node.id.0] = nodes.len();
            nodes.push(Node {
                id: NodeId(nodes.len()),
                parent: node.parent.map(|p| NodeId(remap[p.0])),
                ..node.clone()
            });
        }
        ScenarioTree::new(t, nodes)
    }

    /// Same structure and probabilities with new node values (node-indexed;
    /// the root entry is ignored).
    pub fn with_values(&self, values: &[f64]) -> Result<ScenarioTree> {
        ScenarioTree::new(self.horizon, self.replaced_values(values)?)
    }

    fn replaced_values(&self, values: &[f64]) -> Result<Vec<Node>> {
        if values.len() != self.nodes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.len(),
                got: values.len(),
            });
        }
        Ok(self
            .nodes
            .iter()
            .map(|n| Node {
                value: n.value.map(|_| values[n.id.0]),
                ..n.clone()
            })
            .collect())
    }

    /// Builds a tree from weighted paths, merging equal prefixes. Weights are
    /// normalised; their total must be 1 within 1e-9.
    pub fn from_weighted_paths(horizon: usize, paths: &[(Vec<f64>, f64)]) -> Result<ScenarioTree> {
        let total: f64 = paths.iter().map(|(_, w)| w).sum();
        if !((total - 1.0).abs() <= 1e-9) {
            return Err(Error::tree(None, format!("path weights sum to {total}")));
        }
        let mut mass = vec![1.0];
        let mut nodes = vec![Node {
            id: NodeId(0),
            time: 0,
            value: None,
            cond_prob: 1.0,
            parent: None,
        }];
        let mut index: HashMap<(usize, u64), usize> = HashMap::new();
        for (values, w) in paths {
            if values.len() != horizon {
                return Err(Error::DimensionMismatch {
                    expected: horizon,
                    got: values.len(),
                });
            }
            if !(*w > 0.0) {
                return Err(Error::tree(
                    None,
                    format!("path weight {w} is not positive"),
                ));
            }
            let w = w / total;
            let mut cur = 0usize;
            for (t, &v) in values.iter().enumerate() {
                // fold -0.0 into 0.0 so that equal values share a node
                let v = v + 0.0;
                let next = *index.entry((cur, v.to_bits())).or_insert_with(|| {
                    nodes.push(Node {
                        id: NodeId(nodes.len()),
                        time: t + 1,
                        value: Some(v),
                        cond_prob: 1.0,
                        parent: Some(NodeId(cur)),
                    });
                    mass.push(0.0);
                    nodes.len() - 1
                });
                mass[next] += w;
                cur = next;
            }
        }
        for i in 1..nodes.len() {
            let p = nodes[i].parent.expect("non-root").0;
            nodes[i].cond_prob = (mass[i] / mass[p]).min(1.0);
        }
        ScenarioTree::new(horizon, nodes)
    }

    /// Structural equality up to node relabelling: equal values (exactly)
    /// and conditional probabilities within [`PROB_TOL`].
    pub fn isomorphic(&self, other: &ScenarioTree) -> bool {
        fn sorted_kids(tree: &ScenarioTree, id: NodeId) -> Vec<NodeId> {
            let mut kids = tree.children(id).to_vec();
            kids.sort_by(|a, b| tree.value(*a).total_cmp(&tree.value(*b)));
            kids
        }
        fn same(a: &ScenarioTree, x: NodeId, b: &ScenarioTree, y: NodeId) -> bool {
            let (ka, kb) = (sorted_kids(a, x), sorted_kids(b, y));
            ka.len() == kb.len()
                && ka.iter().zip(&kb).all(|(&u, &v)| {
                    a.value(u) == b.value(v)
                        && (a.node(u).cond_prob - b.node(v).cond_prob).abs() <= PROB_TOL
                        && same(a, u, b, v)
                })
        }
        self.horizon == other.horizon && same(self, self.root, other, other.root)
    }
}

/// Binomial tree: `X_1 = start + {up, down}` and, for `t >= 2`,
/// `X_t = X_{t-1} + drift + {up, down}`. The up-branch has probability
/// `p_up`. Recombining states are kept as separate nodes.
pub fn gen_binomial(
    horizon: usize,
    start: f64,
    up: f64,
    down: f64,
    p_up: f64,
    drift: f64,
) -> Result<ScenarioTree> {
    if horizon == 0 {
        return Err(Error::InvalidParams("horizon must be at least 1".into()));
    }
    if !(p_up > 0.0 && p_up < 1.0) {
        return Err(Error::InvalidParams(format!(
            "p_up = {p_up} outside (0, 1)"
        )));
    }
    if !(up.is_finite() && down.is_finite() && start.is_finite() && drift.is_finite()) || up == down
    {
        return Err(Error::InvalidParams(
            "up and down must be finite and distinct".into(),
        ));
    }
    let mut b = TreeBuilder::new(horizon);
    let mut frontier = vec![(b.root(), start)];
    for t in 1..=horizon {
        let shift = if t == 1 { 0.0 } else { drift };
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (node, x) in frontier {
            next.push((b.add_child(node, x + shift + up, p_up), x + shift + up));
            next.push((
                b.add_child(node, x + shift + down, 1.0 - p_up),
                x + shift + down,
            ));
        }
        frontier = next;
    }
    b.build()
}

/// A recombining lattice with moves `(k - (m-1)/2) * step`, `k = 0..m`,
/// unfolded into a tree. `probs` gives the move probabilities.
pub fn gen_lattice(horizon: usize, start: f64, step: f64, probs: &[f64]) -> Result<ScenarioTree> {
    if horizon == 0 || probs.len() < 2 {
        return Err(Error::InvalidParams(
            "need horizon >= 1 and at least two moves".into(),
        ));
    }
    if !(step.is_finite() && step != 0.0 && start.is_finite()) {
        return Err(Error::InvalidParams(format!("invalid step {step}")));
    }
    if probs.iter().any(|&q| !(q > 0.0 && q < 1.0))
        || (probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
    {
        return Err(Error::InvalidParams(
            "move probabilities must be positive and sum to 1".into(),
        ));
    }
    let centre = (probs.len() as f64 - 1.0) / 2.0;
    let mut b = TreeBuilder::new(horizon);
    let mut frontier = vec![(b.root(), start)];
    for _ in 1..=horizon {
        let mut next = Vec::with_capacity(frontier.len() * probs.len());
        for (node, x) in frontier {
            for (k, &q) in probs.iter().enumerate() {
                let v = x + (k as f64 - centre) * step;
                next.push((b.add_child(node, v, q), v));
            }
        }
        frontier = next;
    }
    b.build()
}

/// Random tree with `branching` children per node, stratified increments in
/// `[-1, 1]` and weights drawn from `[0.2, 1]` before normalisation.
/// Deterministic given `seed`.
pub fn gen_random(horizon: usize, branching: usize, seed: u64) -> Result<ScenarioTree> {
    if horizon == 0 || branching < 2 {
        return Err(Error::InvalidParams(
            "need horizon >= 1 and branching >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = TreeBuilder::new(horizon);
    let mut frontier = vec![(b.root(), 0.0)];
    for _ in 1..=horizon {
        let mut next = Vec::with_capacity(frontier.len() * branching);
        for (node, x) in frontier {
            let weights: Vec<f64> = (0..branching).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut used = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let u: f64 = rng.random_range(0.05..0.95);
                let v = x - 1.0 + 2.0 * (k as f64 + u) / branching as f64;
                // last sibling absorbs rounding so kernels sum to one
                let q = if k + 1 == branching {
                    1.0 - used
                } else {
                    w / total
                };
                used += q;
                next.push((b.add_child(node, v, q), v));
            }
        }
        frontier = next;
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic() -> ScenarioTree {
        let mut b = TreeBuilder::new(2);
        let n1 = b.add_child(b.root(), 1.0, 1.0);
        b.add_child(n1, 2.0, 1.0);
        b.build().unwrap()
    }

    #[test]
    fn deterministic_tree_has_one_path() {
        let table = deterministic().enumerate_paths();
        assert_eq!(table.paths.len(), 1);
        assert_eq!(table.paths[0].values, vec![1.0, 2.0]);
        assert_eq!(table.paths[0].prob, 1.0);
    }

    #[test]
    fn symmetric_binomial_paths() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let table = tree.enumerate_paths();
        assert_eq!(table.paths.len(), 4);
        assert!(table.paths.iter().all(|p| p.prob == 0.25));
    }

    #[test]
    fn drifted_binomial_paths() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, -0.1).unwrap();
        let mut values: Vec<Vec<f64>> = tree
            .enumerate_paths()
            .paths
            .into_iter()
            .map(|p| p.values)
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = vec![
            vec![-1.0, -1.0 - 0.1 - 1.0],
            vec![-1.0, -1.0 - 0.1 + 1.0],
            vec![1.0, 1.0 - 0.1 - 1.0],
            vec![1.0, 1.0 - 0.1 + 1.0],
        ];
        assert_eq!(values, expected);
    }

    #[test]
    fn binomial_one_period() {
        let tree = gen_binomial(1, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let table = tree.enumerate_paths();
        assert_eq!(table.paths.len(), 2);
        assert_eq!(table.paths[0].values, vec![1.0]);
        assert_eq!(table.paths[1].values, vec![-1.0]);
    }

    #[test]
    fn binomial_does_not_recombine() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        assert_eq!(tree.leaves().len(), 4);
        assert_eq!(tree.len(), 7);
    }

    #[test]
    fn random_generation_is_deterministic() {
        assert_eq!(gen_random(2, 2, 7).unwrap(), gen_random(2, 2, 7).unwrap());
        assert_ne!(gen_random(2, 2, 7).unwrap(), gen_random(2, 2, 8).unwrap());
    }

    #[test]
    fn generator_parameter_errors() {
        assert!(matches!(
            gen_binomial(0, 0.0, 1.0, -1.0, 0.5, 0.0),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            gen_binomial(2, 0.0, 1.0, -1.0, 1.0, 0.0),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(gen_random(2, 1, 0), Err(Error::InvalidParams(_))));
        assert!(matches!(
            gen_lattice(2, 0.0, 1.0, &[1.0]),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn lattice_unfolds_into_tree() {
        let tree = gen_lattice(2, 0.0, 0.5, &[0.25, 0.5, 0.25]).unwrap();
        assert_eq!(tree.leaves().len(), 9);
        let vals: Vec<f64> = tree.level(1).iter().map(|&n| tree.value(n)).collect();
        assert_eq!(vals, vec![-0.5, 0.0, 0.5]);
    }

    #[test]
    fn conditional_expectation_at_horizon_is_identity() {
        let tree = gen_random(3, 2, 3).unwrap();
        let h: Vec<f64> = (0..tree.leaves().len())
            .map(|i| i as f64 * 0.7 - 1.0)
            .collect();
        assert_eq!(tree.conditional_expectation(&h, 3).unwrap(), h);
    }

    #[test]
    fn conditional_expectation_of_constant() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let h = vec![3.5; 4];
        for t in 0..=2 {
            assert!(tree
                .conditional_expectation(&h, t)
                .unwrap()
                .iter()
                .all(|&v| v == 3.5));
        }
    }

    #[test]
    fn martingale_conditioning() {
        let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let x2: Vec<f64> = tree.leaves().iter().map(|&l| tree.value(l)).collect();
        let e1 = tree.conditional_expectation(&x2, 1).unwrap();
        let x1: Vec<f64> = tree.level(1).iter().map(|&n| tree.value(n)).collect();
        assert_eq!(e1, x1);
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let mut b = TreeBuilder::new(1);
        b.add_child(b.root(), 1.0, 0.5);
        b.add_child(b.root(), 1.0, 0.5);
        assert!(matches!(
            b.build(),
            Err(Error::InvalidTree { node: Some(2), .. })
        ));

        let mut b = TreeBuilder::new(1);
        b.add_child(b.root(), 1.0, 0.5);
        b.add_child(b.root(), 2.0, 0.4);
        assert!(matches!(b.build(), Err(Error::InvalidTree { .. })));

        let mut b = TreeBuilder::new(2);
        b.add_child(b.root(), 1.0, 1.0);
        assert!(matches!(b.build(), Err(Error::InvalidTree { .. })));
    }

    #[test]
    fn weighted_paths_merge_prefixes() {
        let tree = ScenarioTree::from_weighted_paths(
            2,
            &[
                (vec![0.0, 1.0], 0.25),
                (vec![0.0, -1.0], 0.25),
                (vec![1.0, 1.0], 0.5),
            ],
        )
        .unwrap();
        assert_eq!(tree.level(1).len(), 2);
        assert_eq!(tree.leaves().len(), 3);
        assert_eq!(tree.path_prob(tree.level(1)[0]), 0.5);
    }

    #[test]
    fn truncation_drops_last_stage() {
        let tree = gen_random(3, 2, 11).unwrap();
        let t2 = tree.truncate(2).unwrap();
        assert_eq!(t2.horizon(), 2);
        assert_eq!(t2.leaves().len(), 4);
    }

    #[test]
    fn relabelled_tree_is_isomorphic() {
        let mut b = TreeBuilder::new(1);
        b.add_child(b.root(), 2.0, 0.3);
        b.add_child(b.root(), -1.0, 0.7);
        let a = b.build().unwrap();
        let mut b = TreeBuilder::new(1);
        b.add_child(b.root(), -1.0, 0.7);
        b.add_child(b.root(), 2.0, 0.3);
        let c = b.build().unwrap();
        assert!(a.isomorphic(&c));
        assert_ne!(a, c);
    }
}

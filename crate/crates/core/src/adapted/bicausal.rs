//! Turning a causal coupling into a bicausal one by a small perturbation of
//! the second marginal.
//!
//! Given a coupling `pi` of `(X, Y)` that is causal from `X` to `Y`, set
//! `Y^delta_t = Y_t + idx_t(X_t) * delta / (2M)`, where `idx_t` ranks the
//! distinct time-`t` values of `X` and `M` is the largest number of such
//! values over `t`. Each coordinate moves by less than `delta / 2`, and as
//! long as the map `(Y_t, idx_t) -> Y^delta_t` is injective, `X_t` can be
//! read off `Y^delta_t`, which makes the coupling of `X` and `Y^delta`
//! causal in both directions.

use std::collections::HashMap;

use super::{CouplingTree, Direction};
use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

/// Offset scalings tried in turn when the first encoding collides.
const SCALINGS: [f64; 4] = [
    1.0,
    std::f64::consts::FRAC_1_SQRT_2,
    0.577_350_269_189_625_8,
    0.447_213_595_499_957_9,
];

/// Returns a bicausal coupling between the first marginal of `coupling` and
/// a perturbed second marginal `Q^delta`, together with `Q^delta`.
pub fn bicausalize(coupling: &CouplingTree, delta: f64) -> Result<(CouplingTree, ScenarioTree)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "delta = {delta} must be positive"
        )));
    }
    if !coupling.check_causal(Direction::XtoY) {
        return Err(Error::NotCausal);
    }
    let (first, second) = (coupling.first(), coupling.second());
    let horizon = first.horizon();

    // rank of each time-t value of X among the distinct time-t values
    let ranks: Vec<HashMap<u64, usize>> = (1..=horizon)
        .map(|t| {
            let mut vals: Vec<f64> = first
                .level(t)
                .iter()
                .map(|&n| first.value(n) + 0.0)
                .collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.iter()
                .enumerate()
                .map(|(k, v)| (v.to_bits(), k))
                .collect()
        })
        .collect();
    let max_atoms = ranks.iter().map(HashMap::len).max().unwrap_or(1);

    let leaf_pairs: Vec<_> = coupling
        .leaf_masses()
        .into_iter()
        .filter(|m| m.2 > 0.0)
        .collect();
    let encoded = SCALINGS
        .iter()
        .find_map(|&scale| {
            let unit = scale * delta / (2.0 * max_atoms as f64);
            encode(first, second, &leaf_pairs, &ranks, unit)
        })
        .ok_or(Error::DeltaTooSmall { delta })?;

    let weighted: Vec<(Vec<f64>, f64)> = encoded
        .iter()
        .zip(&leaf_pairs)
        .map(|(path, m)| (path.clone(), m.2))
        .collect();
    let perturbed = ScenarioTree::from_weighted_paths(horizon, &weighted)?;
    let masses = encoded
        .iter()
        .zip(&leaf_pairs)
        .map(|(path, &(a, _, w))| {
            let leaf = perturbed
                .find_path(path)
                .expect("every encoded path is a leaf of the perturbed tree");
            (a, leaf, w)
        })
        .collect::<Vec<_>>();
    let out = CouplingTree::from_leaf_masses(first, &perturbed, &masses)?;
    Ok((out, perturbed))
}

/// Encoded second-marginal paths, or `None` if two different
/// `(Y_t, idx_t)` combinations land on the same float at some `t`.
fn encode(
    first: &ScenarioTree,
    second: &ScenarioTree,
    leaf_pairs: &[(crate::tree::NodeId, crate::tree::NodeId, f64)],
    ranks: &[HashMap<u64, usize>],
    unit: f64,
) -> Option<Vec<Vec<f64>>> {
    let horizon = first.horizon();
    let mut seen: Vec<HashMap<u64, (u64, usize)>> = vec![HashMap::new(); horizon];
    let mut out = Vec::with_capacity(leaf_pairs.len());
    for &(a, b, _) in leaf_pairs {
        let (xs, ys) = (first.path_values(a), second.path_values(b));
        let mut path = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let idx = ranks[t][&(xs[t] + 0.0).to_bits()];
            let y = ys[t] + 0.0;
            let encoded = y + idx as f64 * unit + 0.0;
            let combo = (y.to_bits(), idx);
            if *seen[t].entry(encoded.to_bits()).or_insert(combo) != combo {
                return None;
            }
            path.push(encoded);
        }
        out.push(path);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{gen_binomial, TreeBuilder};

    /// P: X_1 = +-1, X_2 = X_1 +- 1; Y = (0, X_2) as a Monge coupling.
    fn merged_fixture() -> CouplingTree {
        let p = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
        let mut b = TreeBuilder::new(2);
        let y1 = b.add_child(b.root(), 0.0, 1.0);
        b.add_child(y1, 2.0, 0.25);
        b.add_child(y1, 0.0, 0.5);
        b.add_child(y1, -2.0, 0.25);
        let q = b.build().unwrap();
        let masses: Vec<_> = p
            .leaves()
            .iter()
            .map(|&a| {
                let target = q.find_path(&[0.0, p.value(a)]).unwrap();
                (a, target, p.path_prob(a))
            })
            .collect();
        CouplingTree::from_leaf_masses(&p, &q, &masses).unwrap()
    }

    #[test]
    fn merged_values_are_separated() {
        let c = merged_fixture();
        assert!(c.check_causal(Direction::XtoY));
        assert!(!c.check_causal(Direction::YtoX));
        let delta = 1e-3;
        let (out, q_delta) = bicausalize(&c, delta).unwrap();
        assert!(out.is_bicausal());
        assert_eq!(q_delta.level(1).len(), 2);
        for (a, b, _) in out.leaf_masses() {
            let orig = c.leaf_masses().into_iter().find(|m| m.0 == a).unwrap().1;
            let (y, yd) = (c.second().path_values(orig), q_delta.path_values(b));
            assert!(y.iter().zip(&yd).all(|(u, v)| (u - v).abs() <= delta));
        }
    }

    #[test]
    fn non_causal_rejected() {
        let c = merged_fixture().transpose();
        assert!(matches!(bicausalize(&c, 0.1), Err(Error::NotCausal)));
    }
}

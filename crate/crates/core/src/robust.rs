//! Lower bounds on the worst-case value over adapted Wasserstein balls,
//! used to check the first-order expansions empirically.
//!
//! Candidate models are adapted Monge perturbations `X + Delta(X)` with a
//! node-indexed displacement `Delta`. The ascent works inside the surrogate
//! ball `sum_n P(n) |Delta(n)|^p <= r^p`, which contains only models within
//! adapted distance `r` when the displacement coupling is bicausal; every
//! reported maximizer is therefore re-verified with the exact distance and
//! shrunk radially if needed.

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapted::{aw_distance, AwParams};
use crate::control::{solve_value, ControlBounds, SolverOptions};
use crate::cost::{Argument, CostModel};
use crate::error::{Error, Result};
use crate::sensitivity::{
    sensitivity_at_policy, sensitivity_at_stopping, sensitivity_terminal, shifted_model,
    worst_case_direction, ProblemClass, SensitivityReport,
};
use crate::stopping::{snell_envelope, solve_stopping, DEFAULT_STOPPING_TOL};
use crate::tree::ScenarioTree;

/// Slack on ball membership.
pub const MEMBERSHIP_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentConfig {
    /// Random restarts in addition to the worst-case-direction seed.
    pub restarts: usize,
    /// Frank-Wolfe iterations per restart.
    pub iterations: usize,
    /// Step halvings tried per iteration.
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            restarts: 2,
            iterations: 25,
            max_halvings: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustQuery {
    pub problem_class: ProblemClass,
    pub tree: ScenarioTree,
    pub model: CostModel,
    pub params: AwParams,
    pub radii: Vec<f64>,
    pub ascent: AscentConfig,
    /// Used by the control class only.
    pub bounds: ControlBounds,
    pub solver: SolverOptions,
    /// Uniqueness tolerance of the stopping class at `P`.
    pub stopping_tol: f64,
}

impl RobustQuery {
    pub fn new(
        problem_class: ProblemClass,
        tree: ScenarioTree,
        model: CostModel,
        params: AwParams,
        radii: Vec<f64>,
    ) -> Self {
        Self {
            problem_class,
            tree,
            model,
            params,
            radii,
            ascent: AscentConfig::default(),
            bounds: ControlBounds::default(),
            solver: SolverOptions::default(),
            stopping_tol: DEFAULT_STOPPING_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tree.horizon() != self.model.horizon() {
            return Err(Error::HorizonMismatch {
                left: self.tree.horizon(),
                right: self.model.horizon(),
            });
        }
        if self.radii.is_empty() {
            return Err(Error::InvalidParams("no radii given".into()));
        }
        if !self.radii.iter().all(|r| r.is_finite() && *r > 0.0)
            || !self.radii.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::InvalidParams(
                "radii must be positive and strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustRow {
    pub r: f64,
    /// Best verified `val(Q) - val(P)` over the ball.
    pub lower_bound: f64,
    /// `val(Q) - val(P)` at the (verified) worst-case-direction seed.
    pub seeded_value: f64,
    pub r_times_v: f64,
    /// Exact adapted distance from `P` to the maximizer.
    pub distance_of_maximizer: f64,
    /// Node-indexed displacement of the maximizer.
    pub displacement: Vec<f64>,
    /// Set when some evaluation at this radius failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustCurve {
    pub problem_class: ProblemClass,
    pub base_value: f64,
    pub first_order: f64,
    pub rows: Vec<RobustRow>,
    /// Intercept of the `1/r`-weighted least-squares fit of
    /// `lower_bound / r` against `r`.
    pub slope_estimate: f64,
    pub slope_stderr: f64,
    /// Linear extrapolation to `r = 0` through the two smallest radii.
    pub richardson_slope: Option<f64>,
}

impl RobustCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,lower_bound,seeded_value,r_times_V,distance_of_maximizer\n");
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                row.r, row.lower_bound, row.seeded_value, row.r_times_v, row.distance_of_maximizer
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Exact membership test `AW_p(P, Q) <= r` with slack [`MEMBERSHIP_SLACK`].
pub fn ball_membership(
    first: &ScenarioTree,
    second: &ScenarioTree,
    params: AwParams,
    r: f64,
) -> Result<(bool, f64)> {
    let d = aw_distance(first, second, params)?.distance;
    Ok((d <= r + MEMBERSHIP_SLACK, d))
}

/// `lim_{r -> 0} y(r)` assuming `y(r) = a + b r` through two samples.
pub fn richardson_limit(r1: f64, y1: f64, r2: f64, y2: f64) -> f64 {
    (r1 * y2 - r2 * y1) / (r1 - r2)
}

/// Weighted least squares `y = a + b r` with weights `1/r`; returns the
/// intercept and its standard error (0 with fewer than three points).
pub fn weighted_slope_fit(r: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = r
        .iter()
        .zip(y)
        .filter(|(_, y)| y.is_finite())
        .map(|(&r, &y)| (r, y))
        .collect();
    match pts.len() {
        0 => return (f64::NAN, f64::NAN),
        1 => return (pts[0].1, 0.0),
        _ => {}
    }
    let (mut sw, mut swr, mut swrr, mut swy, mut swry) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(r, y) in &pts {
        let w = 1.0 / r;
        sw += w;
        swr += w * r;
        swrr += w * r * r;
        swy += w * y;
        swry += w * r * y;
    }
    let det = sw * swrr - swr * swr;
    let a = (swrr * swy - swr * swry) / det;
    let b = (sw * swry - swr * swy) / det;
    if pts.len() < 3 {
        return (a, 0.0);
    }
    let rss: f64 = pts.iter().map(|&(r, y)| (y - a - b * r).powi(2) / r).sum();
    let sigma2 = rss / (pts.len() - 2) as f64;
    (a, (sigma2 * swrr / det).sqrt())
}

struct Evaluation {
    value: f64,
    /// `d/dx f` along each leaf of `P`, at the shifted path.
    integrand: Vec<Vec<f64>>,
}

struct Evaluator<'a> {
    query: &'a RobustQuery,
    /// Path nodes of every leaf of `P`.
    paths: Vec<Vec<crate::tree::NodeId>>,
}

impl<'a> Evaluator<'a> {
    fn new(query: &'a RobustQuery) -> Self {
        let tree = &query.tree;
        Self {
            query,
            paths: tree.leaves().iter().map(|&l| tree.path_nodes(l)).collect(),
        }
    }

    fn shifted_path(&self, k: usize, shift: &[f64]) -> Vec<f64> {
        let tree = &self.query.tree;
        self.paths[k]
            .iter()
            .map(|&n| tree.value(n) + shift[n.0] + 0.0)
            .collect()
    }

    fn eval(&self, shift: &[f64]) -> Result<Evaluation> {
        let q = &self.query;
        let tree = &q.tree;
        let model = &q.model;
        let shifted: Vec<Vec<f64>> = (0..self.paths.len())
            .map(|k| self.shifted_path(k, shift))
            .collect();
        match q.problem_class {
            ProblemClass::Terminal => {
                let mut value = 0.0;
                let mut integrand = Vec::with_capacity(shifted.len());
                for (&leaf, x) in tree.leaves().iter().zip(&shifted) {
                    value += tree.path_prob(leaf) * model.eval(x, Argument::None)?;
                    integrand.push(model.grad_x(x, Argument::None)?);
                }
                Ok(Evaluation { value, integrand })
            }
            ProblemClass::Control => {
                let perturbed = shifted_model(tree, shift, 0.0)?.tree;
                let report = solve_value(&perturbed, model, q.bounds, &q.solver)?;
                let integrand = shifted
                    .iter()
                    .map(|x| {
                        let leaf = perturbed.find_path(x).expect("shifted path is present");
                        model.grad_x(
                            x,
                            Argument::Control(&report.policy.path_controls(&perturbed, leaf)),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Evaluation {
                    value: report.value,
                    integrand,
                })
            }
            ProblemClass::Stopping => {
                let perturbed = shifted_model(tree, shift, 0.0)?.tree;
                let sol = snell_envelope(&perturbed, model)?;
                let integrand = shifted
                    .iter()
                    .map(|x| {
                        let leaf = perturbed.find_path(x).expect("shifted path is present");
                        model.grad_x(
                            x,
                            Argument::Time(sol.policy.tau[perturbed.leaf_index(leaf)]),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Evaluation {
                    value: sol.value,
                    integrand,
                })
            }
        }
    }

    /// Node-indexed gradient of the value in `Delta`: `P(n) E[h_t | n]`.
    fn gradient(&self, ev: &Evaluation) -> Vec<f64> {
        let tree = &self.query.tree;
        let mut g = vec![0.0; tree.len()];
        for ((path, h), &leaf) in self.paths.iter().zip(&ev.integrand).zip(tree.leaves()) {
            let w = tree.path_prob(leaf);
            for (&n, dh) in path.iter().zip(h) {
                g[n.0] += w * dh;
            }
        }
        g
    }

    /// `sum_n P(n) |Delta(n)|^p`.
    fn surrogate_norm(&self, shift: &[f64]) -> f64 {
        let tree = &self.query.tree;
        let p = self.query.params.p();
        tree.nodes()
            .iter()
            .filter(|n| n.time > 0)
            .map(|n| tree.path_prob(n.id) * shift[n.id.0].abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    /// Maximizer of `<g, Delta>` over the surrogate ball of radius `r`.
    fn linear_oracle(&self, g: &[f64], r: f64) -> Vec<f64> {
        let tree = &self.query.tree;
        let q = self.query.params.q();
        let p = self.query.params.p();
        let f: Vec<f64> = tree
            .nodes()
            .iter()
            .map(|n| {
                if n.time == 0 {
                    0.0
                } else {
                    g[n.id.0] / tree.path_prob(n.id)
                }
            })
            .collect();
        let total: f64 = tree
            .nodes()
            .iter()
            .filter(|n| n.time > 0)
            .map(|n| tree.path_prob(n.id) * f[n.id.0].abs().powf(q))
            .sum();
        if !(total > 0.0) {
            return vec![0.0; tree.len()];
        }
        let scale = r / total.powf(1.0 / p);
        f.iter()
            .map(|v| scale * v.signum() * v.abs().powf(q - 1.0))
            .collect()
    }

    /// Frank-Wolfe ascent started at `start`; returns the final displacement.
    fn ascend(&self, start: Vec<f64>, r: f64) -> Result<(Vec<f64>, f64)> {
        let cfg = &self.query.ascent;
        let mut cur = start;
        let mut ev = self.eval(&cur)?;
        for _ in 0..cfg.iterations {
            let g = self.gradient(&ev);
            let s = self.linear_oracle(&g, r);
            let gap: f64 = g
                .iter()
                .zip(s.iter().zip(&cur))
                .map(|(g, (s, c))| g * (s - c))
                .sum();
            if !(gap > 1e-15 * ev.value.abs().max(1.0)) {
                break;
            }
            let mut gamma = 1.0;
            let mut improved = false;
            for _ in 0..=cfg.max_halvings {
                let cand: Vec<f64> = cur
                    .iter()
                    .zip(&s)
                    .map(|(c, s)| c + gamma * (s - c))
                    .collect();
                if let Ok(next) = self.eval(&cand) {
                    if next.value > ev.value {
                        cur = cand;
                        ev = next;
                        improved = true;
                        break;
                    }
                }
                gamma *= 0.5;
            }
            if !improved {
                break;
            }
        }
        Ok((cur, ev.value))
    }

    /// Largest radial scaling of `shift` inside the exact ball, with its
    /// value and distance.
    fn verify(&self, shift: Vec<f64>, value: f64, r: f64) -> Result<(Vec<f64>, f64, f64)> {
        let tree = &self.query.tree;
        let params = self.query.params;
        let distance_at = |s: &[f64]| -> Result<f64> {
            let q = shifted_model(tree, s, 0.0)?.tree;
            Ok(aw_distance(tree, &q, params)?.distance)
        };
        let d = distance_at(&shift)?;
        if d <= r + MEMBERSHIP_SLACK {
            return Ok((shift, value, d));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = (vec![0.0; shift.len()], 0.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let cand: Vec<f64> = shift.iter().map(|v| mid * v).collect();
            let d = distance_at(&cand)?;
            if d <= r + MEMBERSHIP_SLACK {
                lo = mid;
                best = (cand, d);
            } else {
                hi = mid;
            }
        }
        let value = self.eval(&best.0)?.value;
        Ok((best.0, value, best.1))
    }

    fn random_start(&self, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let tree = &self.query.tree;
        let raw: Vec<f64> = tree
            .nodes()
            .iter()
            .map(|n| {
                if n.time == 0 {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let norm = self.surrogate_norm(&raw);
        if norm > 0.0 {
            raw.iter().map(|v| v * r / norm).collect()
        } else {
            raw
        }
    }
}

struct RadiusOutcome {
    best: (Vec<f64>, f64, f64),
    seeded_value: f64,
    note: Option<String>,
}

fn run_radius(
    ev: &Evaluator<'_>,
    direction: &[f64],
    r: f64,
    radius_index: usize,
) -> Result<RadiusOutcome> {
    let cfg = ev.query.ascent;
    let seed_shift: Vec<f64> = direction.iter().map(|z| r * z).collect();
    let seed_eval = ev.eval(&seed_shift)?;
    let seeded = ev.verify(seed_shift.clone(), seed_eval.value, r)?;

    let starts: Vec<(usize, Vec<f64>)> = std::iter::once((0, seed_shift))
        .chain((1..=cfg.restarts).map(|k| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ ((radius_index as u64) << 32) ^ k as u64);
            (k, ev.random_start(r, &mut rng))
        }))
        .collect();
    let results: Vec<Result<(Vec<f64>, f64, f64)>> = starts
        .into_par_iter()
        .map(|(_, start)| {
            let (shift, value) = ev.ascend(start, r)?;
            ev.verify(shift, value, r)
        })
        .collect();

    let mut best = seeded.clone();
    let mut note = None;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(cand) if cand.1 > best.1 => best = cand,
            Ok(_) => {}
            Err(e) => {
                note.get_or_insert_with(|| format!("restart {k}: {e}"));
            }
        }
    }
    Ok(RadiusOutcome {
        best,
        seeded_value: seeded.1,
        note,
    })
}

/// First-order report of the query's problem class at `P`.
pub fn first_order_report(query: &RobustQuery) -> Result<SensitivityReport> {
    let (tree, model, params) = (&query.tree, &query.model, query.params);
    match query.problem_class {
        ProblemClass::Terminal => sensitivity_terminal(tree, model, params),
        ProblemClass::Control => {
            let report = solve_value(tree, model, query.bounds, &query.solver)?;
            sensitivity_at_policy(tree, model, &report.policy, params)
        }
        ProblemClass::Stopping => {
            let sol = solve_stopping(tree, model, query.stopping_tol)?;
            sensitivity_at_stopping(tree, model, &sol.policy, params)
        }
    }
}

/// Error-versus-radius curve of the worst-case value.
pub fn robust_curve(query: &RobustQuery) -> Result<RobustCurve> {
    query.validate()?;
    let report = first_order_report(query)?;
    let direction = worst_case_direction(&query.tree, &report)?.node_values(&query.tree);
    let ev = Evaluator::new(query);
    let base_value = ev.eval(&vec![0.0; query.tree.len()])?.value;

    let outcomes: Vec<(f64, Result<RadiusOutcome>)> = query
        .radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| (r, run_radius(&ev, &direction, r, i)))
        .collect();

    let mut rows: Vec<RobustRow> = Vec::with_capacity(outcomes.len());
    for (r, outcome) in outcomes {
        let mut row = match outcome {
            Ok(o) => RobustRow {
                r,
                lower_bound: o.best.1 - base_value,
                seeded_value: o.seeded_value - base_value,
                r_times_v: r * report.first_order,
                distance_of_maximizer: o.best.2,
                displacement: o.best.0,
                note: o.note,
            },
            Err(e) => RobustRow {
                r,
                lower_bound: f64::NAN,
                seeded_value: f64::NAN,
                r_times_v: r * report.first_order,
                distance_of_maximizer: f64::NAN,
                displacement: Vec::new(),
                note: Some(e.to_string()),
            },
        };
        // the smaller ball's maximizer stays feasible at larger radii
        if let Some(prev) = rows.iter().rev().find(|p| p.lower_bound.is_finite()) {
            if !(row.lower_bound >= prev.lower_bound) {
                row.lower_bound = prev.lower_bound;
                row.distance_of_maximizer = prev.distance_of_maximizer;
                row.displacement = prev.displacement.clone();
            }
        }
        rows.push(row);
    }

    let rs: Vec<f64> = rows.iter().map(|row| row.r).collect();
    let ys: Vec<f64> = rows.iter().map(|row| row.lower_bound / row.r).collect();
    let (slope_estimate, slope_stderr) = weighted_slope_fit(&rs, &ys);
    let richardson_slope = (rows.len() >= 2 && ys[0].is_finite() && ys[1].is_finite())
        .then(|| richardson_limit(rs[0], ys[0], rs[1], ys[1]));
    Ok(RobustCurve {
        problem_class: query.problem_class,
        base_value,
        first_order: report.first_order,
        rows,
        slope_estimate,
        slope_stderr,
        richardson_slope,
    })
}

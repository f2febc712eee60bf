//! Finite-difference audit of cost derivatives, plus the convexity and
//! measurability probes applied to user-registered costs.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CostModel, ModelKind};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Accepted relative error `|fd - analytic| / max(1, |analytic|)`.
pub const FD_TOL: f64 = 1e-6;
/// Smallest accepted Hessian eigenvalue of a controlled cost, relative to
/// `max(1, spectral radius)` so that roundoff in large Hessians is not
/// mistaken for nonconvexity.
pub const CONVEXITY_TOL: f64 = -1e-10;

/// `min eig(h) / max(1, max |eig(h)|)`.
pub(crate) fn relative_min_eigenvalue(h: DMatrix<f64>) -> f64 {
    let eigs = SymmetricEigen::new(h).eigenvalues;
    eigs.min() / eigs.amax().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    /// Number of random draws `(x, a)` or `(x, t)` examined.
    pub evaluations: usize,
    pub max_rel_error: f64,
    /// Description of the worst derivative entry.
    pub worst: String,
    /// Smallest relative Hessian eigenvalue seen (controlled kinds only).
    pub min_hessian_eig: Option<f64>,
    /// Whether `f(x, t)` ignored every perturbation of `x_{t+1..T}`.
    pub measurable: bool,
}

impl AuditReport {
    pub fn check(&self) -> Result<()> {
        if self.max_rel_error > FD_TOL {
            return Err(Error::DerivativeMismatch {
                what: self.worst.clone(),
                error: self.max_rel_error,
            });
        }
        if let Some(eig) = self.min_hessian_eig {
            if eig < CONVEXITY_TOL {
                return Err(Error::NotConvex(format!(
                    "control Hessian has eigenvalue {eig}"
                )));
            }
        }
        if !self.measurable {
            return Err(Error::InvalidParams(
                "stopping cost reads coordinates after the stopping time".into(),
            ));
        }
        Ok(())
    }

    fn record(&mut self, what: impl FnOnce() -> String, fd: f64, analytic: f64) {
        let err = (fd - analytic).abs() / analytic.abs().max(1.0);
        if !(err <= self.max_rel_error) {
            self.max_rel_error = err;
            self.worst = what();
        }
    }
}

fn central(f: impl Fn(&[f64]) -> f64, at: &[f64], k: usize) -> f64 {
    let (mut up, mut down) = (at.to_vec(), at.to_vec());
    up[k] += FD_STEP;
    down[k] -= FD_STEP;
    (f(&up) - f(&down)) / (2.0 * FD_STEP)
}

/// Compares every analytic derivative of `model` with central differences
/// at `draws` random points in `[-2, 2]^T`.
pub fn audit(model: &CostModel, draws: usize, seed: u64) -> Result<AuditReport> {
    let horizon = model.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AuditReport {
        evaluations: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        min_hessian_eig: None,
        measurable: true,
    };
    for _ in 0..draws {
        let x: Vec<f64> = (0..horizon).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a: Vec<f64> = (0..horizon).map(|_| rng.random_range(-2.0..2.0)).collect();
        match model.kind() {
            ModelKind::Terminal => {
                let f = model.as_terminal()?;
                let g = f.grad_x(&x);
                for k in 0..horizon {
                    report.record(
                        || format!("d/dx_{}", k + 1),
                        central(|y| f.eval(y), &x, k),
                        g[k],
                    );
                }
            }
            ModelKind::Controlled | ModelKind::Utility => {
                let f = model.as_controlled()?;
                let (gx, ga, h) = (f.grad_x(&x, &a), f.grad_a(&x, &a), f.hess_a(&x, &a));
                for k in 0..horizon {
                    report.record(
                        || format!("d/dx_{}", k + 1),
                        central(|y| f.eval(y, &a), &x, k),
                        gx[k],
                    );
                    report.record(
                        || format!("d/da_{}", k + 1),
                        central(|b| f.eval(&x, b), &a, k),
                        ga[k],
                    );
                    for j in 0..horizon {
                        let fd = central(|b| f.grad_a(&x, b)[j], &a, k);
                        report.record(|| format!("d2/da_{}da_{}", j + 1, k + 1), fd, h[(j, k)]);
                    }
                }
                let eig = relative_min_eigenvalue(h);
                report.min_hessian_eig =
                    Some(report.min_hessian_eig.map_or(eig, |m: f64| m.min(eig)));
            }
            ModelKind::Stopping => {
                let f = model.as_stopping()?;
                for t in 1..=horizon {
                    let g = f.grad_x(&x, t);
                    for k in 0..horizon {
                        report.record(
                            || format!("d/dx_{} at t = {t}", k + 1),
                            central(|y| f.eval(y, t), &x, k),
                            g[k],
                        );
                    }
                    let mut future = x.clone();
                    for v in future.iter_mut().skip(t) {
                        *v += rng.random_range(-1.0..1.0);
                    }
                    if f.eval(&future, t) != f.eval(&x, t) {
                        report.measurable = false;
                    }
                }
            }
        }
        report.evaluations += 1;
    }
    Ok(report)
}

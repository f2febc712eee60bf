//! Objective functions of the three problem classes with exact derivatives.
//!
//! A [`CostModel`] wraps one of
//! - a terminal cost `f(x)` (expectation functionals),
//! - a controlled cost `f(x, a)` convex in the control `a`,
//! - a stopping cost `f(x, t)` measurable with respect to `x_1..x_t`,
//! - a utility model, a controlled cost with extra structure.
//!
//! Catalog entries live in [`catalog`]; arbitrary user costs are accepted
//! through the `register_*` constructors, which audit the supplied
//! derivatives against central finite differences before accepting them.

pub(crate) mod audit;
pub mod catalog;

pub use audit::{audit, AuditReport, FD_STEP, FD_TOL};
pub use catalog::{
    CatalogModel, ControlledSpec, LossFn, ScalarFn, StoppingSpec, TerminalSpec, UtilityModel,
};

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use catalog::UtilityCost;

/// `f: R^T -> R`.
pub trait TerminalCost: Send + Sync + Debug {
    fn eval(&self, x: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64]) -> Vec<f64>;
}

/// `f: R^T x R^T -> R`, convex in the control argument.
pub trait ControlledCost: Send + Sync + Debug {
    fn eval(&self, x: &[f64], a: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], a: &[f64]) -> Vec<f64>;
    fn grad_a(&self, x: &[f64], a: &[f64]) -> Vec<f64>;
    fn hess_a(&self, x: &[f64], a: &[f64]) -> DMatrix<f64>;
}

/// `f(x, t)` for `t = 1..=T`; must only read `x_1..x_t`.
pub trait StoppingCost: Send + Sync + Debug {
    fn eval(&self, x: &[f64], t: usize) -> f64;
    fn grad_x(&self, x: &[f64], t: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Terminal,
    Controlled,
    Stopping,
    Utility,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Terminal => "terminal",
            ModelKind::Controlled => "controlled",
            ModelKind::Stopping => "stopping",
            ModelKind::Utility => "utility",
        }
    }
}

/// The second argument of a cost evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Argument<'a> {
    None,
    Control(&'a [f64]),
    Time(usize),
}

#[derive(Debug, Clone)]
enum Body {
    Terminal(Arc<dyn TerminalCost>),
    Controlled(Arc<dyn ControlledCost>),
    Stopping(Arc<dyn StoppingCost>),
    Utility(Arc<UtilityCost>),
}

/// An objective on paths of length `horizon`.
#[derive(Debug, Clone)]
pub struct CostModel {
    horizon: usize,
    body: Body,
}

impl CostModel {
    pub(crate) fn terminal(horizon: usize, cost: Arc<dyn TerminalCost>) -> Self {
        Self {
            horizon,
            body: Body::Terminal(cost),
        }
    }

    pub(crate) fn controlled(horizon: usize, cost: Arc<dyn ControlledCost>) -> Self {
        Self {
            horizon,
            body: Body::Controlled(cost),
        }
    }

    pub(crate) fn stopping(horizon: usize, cost: Arc<dyn StoppingCost>) -> Self {
        Self {
            horizon,
            body: Body::Stopping(cost),
        }
    }

    pub(crate) fn utility_cost(horizon: usize, cost: UtilityCost) -> Self {
        Self {
            horizon,
            body: Body::Utility(Arc::new(cost)),
        }
    }

    /// Accepts a user terminal cost after a finite-difference audit of its
    /// gradient.
    pub fn register_terminal(horizon: usize, cost: Arc<dyn TerminalCost>) -> Result<Self> {
        Self::audited(Self::terminal(horizon, cost))
    }

    /// Accepts a user controlled cost after auditing its derivatives and
    /// probing convexity in the control.
    pub fn register_controlled(horizon: usize, cost: Arc<dyn ControlledCost>) -> Result<Self> {
        Self::audited(Self::controlled(horizon, cost))
    }

    /// Accepts a user stopping cost after auditing its gradient and probing
    /// that `f(x, t)` ignores `x_{t+1..T}`.
    pub fn register_stopping(horizon: usize, cost: Arc<dyn StoppingCost>) -> Result<Self> {
        Self::audited(Self::stopping(horizon, cost))
    }

    fn audited(model: Self) -> Result<Self> {
        if model.horizon == 0 {
            return Err(Error::InvalidParams("horizon must be at least 1".into()));
        }
        audit(&model, 64, 0x5eed)?.check()?;
        Ok(model)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kind(&self) -> ModelKind {
        match self.body {
            Body::Terminal(_) => ModelKind::Terminal,
            Body::Controlled(_) => ModelKind::Controlled,
            Body::Stopping(_) => ModelKind::Stopping,
            Body::Utility(_) => ModelKind::Utility,
        }
    }

    pub fn as_terminal(&self) -> Result<&dyn TerminalCost> {
        match &self.body {
            Body::Terminal(c) => Ok(c.as_ref()),
            _ => Err(self.wrong_kind("terminal")),
        }
    }

    /// The controlled view; utility models qualify.
    pub fn as_controlled(&self) -> Result<&dyn ControlledCost> {
        match &self.body {
            Body::Controlled(c) => Ok(c.as_ref()),
            Body::Utility(c) => Ok(c.as_ref()),
            _ => Err(self.wrong_kind("controlled")),
        }
    }

    pub fn as_stopping(&self) -> Result<&dyn StoppingCost> {
        match &self.body {
            Body::Stopping(c) => Ok(c.as_ref()),
            _ => Err(self.wrong_kind("stopping")),
        }
    }

    pub fn utility(&self) -> Option<&UtilityModel> {
        match &self.body {
            Body::Utility(c) => Some(c.model()),
            _ => None,
        }
    }

    fn wrong_kind(&self, expected: &'static str) -> Error {
        Error::WrongModelKind {
            expected,
            got: self.kind().name(),
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.horizon {
            return Err(Error::DimensionMismatch {
                expected: self.horizon,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn check_arg(&self, x: &[f64], arg: Argument<'_>) -> Result<()> {
        self.check_dim(x)?;
        match arg {
            Argument::Control(a) => self.check_dim(a),
            Argument::Time(t) if t == 0 || t > self.horizon => Err(Error::InvalidParams(format!(
                "stopping time {t} outside 1..={}",
                self.horizon
            ))),
            _ => Ok(()),
        }
    }

    /// `f(x)`, `f(x, a)` or `f(x, t)` depending on the model kind.
    pub fn eval(&self, x: &[f64], arg: Argument<'_>) -> Result<f64> {
        self.check_arg(x, arg)?;
        match arg {
            Argument::None => Ok(self.as_terminal()?.eval(x)),
            Argument::Control(a) => Ok(self.as_controlled()?.eval(x, a)),
            Argument::Time(t) => Ok(self.as_stopping()?.eval(x, t)),
        }
    }

    /// Gradient in the path variable.
    pub fn grad_x(&self, x: &[f64], arg: Argument<'_>) -> Result<Vec<f64>> {
        self.check_arg(x, arg)?;
        match arg {
            Argument::None => Ok(self.as_terminal()?.grad_x(x)),
            Argument::Control(a) => Ok(self.as_controlled()?.grad_x(x, a)),
            Argument::Time(t) => Ok(self.as_stopping()?.grad_x(x, t)),
        }
    }

    pub fn grad_a(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_arg(x, Argument::Control(a))?;
        Ok(self.as_controlled()?.grad_a(x, a))
    }

    pub fn hess_a(&self, x: &[f64], a: &[f64]) -> Result<DMatrix<f64>> {
        self.check_arg(x, Argument::Control(a))?;
        Ok(self.as_controlled()?.hess_a(x, a))
    }

    /// The model `lambda * f`. Utility models become plain controlled costs.
    pub fn scaled(&self, lambda: f64) -> CostModel {
        let body = match &self.body {
            Body::Terminal(c) => Body::Terminal(Arc::new(Scaled {
                inner: c.clone(),
                lambda,
            })),
            Body::Controlled(c) => Body::Controlled(Arc::new(Scaled {
                inner: c.clone(),
                lambda,
            })),
            Body::Utility(c) => {
                let inner: Arc<dyn ControlledCost> = c.clone();
                Body::Controlled(Arc::new(Scaled { inner, lambda }))
            }
            Body::Stopping(c) => Body::Stopping(Arc::new(Scaled {
                inner: c.clone(),
                lambda,
            })),
        };
        CostModel {
            horizon: self.horizon,
            body,
        }
    }
}

#[derive(Debug)]
struct Scaled<C: ?Sized> {
    inner: Arc<C>,
    lambda: f64,
}

fn scale(v: Vec<f64>, lambda: f64) -> Vec<f64> {
    v.into_iter().map(|g| lambda * g).collect()
}

impl TerminalCost for Scaled<dyn TerminalCost> {
    fn eval(&self, x: &[f64]) -> f64 {
        self.lambda * self.inner.eval(x)
    }

    fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        scale(self.inner.grad_x(x), self.lambda)
    }
}

impl ControlledCost for Scaled<dyn ControlledCost> {
    fn eval(&self, x: &[f64], a: &[f64]) -> f64 {
        self.lambda * self.inner.eval(x, a)
    }

    fn grad_x(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        scale(self.inner.grad_x(x, a), self.lambda)
    }

    fn grad_a(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        scale(self.inner.grad_a(x, a), self.lambda)
    }

    fn hess_a(&self, x: &[f64], a: &[f64]) -> DMatrix<f64> {
        self.inner.hess_a(x, a) * self.lambda
    }
}

impl StoppingCost for Scaled<dyn StoppingCost> {
    fn eval(&self, x: &[f64], t: usize) -> f64 {
        self.lambda * self.inner.eval(x, t)
    }

    fn grad_x(&self, x: &[f64], t: usize) -> Vec<f64> {
        scale(self.inner.grad_x(x, t), self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct Cubic;

    impl TerminalCost for Cubic {
        fn eval(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v.powi(3)).sum()
        }

        fn grad_x(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| 3.0 * v * v).collect()
        }
    }

    #[derive(Debug)]
    struct WrongCubic;

    impl TerminalCost for WrongCubic {
        fn eval(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v.powi(3)).sum()
        }

        fn grad_x(&self, x: &[f64]) -> Vec<f64> {
            x.iter().map(|v| 2.0 * v * v).collect()
        }
    }

    #[derive(Debug)]
    struct Peeking;

    impl StoppingCost for Peeking {
        fn eval(&self, x: &[f64], _t: usize) -> f64 {
            x[x.len() - 1]
        }

        fn grad_x(&self, x: &[f64], _t: usize) -> Vec<f64> {
            let mut g = vec![0.0; x.len()];
            g[x.len() - 1] = 1.0;
            g
        }
    }

    #[test]
    fn registration_audits_derivatives() {
        assert!(CostModel::register_terminal(3, Arc::new(Cubic)).is_ok());
        assert!(matches!(
            CostModel::register_terminal(3, Arc::new(WrongCubic)),
            Err(Error::DerivativeMismatch { .. })
        ));
    }

    #[test]
    fn registration_rejects_anticipating_stopping_cost() {
        assert!(CostModel::register_stopping(2, Arc::new(Peeking)).is_err());
    }

    #[test]
    fn dimension_and_kind_checks() {
        let m = CostModel::register_terminal(2, Arc::new(Cubic)).unwrap();
        assert!(matches!(
            m.eval(&[1.0], Argument::None),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            m.grad_a(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::WrongModelKind { .. })
        ));
        assert_eq!(m.eval(&[1.0, 2.0], Argument::None).unwrap(), 9.0);
    }

    #[test]
    fn scaling_is_linear() {
        let m = CostModel::register_terminal(2, Arc::new(Cubic))
            .unwrap()
            .scaled(2.5);
        assert_eq!(m.eval(&[1.0, 2.0], Argument::None).unwrap(), 22.5);
        assert_eq!(
            m.grad_x(&[1.0, 2.0], Argument::None).unwrap(),
            vec![7.5, 30.0]
        );
    }
}

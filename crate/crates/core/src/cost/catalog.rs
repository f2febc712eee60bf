//! Parametric cost catalog, addressable by name and JSON parameters.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ControlledCost, CostModel, StoppingCost, TerminalCost};
use crate::error::{Error, Result};

fn one() -> f64 {
    1.0
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `eps * ln(1 + exp(z / eps))` with its first two derivatives.
fn softplus(z: f64, eps: f64) -> (f64, f64, f64) {
    let u = z / eps;
    let s = sigmoid(u);
    let value = eps * (u.max(0.0) + (-u.abs()).exp().ln_1p());
    (value, s, s * (1.0 - s) / eps)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "{name} = {v} must be positive"
        )));
    }
    Ok(())
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("{name} must be finite")));
    }
    Ok(())
}

fn check_len(name: &str, v: &[f64], horizon: usize) -> Result<()> {
    if v.len() != horizon {
        return Err(Error::InvalidParams(format!(
            "{name} has length {} but the horizon is {horizon}",
            v.len()
        )));
    }
    check_finite(name, v)
}

/// Scalar functions `g: R -> R` with two derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum ScalarFn {
    Linear {
        slope: f64,
        #[serde(default)]
        intercept: f64,
    },
    Quadratic {
        scale: f64,
        #[serde(default)]
        center: f64,
    },
    /// `scale * softplus(x - strike)`.
    SoftplusCall {
        strike: f64,
        smoothing: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * softplus(strike - x)`.
    SoftplusPut {
        strike: f64,
        smoothing: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * exp(rate * x)`.
    Exp {
        rate: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

impl ScalarFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarFn::Linear { slope, intercept } => {
                check_finite("linear coefficients", &[slope, intercept])
            }
            ScalarFn::Quadratic { scale, center } => {
                check_finite("quadratic coefficients", &[scale, center])
            }
            ScalarFn::SoftplusCall {
                strike,
                smoothing,
                scale,
            }
            | ScalarFn::SoftplusPut {
                strike,
                smoothing,
                scale,
            } => {
                check_positive("smoothing", smoothing)?;
                check_finite("softplus coefficients", &[strike, scale])
            }
            ScalarFn::Exp { rate, scale } => {
                check_finite("exponential coefficients", &[rate, scale])
            }
        }
    }

    /// `(g(x), g'(x), g''(x))`.
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        match *self {
            ScalarFn::Linear { slope, intercept } => (slope * x + intercept, slope, 0.0),
            ScalarFn::Quadratic { scale, center } => {
                let d = x - center;
                (scale * d * d, 2.0 * scale * d, 2.0 * scale)
            }
            ScalarFn::SoftplusCall {
                strike,
                smoothing,
                scale,
            } => {
                let (v, d1, d2) = softplus(x - strike, smoothing);
                (scale * v, scale * d1, scale * d2)
            }
            ScalarFn::SoftplusPut {
                strike,
                smoothing,
                scale,
            } => {
                let (v, d1, d2) = softplus(strike - x, smoothing);
                (scale * v, -scale * d1, scale * d2)
            }
            ScalarFn::Exp { rate, scale } => {
                let e = scale * (rate * x).exp();
                (e, rate * e, rate * rate * e)
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval3(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval3(x).1
    }

    pub fn bounded_derivative(&self) -> bool {
        matches!(
            self,
            ScalarFn::Linear { .. } | ScalarFn::SoftplusCall { .. } | ScalarFn::SoftplusPut { .. }
        )
    }
}

/// Terminal costs `f: R^T -> R`. Coordinates are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum TerminalSpec {
    /// `c . x`.
    Linear {
        c: Vec<f64>,
    },
    /// `sum_t w_t (x_t - center)^2`.
    Quadratic {
        weights: Vec<f64>,
        #[serde(default)]
        center: f64,
    },
    /// `scale * x_i * x_j`.
    Product {
        i: usize,
        j: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `softplus(x_time - strike)`; `time` defaults to the horizon.
    SoftplusCall {
        strike: f64,
        smoothing: f64,
        #[serde(default)]
        time: Option<usize>,
    },
    /// `softplus(mean(x) - strike)`.
    AsianCall {
        strike: f64,
        smoothing: f64,
    },
    /// `exp(gamma * c . x) / gamma`.
    Exponential {
        gamma: f64,
        c: Vec<f64>,
    },
    /// `sum_t g(x_t)`.
    Separable {
        g: ScalarFn,
    },
    Constant {
        value: f64,
    },
}

impl TerminalSpec {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let coordinate = |name: &str, k: usize| {
            if k == 0 || k > horizon {
                Err(Error::InvalidParams(format!(
                    "{name} = {k} outside 1..={horizon}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            TerminalSpec::Linear { c } => check_len("c", c, horizon),
            TerminalSpec::Quadratic { weights, center } => {
                check_len("weights", weights, horizon)?;
                check_finite("center", &[*center])
            }
            TerminalSpec::Product { i, j, scale } => {
                coordinate("i", *i)?;
                coordinate("j", *j)?;
                check_finite("scale", &[*scale])
            }
            TerminalSpec::SoftplusCall {
                strike,
                smoothing,
                time,
            } => {
                check_positive("smoothing", *smoothing)?;
                check_finite("strike", &[*strike])?;
                time.map_or(Ok(()), |t| coordinate("time", t))
            }
            TerminalSpec::AsianCall { strike, smoothing } => {
                check_positive("smoothing", *smoothing)?;
                check_finite("strike", &[*strike])
            }
            TerminalSpec::Exponential { gamma, c } => {
                check_len("c", c, horizon)?;
                if !(gamma.is_finite() && *gamma != 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "gamma = {gamma} must be finite and nonzero"
                    )));
                }
                Ok(())
            }
            TerminalSpec::Separable { g } => g.validate(),
            TerminalSpec::Constant { value } => check_finite("value", &[*value]),
        }
    }

    pub fn build(&self, horizon: usize) -> Result<CostModel> {
        self.validate(horizon)?;
        Ok(CostModel::terminal(horizon, Arc::new(self.clone())))
    }

    /// Whether `grad_x` is bounded on all of `R^T` (documentation flag).
    pub fn bounded_derivative(&self) -> bool {
        match self {
            TerminalSpec::Linear { .. }
            | TerminalSpec::SoftplusCall { .. }
            | TerminalSpec::AsianCall { .. }
            | TerminalSpec::Constant { .. } => true,
            TerminalSpec::Separable { g } => g.bounded_derivative(),
            _ => false,
        }
    }
}

impl TerminalCost for TerminalSpec {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TerminalSpec::Linear { c } => c.iter().zip(x).map(|(c, x)| c * x).sum(),
            TerminalSpec::Quadratic { weights, center } => weights
                .iter()
                .zip(x)
                .map(|(w, x)| w * (x - center) * (x - center))
                .sum(),
            TerminalSpec::Product { i, j, scale } => scale * x[i - 1] * x[j - 1],
            TerminalSpec::SoftplusCall {
                strike,
                smoothing,
                time,
            } => softplus(x[time.unwrap_or(x.len()) - 1] - strike, *smoothing).0,
            TerminalSpec::AsianCall { strike, smoothing } => {
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                softplus(mean - strike, *smoothing).0
            }
            TerminalSpec::Exponential { gamma, c } => {
                let s: f64 = c.iter().zip(x).map(|(c, x)| c * x).sum();
                (gamma * s).exp() / gamma
            }
            TerminalSpec::Separable { g } => x.iter().map(|&v| g.value(v)).sum(),
            TerminalSpec::Constant { value } => *value,
        }
    }

    fn grad_x(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            TerminalSpec::Linear { c } => g.copy_from_slice(c),
            TerminalSpec::Quadratic { weights, center } => {
                for (k, (w, v)) in weights.iter().zip(x).enumerate() {
                    g[k] = 2.0 * w * (v - center);
                }
            }
            TerminalSpec::Product { i, j, scale } => {
                g[i - 1] += scale * x[j - 1];
                g[j - 1] += scale * x[i - 1];
            }
            TerminalSpec::SoftplusCall {
                strike,
                smoothing,
                time,
            } => {
                let k = time.unwrap_or(x.len()) - 1;
                g[k] = softplus(x[k] - strike, *smoothing).1;
            }
            TerminalSpec::AsianCall { strike, smoothing } => {
                let n = x.len() as f64;
                let d = softplus(x.iter().sum::<f64>() / n - strike, *smoothing).1 / n;
                g.iter_mut().for_each(|v| *v = d);
            }
            TerminalSpec::Exponential { gamma, c } => {
                let e = (gamma * c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()).exp();
                for (k, ck) in c.iter().enumerate() {
                    g[k] = ck * e;
                }
            }
            TerminalSpec::Separable { g: h } => {
                for (k, &v) in x.iter().enumerate() {
                    g[k] = h.derivative(v);
                }
            }
            TerminalSpec::Constant { .. } => {}
        }
        g
    }
}

/// Convex loss functions for the utility model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum LossFn {
    /// `z^2`.
    Quadratic,
    /// `exp(gamma z) / gamma`, `gamma > 0`.
    Exponential { gamma: f64 },
    /// `(1 + z^2)^(p/2)`, `p >= 1`: grows like `|z|^p`.
    Power { p: f64 },
}

impl LossFn {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossFn::Quadratic => Ok(()),
            LossFn::Exponential { gamma } => check_positive("gamma", gamma),
            LossFn::Power { p } => {
                if !(p >= 1.0 && p.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "loss exponent p = {p} must be >= 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `(l(z), l'(z), l''(z))`.
    pub fn eval3(&self, z: f64) -> (f64, f64, f64) {
        match *self {
            LossFn::Quadratic => (z * z, 2.0 * z, 2.0),
            LossFn::Exponential { gamma } => {
                let e = (gamma * z).exp();
                (e / gamma, e, gamma * e)
            }
            LossFn::Power { p } => {
                let s = 1.0 + z * z;
                let v = s.powf(p / 2.0);
                (
                    v,
                    p * z * v / s,
                    p * v / (s * s) * (1.0 + (p - 1.0) * z * z),
                )
            }
        }
    }
}

/// `f(x, a) = l(g(x) + sum_t a_t (x_t - x_{t-1}))` with `x_0 = x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityModel {
    pub loss: LossFn,
    pub payoff: TerminalSpec,
    pub x0: f64,
}

impl UtilityModel {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        self.loss.validate()?;
        self.payoff.validate(horizon)?;
        check_finite("x0", &[self.x0])?;
        // strict convexity of the loss, sampled on a grid
        if (-200..=200).any(|k| !(self.loss.eval3(k as f64 * 0.05).2 > 0.0)) {
            return Err(Error::InvalidParams(
                "loss is not strictly convex on [-10, 10]".into(),
            ));
        }
        Ok(())
    }

    /// Increments `x_t - x_{t-1}` with `x_0 = x0`.
    pub fn increments(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|t| x[t] - if t == 0 { self.x0 } else { x[t - 1] })
            .collect()
    }

    /// The loss argument `g(x) + sum_t a_t (x_t - x_{t-1})`.
    pub fn argument(&self, x: &[f64], a: &[f64]) -> f64 {
        self.payoff.eval(x)
            + self
                .increments(x)
                .iter()
                .zip(a)
                .map(|(d, a)| a * d)
                .sum::<f64>()
    }
}

/// Builds the controlled cost of a utility model.
pub fn build_utility_cost(model: &UtilityModel, horizon: usize) -> Result<CostModel> {
    model.validate(horizon)?;
    Ok(CostModel::utility_cost(
        horizon,
        UtilityCost {
            model: model.clone(),
        },
    ))
}

#[derive(Debug)]
pub(crate) struct UtilityCost {
    model: UtilityModel,
}

impl UtilityCost {
    pub(crate) fn model(&self) -> &UtilityModel {
        &self.model
    }
}

impl ControlledCost for UtilityCost {
    fn eval(&self, x: &[f64], a: &[f64]) -> f64 {
        self.model.loss.eval3(self.model.argument(x, a)).0
    }

    fn grad_x(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let d1 = self.model.loss.eval3(self.model.argument(x, a)).1;
        let dg = self.model.payoff.grad_x(x);
        (0..x.len())
            .map(|t| {
                let next = a.get(t + 1).copied().unwrap_or(0.0);
                d1 * (dg[t] + a[t] - next)
            })
            .collect()
    }

    fn grad_a(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let d1 = self.model.loss.eval3(self.model.argument(x, a)).1;
        self.model.increments(x).iter().map(|d| d1 * d).collect()
    }

    fn hess_a(&self, x: &[f64], a: &[f64]) -> DMatrix<f64> {
        let d2 = self.model.loss.eval3(self.model.argument(x, a)).2;
        let inc = nalgebra::DVector::from_vec(self.model.increments(x));
        &inc * inc.transpose() * d2
    }
}

/// `sum_t kappa/2 (a_t - beta x_{t-1})^2 + hedge * sum_t a_t (x_t - x_{t-1}) + g(x)`
/// with `x_0 = x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTracking {
    pub kappa: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub hedge: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub payoff: Option<TerminalSpec>,
}

impl QuadraticTracking {
    fn prev(&self, x: &[f64], t: usize) -> f64 {
        if t == 0 {
            self.x0
        } else {
            x[t - 1]
        }
    }
}

impl ControlledCost for QuadraticTracking {
    fn eval(&self, x: &[f64], a: &[f64]) -> f64 {
        let track: f64 = (0..x.len())
            .map(|t| {
                let d = a[t] - self.beta * self.prev(x, t);
                0.5 * self.kappa * d * d + self.hedge * a[t] * (x[t] - self.prev(x, t))
            })
            .sum();
        track + self.payoff.as_ref().map_or(0.0, |g| g.eval(x))
    }

    fn grad_x(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut g = self
            .payoff
            .as_ref()
            .map_or_else(|| vec![0.0; n], |p| p.grad_x(x));
        for s in 0..n {
            let next = a.get(s + 1).copied().unwrap_or(0.0);
            g[s] += self.hedge * (a[s] - next);
            if s + 1 < n {
                g[s] -= self.kappa * self.beta * (a[s + 1] - self.beta * x[s]);
            }
        }
        g
    }

    fn grad_a(&self, x: &[f64], a: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|t| {
                self.kappa * (a[t] - self.beta * self.prev(x, t))
                    + self.hedge * (x[t] - self.prev(x, t))
            })
            .collect()
    }

    fn hess_a(&self, x: &[f64], _a: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len()) * self.kappa
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum ControlledSpec {
    QuadraticTracking(QuadraticTracking),
    Utility(UtilityModel),
}

impl ControlledSpec {
    pub fn build(&self, horizon: usize) -> Result<CostModel> {
        match self {
            ControlledSpec::QuadraticTracking(q) => {
                check_positive("kappa", q.kappa)?;
                check_finite("tracking coefficients", &[q.beta, q.hedge, q.x0])?;
                if let Some(g) = &q.payoff {
                    g.validate(horizon)?;
                }
                Ok(CostModel::controlled(horizon, Arc::new(q.clone())))
            }
            ControlledSpec::Utility(u) => build_utility_cost(u, horizon),
        }
    }
}

/// Stopping costs `f(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum StoppingSpec {
    /// `g(x_t)`.
    Markov { g: ScalarFn },
    /// `g((x_1 + ... + x_t) / t)`.
    RunningAverage { g: ScalarFn },
}

impl StoppingSpec {
    pub fn build(&self, horizon: usize) -> Result<CostModel> {
        match self {
            StoppingSpec::Markov { g } | StoppingSpec::RunningAverage { g } => g.validate()?,
        }
        Ok(CostModel::stopping(horizon, Arc::new(self.clone())))
    }

    /// The scalar payoff of a Markovian cost.
    pub fn markov_payoff(&self) -> Option<&ScalarFn> {
        match self {
            StoppingSpec::Markov { g } => Some(g),
            StoppingSpec::RunningAverage { .. } => None,
        }
    }
}

impl StoppingCost for StoppingSpec {
    fn eval(&self, x: &[f64], t: usize) -> f64 {
        match self {
            StoppingSpec::Markov { g } => g.value(x[t - 1]),
            StoppingSpec::RunningAverage { g } => g.value(x[..t].iter().sum::<f64>() / t as f64),
        }
    }

    fn grad_x(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        match self {
            StoppingSpec::Markov { g } => out[t - 1] = g.derivative(x[t - 1]),
            StoppingSpec::RunningAverage { g } => {
                let d = g.derivative(x[..t].iter().sum::<f64>() / t as f64) / t as f64;
                out[..t].iter_mut().for_each(|v| *v = d);
            }
        }
        out
    }
}

/// Any catalog entry, as written in a run configuration:
/// `{"name": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CatalogModel {
    Terminal(TerminalSpec),
    Controlled(ControlledSpec),
    Stopping(StoppingSpec),
}

impl CatalogModel {
    pub const TERMINAL_NAMES: [&'static str; 8] = [
        "linear",
        "quadratic",
        "product",
        "softplus_call",
        "asian_call",
        "exponential",
        "separable",
        "constant",
    ];
    pub const CONTROLLED_NAMES: [&'static str; 2] = ["quadratic_tracking", "utility"];
    pub const STOPPING_NAMES: [&'static str; 2] = ["markov", "running_average"];

    pub fn is_known_name(name: &str) -> bool {
        Self::TERMINAL_NAMES
            .iter()
            .chain(&Self::CONTROLLED_NAMES)
            .chain(&Self::STOPPING_NAMES)
            .any(|n| *n == name)
    }

    pub fn build(&self, horizon: usize) -> Result<CostModel> {
        match self {
            CatalogModel::Terminal(s) => s.build(horizon),
            CatalogModel::Controlled(s) => s.build(horizon),
            CatalogModel::Stopping(s) => s.build(horizon),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{audit, Argument};

    #[test]
    fn linear_gradient_is_constant() {
        let m = TerminalSpec::Linear { c: vec![1.0, -2.0] }
            .build(2)
            .unwrap();
        assert_eq!(
            m.grad_x(&[3.0, 7.0], Argument::None).unwrap(),
            vec![1.0, -2.0]
        );
    }

    #[test]
    fn utility_single_period_substitution() {
        let u = UtilityModel {
            loss: LossFn::Quadratic,
            payoff: TerminalSpec::Constant { value: 0.0 },
            x0: 0.5,
        };
        let m = build_utility_cost(&u, 1).unwrap();
        let (x, a) = ([2.0], [0.7]);
        let expected = (0.7f64 * (2.0 - 0.5)).powi(2);
        assert!((m.eval(&x, Argument::Control(&a)).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn utility_gradients_follow_chain_rule() {
        let u = UtilityModel {
            loss: LossFn::Exponential { gamma: 0.5 },
            payoff: TerminalSpec::Linear {
                c: vec![0.2, 0.3, -0.1],
            },
            x0: 1.0,
        };
        let m = build_utility_cost(&u, 3).unwrap();
        let (x, a) = ([1.5, 0.5, 2.0], [0.1, -0.4, 0.3]);
        let z = u.argument(&x, &a);
        let d1 = (0.5 * z).exp();
        let ga = m.grad_a(&x, &a).unwrap();
        for (t, d) in [0.5, -1.0, 1.5].iter().enumerate() {
            assert!((ga[t] - d1 * d).abs() < 1e-14);
        }
        let gx = m.grad_x(&x, Argument::Control(&a)).unwrap();
        let expect = [
            d1 * (0.2 + 0.1 + 0.4),
            d1 * (0.3 - 0.4 - 0.3),
            d1 * (-0.1 + 0.3),
        ];
        for t in 0..3 {
            assert!((gx[t] - expect[t]).abs() < 1e-14);
        }
    }

    #[test]
    fn utility_hessian_quadratic_form_single_direction() {
        // for a direction supported on one coordinate the quadratic form of
        // the rank-one Hessian reduces to l'' u_t^2 (x_t - x_{t-1})^2
        let u = UtilityModel {
            loss: LossFn::Power { p: 3.0 },
            payoff: TerminalSpec::Constant { value: 0.2 },
            x0: 0.0,
        };
        let m = build_utility_cost(&u, 3).unwrap();
        let (x, a) = ([0.5, -0.5, 1.0], [0.3, 0.2, -0.1]);
        let h = m.hess_a(&x, &a).unwrap();
        let d2 = u.loss.eval3(u.argument(&x, &a)).2;
        let inc = u.increments(&x);
        for t in 0..3 {
            let uvec = nalgebra::DVector::from_fn(3, |k, _| if k == t { 1.7 } else { 0.0 });
            let quad = (uvec.transpose() * &h * &uvec)[(0, 0)];
            assert!((quad - d2 * 1.7 * 1.7 * inc[t] * inc[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn catalog_derivatives_pass_audit() {
        let specs = [
            r#"{"name":"linear","params":{"c":[1,2,3]}}"#,
            r#"{"name":"quadratic","params":{"weights":[1,0.5,2],"center":0.3}}"#,
            r#"{"name":"product","params":{"i":1,"j":3}}"#,
            r#"{"name":"softplus_call","params":{"strike":0.2,"smoothing":0.5}}"#,
            r#"{"name":"asian_call","params":{"strike":0.0,"smoothing":0.3}}"#,
            r#"{"name":"exponential","params":{"gamma":0.7,"c":[1,-1,0.5]}}"#,
            r#"{"name":"separable","params":{"g":{"name":"softplus_put","params":{"strike":0.1,"smoothing":0.4}}}}"#,
            r#"{"name":"quadratic_tracking","params":{"kappa":2.0,"beta":0.5,"hedge":1.0,"x0":0.2}}"#,
            r#"{"name":"utility","params":{"loss":{"name":"power","params":{"p":3}},"payoff":{"name":"asian_call","params":{"strike":0,"smoothing":0.5}},"x0":0}}"#,
            r#"{"name":"markov","params":{"g":{"name":"exp","params":{"rate":0.5}}}}"#,
            r#"{"name":"running_average","params":{"g":{"name":"quadratic","params":{"scale":1.5}}}}"#,
        ];
        for s in specs {
            let model: CatalogModel = serde_json::from_str(s).unwrap();
            let built = model.build(3).unwrap();
            let report = audit(&built, 200, 1).unwrap();
            assert!(
                report.max_rel_error <= 1e-6,
                "{s}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn loss_parses_without_params() {
        let l: LossFn = serde_json::from_str(r#"{"name":"quadratic"}"#).unwrap();
        assert_eq!(l, LossFn::Quadratic);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(TerminalSpec::Linear { c: vec![1.0] }.build(2).is_err());
        assert!(TerminalSpec::Product {
            i: 0,
            j: 1,
            scale: 1.0
        }
        .build(2)
        .is_err());
        let bad_loss = UtilityModel {
            loss: LossFn::Exponential { gamma: -1.0 },
            payoff: TerminalSpec::Constant { value: 0.0 },
            x0: 0.0,
        };
        assert!(build_utility_cost(&bad_loss, 1).is_err());
    }
}

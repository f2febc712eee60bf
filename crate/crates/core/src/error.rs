use thiserror::Error;

/// Errors raised by the tree, transport, solver and sensitivity layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tree{}: {reason}", location(*.line, *.node))]
    InvalidTree {
        node: Option<usize>,
        line: Option<usize>,
        reason: String,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: usize, right: usize },
    #[error("infeasible transport problem: {0}")]
    Infeasible(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("coupling is not causal from the first to the second marginal")]
    NotCausal,
    #[error("delta {delta:e} too small: atom encoding collides in floating point")]
    DeltaTooSmall { delta: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("objective is not convex in the control: {0}")]
    NotConvex(String),
    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("optimal stopping time is not unique: margin {margin:e} at node {node}")]
    AmbiguousStopping { node: usize, margin: f64 },
    #[error("flat step at node {node}: value equals its predecessor")]
    FlatStep { node: usize },
    #[error("wrong model kind: expected {expected}, got {got}")]
    WrongModelKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("derivative audit failed for {what}: relative error {error:e}")]
    DerivativeMismatch { what: String, error: f64 },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn location(line: Option<usize>, node: Option<usize>) -> String {
    match (line, node) {
        (Some(l), Some(n)) => format!(" at line {l} (node {n})"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(n)) => format!(" at node {n}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn tree(node: Option<usize>, reason: impl Into<String>) -> Self {
        Error::InvalidTree {
            node,
            line: None,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

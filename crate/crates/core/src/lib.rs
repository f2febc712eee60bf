//! Adapted Wasserstein distances between scenario trees and first-order
//! sensitivities of multiperiod optimization and optimal stopping values
//! under adapted-Wasserstein model perturbations.
//!
//! The crate is organised bottom-up:
//!
//! - [`tree`]: finitely supported adapted processes as rooted scenario trees.
//! - [`ot`]: exact discrete optimal transport (transportation simplex).
//! - [`adapted`]: the adapted Wasserstein distance, bicausal couplings, the
//!   brute-force LP oracle and bicausalization.
//! - [`cost`]: the cost-function catalog and derivative audits.
//! - [`control`]: multistage convex control over predictable policies.
//! - [`stopping`]: optimal stopping via the Snell envelope.
//! - [`sensitivity`]: first-order terms and the worst-case direction.
//! - [`robust`]: ascent-based lower bounds on the worst-case value curve.
//! - [`io`]: tree files, run configurations and CSV emission.

pub mod adapted;
pub mod control;
pub mod cost;
pub mod error;
pub mod io;
pub mod ot;
pub mod robust;
pub mod sensitivity;
pub mod stopping;
pub mod tree;

pub use error::{Error, Result};

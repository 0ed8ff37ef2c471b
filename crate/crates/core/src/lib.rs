//! Learning and testing convexity of Lipschitz functions over Gaussian space.
//!
//! The crate is organised bottom-up:
//!
//! * [`oracle`], [`rng`], [`catalog`]: sampling, black-box oracles and a
//!   fixed catalog of test functions.
//! * [`hermite`], [`quadrature`]: the orthonormal Hermite basis, expansions
//!   and the Ornstein-Uhlenbeck noise operator.
//! * [`coeff_learn`]: median-of-means estimation of Hermite coefficients.
//! * [`convex_regress`]: grid-based Lipschitz convex regression and its
//!   max-affine extension.
//! * [`learn_test`]: the proper agnostic learner and the tolerant tester.
//! * [`envelope`]: the empirical convex envelope and the one-sided tester.
//! * [`spectrum`]: degree-2 Hermite diagnostics.

pub mod catalog;
pub mod coeff_learn;
pub mod convex_regress;
pub mod envelope;
pub mod error;
pub mod hermite;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod spectrum;

pub use error::{Error, Result};
pub use oracle::{FunctionOracle, LabeledSample, Lipschitz, Point, RealFunction};
pub use rng::RngStream;

/// Verdict of a property tester.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

/// Outcome of a tester run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestVerdict {
    pub verdict: Verdict,
    pub statistic: f64,
    pub threshold: f64,
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
}

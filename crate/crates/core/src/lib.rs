//! Differentially private answering of linear counting queries with Bayesian
//! inference over the noisy query history.
//!
//! A count cube is queried through the Laplace mechanism. Every answer is kept
//! in a [`QueryHistory`]. When a new query arrives with an `(epsilon, delta)`
//! requirement, the [`engine`] first builds the best linear unbiased estimate
//! of the answer from history, turns it into a discretized posterior
//! ([`inference`]), and returns the credible interval ([`interval`]) if it is
//! narrow enough. Fresh privacy budget ([`ledger`]) is spent only otherwise.
//!
//! Module map:
//!
//! - [`model`]: cubes, queries, histories, utility requirements.
//! - [`mechanism`]: seeded Laplace noise and the Laplace mechanism.
//! - [`estimator`]: generalized least squares (BLUE) weights and variance.
//! - [`pmv`]: probability mass vectors, convolution, the bilateral gamma density.
//! - [`inference`]: Monte Carlo and convolution posteriors.
//! - [`interval`]: credible intervals, confidence, tail probabilities.
//! - [`ledger`]: budget allocation and per-cell privacy cost.
//! - [`engine`]: the utility-driven answering loop.
//! - [`bench`]: synthetic workloads and the experiment harness.
//! - [`io`]: file formats.
//! - [`cli`]: command line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod interval;
pub mod io;
pub mod ledger;
mod linalg;
pub mod mechanism;
pub mod model;
pub mod pmv;
pub mod quadrature;

pub use error::{Error, Result};
pub use model::{CountCube, HistoryRow, LinearQuery, QueryHistory, UtilityRequirement};

//! Active logistic regression driven by posterior informativeness.
//!
//! The library covers the full experiment loop: a weighted pool and a
//! simulated Bernoulli label oracle ([`model`]), log-concave posteriors over
//! the parameter ball sampled with MALA ([`posterior`]), KL-based
//! informativeness and paired rejection sampling ([`query_select`]),
//! significant-subspace dimension reduction ([`dimred`]), the learners and
//! baselines ([`learners`]), downstream fitting and learning curves
//! ([`eval`]), and file-level orchestration ([`harness`]).
//!
//! Inner loops (informativeness over the pool, independent MALA chains,
//! independent trials) run on rayon when the `parallel` feature is enabled
//! and sequentially otherwise, with identical results.

pub mod dimred;
pub mod error;
pub mod eval;
pub mod harness;
pub mod learners;
pub mod metrics;
pub mod model;
pub mod par;
pub mod posterior;
pub mod query_select;

pub use error::{Error, Result};

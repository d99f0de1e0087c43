//! Active learners, baselines, and the success-boosting combinator.

mod active;
mod baselines;
mod boost;

use std::sync::Arc;

use serde::Serialize;

pub use active::{
    active_logistic_regression, active_simple, clipped_active, default_schedule, ActiveSimpleConfig,
    ClippedConfig, ScheduleParams,
};
pub use baselines::{leverage_scores, lss_baseline, passive_baseline};
pub use boost::{boost_runs, boost_success};

use crate::error::{Error, Result};
use crate::model::{Dataset, Hypothesis, LabelOracle, Link};
use crate::posterior::ObservationTranscript;

/// A pool, its label oracle, the hypothesis class, and accuracy targets.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub data: Arc<Dataset>,
    pub oracle: LabelOracle,
    pub link: Link,
    pub r1_bound: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl ProblemInstance {
    pub fn new(
        data: Arc<Dataset>,
        oracle: LabelOracle,
        link: Link,
        r1_bound: f64,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(r1_bound > 0.0) {
            return Err(Error::Parameter(format!("R1 must be positive, got {r1_bound}")));
        }
        if oracle.pool().len() != data.len() {
            return Err(Error::Parameter("oracle pool and dataset differ in size".into()));
        }
        Ok(Self {
            data,
            oracle,
            link,
            r1_bound,
            epsilon,
            delta,
        })
    }

    /// Same instance with a freshly seeded oracle.
    pub fn with_oracle_seed(&self, seed: u64) -> Self {
        Self {
            oracle: self.oracle.reseeded(seed),
            ..self.clone()
        }
    }
}

/// Why a point was queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// Chosen by informativeness.
    Selected,
    /// Fresh re-query of a phase's points for the phase-level posterior.
    PhaseEnd,
    Passive,
    Leverage,
}

/// One oracle call, in the order it was made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueryRecord {
    pub point: usize,
    pub label: u8,
    pub kind: QueryKind,
    pub phase: Option<usize>,
    pub iteration: Option<usize>,
}

/// Hypothesis held by a learner once `labels` labels had been spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub labels: usize,
    pub hypothesis: Hypothesis,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub hypothesis: Hypothesis,
    pub queries: Vec<QueryRecord>,
    pub transcript: ObservationTranscript,
    pub labels_used: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// The label budget cap cut the run short.
    pub truncated: bool,
    /// Dimension reduction left nothing to learn; the zero hypothesis was returned.
    pub degenerate: bool,
    /// Paired draws that exhausted their rejection budget.
    pub fallbacks: usize,
    pub reduced_dim: Option<usize>,
}

impl RunResult {
    fn new(hypothesis: Hypothesis, data: Arc<Dataset>) -> Self {
        Self {
            hypothesis,
            queries: Vec::new(),
            transcript: ObservationTranscript::new(data),
            labels_used: 0,
            checkpoints: Vec::new(),
            truncated: false,
            degenerate: false,
            fallbacks: 0,
            reduced_dim: None,
        }
    }

    fn record(&mut self, q: QueryRecord) -> Result<()> {
        self.transcript.record(q.point, q.label, 1)?;
        self.queries.push(q);
        self.labels_used += 1;
        Ok(())
    }
}

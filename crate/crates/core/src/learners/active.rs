use std::sync::Arc;

use rand::Rng;

use super::{Checkpoint, ProblemInstance, QueryKind, QueryRecord, RunResult};
use crate::dimred::{dimension_reduction, project_pool};
use crate::error::{Error, Result};
use crate::metrics::LogRatioCap;
use crate::model::{Dataset, Hypothesis, LabelOracle, Link};
use crate::posterior::{ObservationTranscript, Posterior, SamplerConfig};
use crate::query_select::{
    estimate_r, paired_sample, select_query, HypothesisSource, PairedOutcome, PairedSampleConfig,
    PosteriorSource,
};

/// Settings for [`active_simple`].
#[derive(Debug, Clone)]
pub struct ActiveSimpleConfig {
    /// Posterior draws per selection round.
    pub sample_count: usize,
    pub sampler: SamplerConfig,
    pub cap: LogRatioCap,
    /// Clip level of the posterior; 0 gives the plain logistic likelihood.
    pub gamma: f64,
    /// Burn-in steps after each new label; `None` keeps the sampler default.
    pub rewarm_steps: Option<usize>,
    /// Label counts at which to record the current posterior draw.
    pub checkpoints: Vec<usize>,
}

impl Default for ActiveSimpleConfig {
    fn default() -> Self {
        Self {
            sample_count: 256,
            sampler: SamplerConfig::default(),
            cap: LogRatioCap::default(),
            gamma: 0.0,
            rewarm_steps: None,
            checkpoints: Vec::new(),
        }
    }
}

/// Query-by-informativeness: each round draws `sample_count` hypotheses from
/// the posterior, queries the point with the largest estimated `r`, and
/// conditions on the label. The result is one draw from the final posterior.
pub fn active_simple<R: Rng>(
    prob: &mut ProblemInstance,
    rounds: usize,
    cfg: &ActiveSimpleConfig,
    rng: &mut R,
) -> Result<RunResult> {
    if cfg.sample_count < 2 {
        return Err(Error::Parameter("active_simple needs at least two samples per round".into()));
    }
    let data = prob.data.clone();
    let posterior = Posterior::uniform(data.clone(), prob.link, cfg.gamma, prob.r1_bound)?;
    let mut source = PosteriorSource::new(posterior, cfg.sampler, rng.next_u64())?;
    if let Some(steps) = cfg.rewarm_steps {
        source = source.with_rewarm_steps(steps);
    }
    let mut result = RunResult::new(Hypothesis::zero(data.dim(), prob.link, cfg.gamma), data.clone());
    for round in 0..rounds {
        let population = source.draw_many(cfg.sample_count)?;
        if cfg.checkpoints.contains(&round) {
            result.checkpoints.push(Checkpoint {
                labels: round,
                hypothesis: population[0].clone(),
            });
        }
        let est = estimate_r(&population, &data, cfg.cap)?;
        let x = select_query(&est);
        let y = prob.oracle.query(x)?;
        source.observe(x, y, 1)?;
        result.record(QueryRecord {
            point: x,
            label: y,
            kind: QueryKind::Selected,
            phase: None,
            iteration: Some(round),
        })?;
    }
    result.hypothesis = source.draw_many(1)?.remove(0);
    if cfg.checkpoints.contains(&rounds) {
        result.checkpoints.push(Checkpoint {
            labels: rounds,
            hypothesis: result.hypothesis.clone(),
        });
    }
    Ok(result)
}

/// Clip level, phase structure, and label cap of [`clipped_active`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub gamma: f64,
    pub phases: usize,
    pub iterations: usize,
    pub m_surrogate: usize,
    pub budget_cap: usize,
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 0.5) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1/2), got {}", self.gamma)));
        }
        if self.phases == 0 || self.iterations == 0 || self.m_surrogate == 0 || self.budget_cap == 0 {
            return Err(Error::Parameter("schedule counts must be positive".into()));
        }
        Ok(())
    }

    /// Labels used by an uncapped run.
    pub fn full_cost(&self) -> usize {
        4 * self.phases * self.iterations
    }
}

/// Schedule derived from a label-complexity surrogate
/// `m = min(n, ceil(R1² d / ε⁴), 10⁴)`: `γ = ε / (10 m)`,
/// `K = max(1, ceil(log2 m))`, `M = ceil(m / 4K)`, cap `4KM`.
pub fn default_schedule(n: usize, dim: usize, r1_bound: f64, epsilon: f64) -> Result<ScheduleParams> {
    if !(epsilon > 0.0) || n == 0 {
        return Err(Error::Parameter("schedule needs a positive epsilon and a non-empty pool".into()));
    }
    let raw = (r1_bound * r1_bound * dim.max(1) as f64 / epsilon.powi(4)).ceil();
    let m = (n as f64).min(raw).min(1e4).max(1.0) as usize;
    let gamma = (epsilon / (10.0 * m as f64)).min(0.49);
    let phases = ((m as f64).log2().ceil() as usize).max(1);
    let iterations = m.div_ceil(4 * phases).max(1);
    let sched = ScheduleParams {
        gamma,
        phases,
        iterations,
        m_surrogate: m,
        budget_cap: 4 * phases * iterations,
    };
    sched.validate()?;
    Ok(sched)
}

/// Settings for [`clipped_active`] other than the schedule.
#[derive(Debug, Clone)]
pub struct ClippedConfig {
    pub sample_count: usize,
    pub sampler: SamplerConfig,
    pub cap: LogRatioCap,
    pub max_rejections: usize,
}

impl Default for ClippedConfig {
    fn default() -> Self {
        Self {
            sample_count: 256,
            sampler: SamplerConfig::default(),
            cap: LogRatioCap::default(),
            max_rejections: 2000,
        }
    }
}

/// Phased learner on clipped posteriors.
///
/// Within a phase, the selection population mixes draws from the phase-start
/// posterior with far-apart draws from the in-phase posterior; each selected
/// point is labelled twice. At phase end every selected point is labelled
/// twice more and those fresh labels update the cumulative posterior. The
/// result is a draw from an end-of-phase posterior chosen uniformly.
pub fn clipped_active<R: Rng>(
    prob: &mut ProblemInstance,
    sched: &ScheduleParams,
    cfg: &ClippedConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let data = prob.data.clone();
    run_clipped(&data, &mut prob.oracle, prob.link, prob.r1_bound, prob.epsilon, sched, cfg, rng)
}

#[allow(clippy::too_many_arguments)]
fn run_clipped<R: Rng>(
    data: &Arc<Dataset>,
    oracle: &mut LabelOracle,
    link: Link,
    r1_bound: f64,
    epsilon: f64,
    sched: &ScheduleParams,
    cfg: &ClippedConfig,
    rng: &mut R,
) -> Result<RunResult> {
    sched.validate()?;
    if cfg.sample_count < 2 {
        return Err(Error::Parameter("clipped_active needs at least two samples per round".into()));
    }
    let gamma = sched.gamma;
    let pair_cfg = PairedSampleConfig {
        max_rejections: cfg.max_rejections,
        ..PairedSampleConfig::new(2.0 * epsilon)?
    };
    let mut result = RunResult::new(Hypothesis::zero(data.dim(), link, gamma), data.clone());
    let mut lambda = Posterior::uniform(data.clone(), link, gamma, r1_bound)?;
    let mut finals: Vec<PosteriorSource> = Vec::new();

    'phases: for phase in 0..sched.phases {
        let mut anchor = PosteriorSource::new(lambda.clone(), cfg.sampler, rng.next_u64())?;
        let fresh = Posterior::uniform(data.clone(), link, gamma, r1_bound)?;
        let mut track = PosteriorSource::new(fresh, cfg.sampler, rng.next_u64())?;
        let mut selected = Vec::with_capacity(sched.iterations);

        for it in 0..sched.iterations {
            if result.labels_used + 2 > sched.budget_cap {
                result.truncated = true;
                finals.push(track);
                break 'phases;
            }
            let mut population = Vec::with_capacity(cfg.sample_count);
            for _ in 0..cfg.sample_count {
                let draw = paired_sample(&mut anchor, &mut track, &pair_cfg, data, rng)?;
                if draw.outcome == PairedOutcome::Fallback {
                    result.fallbacks += 1;
                }
                population.push(draw.hypothesis);
            }
            let est = estimate_r(&population, data, cfg.cap)?;
            let x = select_query(&est);
            for _ in 0..2 {
                let y = oracle.query(x)?;
                track.observe(x, y, 1)?;
                result.record(QueryRecord {
                    point: x,
                    label: y,
                    kind: QueryKind::Selected,
                    phase: Some(phase),
                    iteration: Some(it),
                })?;
            }
            selected.push(x);
        }

        for (it, &x) in selected.iter().enumerate() {
            if result.labels_used + 2 > sched.budget_cap {
                result.truncated = true;
                finals.push(track);
                break 'phases;
            }
            for _ in 0..2 {
                let y = oracle.query(x)?;
                lambda.push(x, y, 1)?;
                result.record(QueryRecord {
                    point: x,
                    label: y,
                    kind: QueryKind::PhaseEnd,
                    phase: Some(phase),
                    iteration: Some(it),
                })?;
            }
        }
        let snapshot = track.draw(rng)?;
        result.checkpoints.push(Checkpoint {
            labels: result.labels_used,
            hypothesis: snapshot,
        });
        finals.push(track);
    }

    result.hypothesis = if finals.is_empty() {
        let prior = Posterior::uniform(data.clone(), link, gamma, r1_bound)?;
        PosteriorSource::new(prior, cfg.sampler, rng.next_u64())?.draw(rng)?
    } else {
        let k = rng.random_range(0..finals.len());
        finals[k].draw(rng)?
    };
    Ok(result)
}

/// Reduce to a significant subspace, run [`clipped_active`] on the projected
/// pool, and lift the result back to the ambient space.
pub fn active_logistic_regression<R: Rng>(
    prob: &mut ProblemInstance,
    overrides: Option<ScheduleParams>,
    cfg: &ClippedConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let eps = prob.epsilon;
    let c = std::f64::consts::SQRT_2 / (prob.data.r2_bound() * eps);
    let kappa = eps * eps / 2.0;
    let reduction = dimension_reduction(&prob.data, c, kappa)?;
    let sub = reduction.subspace;
    let d_red = sub.dim();

    if d_red == 0 {
        let gamma = overrides.map_or(0.0, |s| s.gamma);
        let mut result = RunResult::new(
            Hypothesis::zero(prob.data.dim(), prob.link, gamma),
            prob.data.clone(),
        );
        result.degenerate = true;
        result.reduced_dim = Some(0);
        return Ok(result);
    }

    let projected = Arc::new(project_pool(&prob.data, &sub)?);
    let sched = match overrides {
        Some(s) => s,
        None => default_schedule(projected.len(), d_red, prob.r1_bound, eps)?,
    };
    let inner = run_clipped(
        &projected,
        &mut prob.oracle,
        prob.link,
        prob.r1_bound,
        eps,
        &sched,
        cfg,
        rng,
    )?;

    let lift = |h: &Hypothesis| -> Result<Hypothesis> {
        Hypothesis::new(sub.embed(&h.theta)?, h.link, h.gamma)
    };
    let mut transcript = ObservationTranscript::new(prob.data.clone());
    for q in &inner.queries {
        transcript.record(q.point, q.label, 1)?;
    }
    Ok(RunResult {
        hypothesis: lift(&inner.hypothesis)?,
        checkpoints: inner
            .checkpoints
            .iter()
            .map(|c| {
                Ok(Checkpoint {
                    labels: c.labels,
                    hypothesis: lift(&c.hypothesis)?,
                })
            })
            .collect::<Result<_>>()?,
        transcript,
        reduced_dim: Some(d_red),
        ..inner
    })
}

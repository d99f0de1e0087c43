//! Downstream logistic fit on queried labels, accuracy and distance-to-truth
//! metrics, and prefix-snapshot learning curves.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learners::{
    active_logistic_regression, active_simple, default_schedule, lss_baseline, passive_baseline,
    ActiveSimpleConfig, ClippedConfig, ProblemInstance, QueryRecord, RunResult, ScheduleParams,
};
use crate::metrics::weighted_l2;
use crate::model::{dot, softplus, Dataset, Hypothesis, LabelOracle, Link};
use crate::par;
use crate::posterior::{Observation, ObservationTranscript};

/// Settings of the regularized logistic fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub reg: f64,
    /// Gradient-norm convergence threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub history: usize,
    /// Project the solution onto this ball.
    pub r1_bound: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            reg: 1e-4,
            tol: 1e-6,
            max_iter: 1000,
            history: 10,
            r1_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub hypothesis: Hypothesis,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// The minimizer lay outside the ball and was projected onto it.
    pub projected: bool,
    /// Objective after each accepted step, starting at θ = 0.
    pub trace: Vec<f64>,
}

struct Objective<'a> {
    data: &'a Dataset,
    obs: &'a [Observation],
    reg: f64,
}

impl Objective<'_> {
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().zip(theta).for_each(|(g, t)| *g = 2.0 * self.reg * t);
        let mut f = self.reg * dot(theta, theta);
        for o in self.obs {
            let x = self.data.point(o.index);
            let z = dot(theta, x);
            let m = o.multiplicity as f64;
            let y = f64::from(o.label);
            f += m * (softplus(z) - y * z);
            let r = m * (Link::Sigmoid.forward(z) - y);
            grad.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
        }
        f
    }

    /// Margins `θᵀx` and directional margins `dirᵀx` of every observation.
    fn margins(&self, theta: &[f64], dir: &[f64]) -> Vec<(f64, f64)> {
        self.obs
            .iter()
            .map(|o| {
                let x = self.data.point(o.index);
                (dot(theta, x), dot(dir, x))
            })
            .collect()
    }

    /// `f(θ + t·dir) - f(θ)`, summed term by term so that small changes near
    /// the optimum are not lost to cancellation between large totals.
    fn change(&self, margins: &[(f64, f64)], theta: &[f64], dir: &[f64], t: f64) -> f64 {
        let mut df = self.reg * (2.0 * t * dot(theta, dir) + t * t * dot(dir, dir));
        for (o, &(z, dz)) in self.obs.iter().zip(margins) {
            let delta = t * dz;
            let sp = if delta.abs() <= 1.0 {
                (Link::Sigmoid.forward(z) * delta.exp_m1()).ln_1p()
            } else {
                softplus(z + delta) - softplus(z)
            };
            df += o.multiplicity as f64 * (sp - f64::from(o.label) * delta);
        }
        df
    }
}

/// Minimize `Σ m·CE(σ(θᵀx), y) + reg‖θ‖²` from θ = 0 by L-BFGS with Armijo
/// backtracking, so the objective never increases between iterations.
pub fn fit_logistic(data: &Dataset, observations: &[Observation], cfg: &FitConfig) -> Result<FitResult> {
    if observations.is_empty() {
        return Err(Error::Parameter("fit needs at least one observation".into()));
    }
    if !(cfg.reg >= 0.0) || !(cfg.tol > 0.0) || cfg.history == 0 {
        return Err(Error::Parameter("invalid fit settings".into()));
    }
    for o in observations {
        data.try_point(o.index)?;
    }
    let d = data.dim();
    let obj = Objective {
        data,
        obs: observations,
        reg: cfg.reg,
    };
    let mut theta = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut f = obj.eval(&theta, &mut grad);
    let mut trace = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; d];
    let mut trial_grad = vec![0.0; d];

    while iterations < cfg.max_iter {
        if norm_of(&grad) <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = two_loop(&grad, &memory);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            memory.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let mut step = if memory.is_empty() {
            (1.0 / norm_of(&grad)).min(1.0)
        } else {
            1.0
        };
        let margins = obj.margins(&theta, &dir);
        let mut accepted = None;
        for _ in 0..60 {
            let df = obj.change(&margins, &theta, &dir, step);
            if df <= 1e-4 * step * slope {
                accepted = Some(f + df);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else { break };
        trial.iter_mut().zip(&theta).zip(&dir).for_each(|((t, a), b)| *t = a + step * b);
        obj.eval(&trial, &mut trial_grad);
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if memory.len() == cfg.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        f = ft;
        trace.push(f);
    }
    if !converged && norm_of(&grad) <= cfg.tol {
        converged = true;
    }
    let grad_norm = norm_of(&grad);
    let objective = obj.eval(&theta, &mut trial_grad);
    let mut projected = false;
    if let Some(r1) = cfg.r1_bound {
        let n = norm_of(&theta);
        if n > r1 {
            theta.iter_mut().for_each(|t| *t *= r1 / n);
            projected = true;
        }
    }
    Ok(FitResult {
        hypothesis: Hypothesis::logistic(theta),
        converged,
        iterations,
        objective,
        grad_norm,
        projected,
        trace,
    })
}

fn norm_of(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let scale = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= scale);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Fraction of points where `h(x) ≥ 0.5` agrees with the label.
pub fn accuracy(h: &Hypothesis, data: &Dataset, labels: &[u8]) -> Result<f64> {
    check_dim(data.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Parameter("accuracy needs at least one labelled point".into()));
    }
    let preds = h.predictions(data)?;
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| u8::from(**p >= 0.5) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Weighted ℓ2 distance to the oracle's ground truth.
pub fn l2_to_truth(h: &Hypothesis, oracle: &LabelOracle, data: &Dataset) -> Result<f64> {
    let truth = oracle
        .truth()
        .ok_or_else(|| Error::UnsupportedMetric("l2_to_truth needs a known ground truth".into()))?;
    weighted_l2(h, truth, data)
}

/// Query strategies that can produce a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Informativeness-driven selection on the plain posterior.
    Ours,
    Passive,
    /// Leverage-score sampling.
    Leverage,
    /// The phased clipped learner behind dimension reduction.
    Clipped,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Ours, Strategy::Passive, Strategy::Leverage, Strategy::Clipped];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ours => "ours",
            Strategy::Passive => "passive",
            Strategy::Leverage => "leverage",
            Strategy::Clipped => "clipped",
        }
    }

    /// Stable id used in seed derivation.
    pub fn id(&self) -> u64 {
        match self {
            Strategy::Ours => 1,
            Strategy::Passive => 2,
            Strategy::Leverage => 3,
            Strategy::Clipped => 4,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ours" => Ok(Strategy::Ours),
            "passive" | "pass" => Ok(Strategy::Passive),
            "leverage" | "lss" => Ok(Strategy::Leverage),
            "clipped" => Ok(Strategy::Clipped),
            other => Err(Error::Validation(format!("unknown strategy '{other}'"))),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-(strategy, trial) seed: `splitmix(splitmix(splitmix(master) ^ id) ^ trial)`.
/// Each pair gets its own stream, so adding strategies or trials leaves the
/// others untouched.
pub fn trial_seed(master: u64, strategy: Strategy, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ strategy.id()) ^ trial as u64)
}

/// Oracle seed paired with a trial seed.
pub fn oracle_seed(trial_seed: u64) -> u64 {
    splitmix64(trial_seed ^ 0x6f72_6163_6c65)
}

/// A labelled evaluation set.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub data: Arc<Dataset>,
    pub labels: Vec<u8>,
}

/// Labels against which curves are scored.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Realized labels of the training pool.
    pub train_labels: Vec<u8>,
    pub test: Option<EvalSet>,
}

/// Per-strategy learner settings used by [`learning_curve`].
#[derive(Debug, Clone, Default)]
pub struct CurveSettings {
    pub active: ActiveSimpleConfig,
    pub clipped: ClippedConfig,
    pub schedule: Option<ScheduleParams>,
    pub fit: FitConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub budget: usize,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub l2_to_truth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TrainAcc,
    TestAcc,
    L2ToTruth,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_acc" => Ok(Metric::TrainAcc),
            "test_acc" => Ok(Metric::TestAcc),
            "l2_to_truth" => Ok(Metric::L2ToTruth),
            other => Err(Error::UnsupportedMetric(other.into())),
        }
    }
}

impl Metric {
    pub fn value(&self, row: &CurveRow) -> Option<f64> {
        match self {
            Metric::TrainAcc => Some(row.train_acc),
            Metric::TestAcc => row.test_acc,
            Metric::L2ToTruth => row.l2_to_truth,
        }
    }

    /// Whether `value` meets `target`: at least for accuracies, at most for distances.
    pub fn meets(&self, value: f64, target: f64) -> bool {
        match self {
            Metric::L2ToTruth => value <= target,
            _ => value >= target,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearningCurve {
    pub strategy: Strategy,
    pub trial: usize,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
    pub queries: Vec<QueryRecord>,
    pub truncated: bool,
    pub fallbacks: usize,
    /// Set when the strategy failed; `rows` is then empty.
    pub error: Option<String>,
}

impl LearningCurve {
    /// Smallest budget whose metric meets the target.
    pub fn labels_to_target(&self, metric: Metric, target: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| metric.value(r).is_some_and(|v| metric.meets(v, target)))
            .map(|r| r.budget)
    }

    pub fn row_at(&self, budget: usize) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.budget == budget)
    }
}

fn run_strategy(
    strategy: Strategy,
    prob: &mut ProblemInstance,
    max_budget: usize,
    settings: &CurveSettings,
    rng: &mut ChaCha8Rng,
) -> Result<RunResult> {
    match strategy {
        Strategy::Ours => active_simple(prob, max_budget, &settings.active, rng),
        Strategy::Passive => passive_baseline(prob, max_budget, &settings.fit, rng),
        Strategy::Leverage => lss_baseline(prob, max_budget, &settings.fit, rng),
        Strategy::Clipped => {
            let base = match settings.schedule {
                Some(s) => s,
                None => default_schedule(prob.data.len(), prob.data.dim(), prob.r1_bound, prob.epsilon)?,
            };
            let sched = ScheduleParams {
                budget_cap: max_budget.max(1),
                ..base
            };
            active_logistic_regression(prob, Some(sched), &settings.clipped, rng)
        }
    }
}

fn prefix_fit(
    data: &Arc<Dataset>,
    queries: &[QueryRecord],
    fit: &FitConfig,
) -> Result<Hypothesis> {
    if queries.is_empty() {
        return Ok(Hypothesis::zero(data.dim(), Link::Sigmoid, 0.0));
    }
    let mut t = ObservationTranscript::new(data.clone());
    for q in queries {
        t.record(q.point, q.label, 1)?;
    }
    Ok(fit_logistic(data, t.entries(), fit)?.hypothesis)
}

fn score(
    h: &Hypothesis,
    budget: usize,
    prob: &ProblemInstance,
    eval: &Evaluation,
) -> Result<CurveRow> {
    let test_acc = match &eval.test {
        Some(t) => Some(accuracy(h, &t.data, &t.labels)?),
        None => None,
    };
    let l2 = match prob.oracle.truth() {
        Some(_) => Some(l2_to_truth(h, &prob.oracle, &prob.data)?),
        None => None,
    };
    Ok(CurveRow {
        budget,
        train_acc: accuracy(h, &prob.data, &eval.train_labels)?,
        test_acc,
        l2_to_truth: l2,
    })
}

fn one_trial(
    strategy: Strategy,
    prob: &ProblemInstance,
    budgets: &[usize],
    trial: usize,
    master_seed: u64,
    eval: &Evaluation,
    settings: &CurveSettings,
) -> LearningCurve {
    let seed = trial_seed(master_seed, strategy, trial);
    let mut curve = LearningCurve {
        strategy,
        trial,
        seed,
        rows: Vec::new(),
        queries: Vec::new(),
        truncated: false,
        fallbacks: 0,
        error: None,
    };
    let mut inner = || -> Result<()> {
        let mut p = prob.with_oracle_seed(oracle_seed(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = *budgets.last().expect("budgets checked non-empty");
        let run = run_strategy(strategy, &mut p, max, settings, &mut rng)?;
        for &b in budgets {
            let prefix = &run.queries[..b.min(run.queries.len())];
            let h = prefix_fit(&prob.data, prefix, &settings.fit)?;
            curve.rows.push(score(&h, b, prob, eval)?);
        }
        curve.queries = run.queries;
        curve.truncated = run.truncated;
        curve.fallbacks = run.fallbacks;
        Ok(())
    };
    if let Err(e) = inner() {
        curve.rows.clear();
        curve.error = Some(e.to_string());
    }
    curve
}

/// Run `strategy` once per trial up to the largest budget, then fit and score
/// the transcript prefix at every budget. Trials run in parallel when enabled.
pub fn learning_curve(
    strategy: Strategy,
    prob: &ProblemInstance,
    budgets: &[usize],
    trials: usize,
    master_seed: u64,
    eval: &Evaluation,
    settings: &CurveSettings,
) -> Result<Vec<LearningCurve>> {
    if budgets.is_empty() || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("budgets must be non-empty and strictly increasing".into()));
    }
    check_dim(prob.data.len(), eval.train_labels.len())?;
    Ok(par::map_range(trials, |t| {
        one_trial(strategy, prob, budgets, t, master_seed, eval, settings)
    }))
}

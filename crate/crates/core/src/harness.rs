//! Experiment plumbing: configuration, synthetic and CSV pools, curve and
//! transcript files, and labels-to-target summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    learning_curve, CurveSettings, EvalSet, Evaluation, FitConfig, LearningCurve, Metric, Strategy,
};
use crate::learners::{ActiveSimpleConfig, ClippedConfig, ProblemInstance, QueryKind, ScheduleParams};
use crate::model::{Dataset, Hypothesis, LabelOracle, Link};
use crate::posterior::SamplerConfig;

/// Run configuration, read from a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `synthetic` or `csv`.
    #[serde(default = "default_dataset")]
    pub dataset: String,
    pub n: Option<usize>,
    pub d: Option<usize>,
    #[serde(default)]
    pub data_seed: u64,
    /// Test-set size for synthetic runs; defaults to `n`.
    pub n_test: Option<usize>,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub strategies: Vec<String>,
    pub budgets: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Parameter-ball radius; synthetic runs default to `sqrt(d + 1)`.
    pub r1_bound: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_chains")]
    pub chain_count: usize,
    pub rewarm_steps: Option<usize>,
    #[serde(default = "default_reg")]
    pub reg: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub schedule_gamma: Option<f64>,
    pub schedule_phases: Option<usize>,
    pub schedule_iterations: Option<usize>,
    /// e.g. `train_acc`; summary target metric.
    pub target_metric: Option<String>,
    pub target_value: Option<f64>,
}

fn default_dataset() -> String {
    "synthetic".into()
}
fn default_trials() -> usize {
    1
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_delta() -> f64 {
    0.1
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_sample_count() -> usize {
    256
}
fn default_burn_in() -> usize {
    SamplerConfig::default().burn_in
}
fn default_thinning() -> usize {
    SamplerConfig::default().thinning
}
fn default_step_size() -> f64 {
    SamplerConfig::default().step_size
}
fn default_chains() -> usize {
    SamplerConfig::default().chain_count
}
fn default_reg() -> f64 {
    FitConfig::default().reg
}
fn default_tol() -> f64 {
    FitConfig::default().tol
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file; relative CSV paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train_csv, &mut cfg.test_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn strategy_list(&self) -> Result<Vec<Strategy>> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Validation("strategy list is empty".into()));
        }
        self.strategy_list()?;
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("budgets must be non-empty and strictly increasing".into()));
        }
        if self.trials == 0 {
            return Err(Error::Validation("trials must be positive".into()));
        }
        match self.dataset.as_str() {
            "synthetic" => {
                if self.n.unwrap_or(0) == 0 || self.d.unwrap_or(0) == 0 {
                    return Err(Error::Validation("synthetic datasets need n >= 1 and d >= 1".into()));
                }
            }
            "csv" => {
                let train = self
                    .train_csv
                    .as_ref()
                    .ok_or_else(|| Error::Validation("csv datasets need train_csv".into()))?;
                for p in std::iter::once(train).chain(self.test_csv.as_ref()) {
                    if !p.exists() {
                        return Err(Error::Validation(format!("{} does not exist", p.display())));
                    }
                }
            }
            other => return Err(Error::Validation(format!("unknown dataset kind '{other}'"))),
        }
        let sched = [
            self.schedule_gamma.is_some(),
            self.schedule_phases.is_some(),
            self.schedule_iterations.is_some(),
        ];
        if sched.iter().any(|&b| b) && !sched.iter().all(|&b| b) {
            return Err(Error::Validation(
                "schedule overrides need gamma, phases and iterations together".into(),
            ));
        }
        if self.target_metric.is_some() != self.target_value.is_some() {
            return Err(Error::Validation("target_metric and target_value go together".into()));
        }
        if let Some(m) = &self.target_metric {
            m.parse::<Metric>()?;
        }
        self.settings()?.active.sampler.validate()?;
        Ok(())
    }

    pub fn settings(&self) -> Result<CurveSettings> {
        let sampler = SamplerConfig {
            step_size: self.step_size,
            burn_in: self.burn_in,
            thinning: self.thinning,
            chain_count: self.chain_count,
            ..SamplerConfig::default()
        };
        let schedule = match (self.schedule_gamma, self.schedule_phases, self.schedule_iterations) {
            (Some(gamma), Some(phases), Some(iterations)) => {
                let s = ScheduleParams {
                    gamma,
                    phases,
                    iterations,
                    m_surrogate: 4 * phases * iterations,
                    budget_cap: 4 * phases * iterations,
                };
                s.validate()?;
                Some(s)
            }
            _ => None,
        };
        Ok(CurveSettings {
            active: ActiveSimpleConfig {
                sample_count: self.sample_count,
                sampler,
                rewarm_steps: self.rewarm_steps,
                ..ActiveSimpleConfig::default()
            },
            clipped: ClippedConfig {
                sample_count: self.sample_count,
                sampler,
                ..ClippedConfig::default()
            },
            schedule,
            fit: FitConfig {
                reg: self.reg,
                tol: self.tol,
                ..FitConfig::default()
            },
        })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth parameter of the synthetic family: uniform on `[-1, 1]^(d+1)`.
pub fn synthetic_truth(d: usize, seed: u64) -> Hypothesis {
    let mut rng = stream_rng(seed, 0);
    Hypothesis::logistic((0..=d).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

/// `n` points uniform on `[-1, 1]^d`, each extended by a constant 1.
/// Stream 1 gives the training pool, stream 2 the test set.
pub fn synthetic_points(n: usize, d: usize, seed: u64, stream: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, stream);
    let mut flat = Vec::with_capacity(n * (d + 1));
    for _ in 0..n {
        flat.extend((0..d).map(|_| rng.random_range(-1.0..=1.0)));
        flat.push(1.0);
    }
    Dataset::from_flat(flat, d + 1, None)?.with_r2_bound(((d + 1) as f64).sqrt())
}

/// Training pool and Bernoulli oracle of the synthetic family.
pub fn generate_synthetic(n: usize, d: usize, seed: u64) -> Result<(Dataset, LabelOracle)> {
    if n == 0 || d == 0 {
        return Err(Error::Parameter("synthetic data needs n >= 1 and d >= 1".into()));
    }
    let data = synthetic_points(n, d, seed, 1)?;
    let shared = Arc::new(data.clone());
    let oracle = LabelOracle::bernoulli(shared, synthetic_truth(d, seed), seed)?;
    Ok((data, oracle))
}

/// One Bernoulli label per point, drawn from `truth`.
pub fn realize_labels(truth: &Hypothesis, data: &Dataset, seed: u64) -> Result<Vec<u8>> {
    let mut rng = stream_rng(seed, 3);
    truth
        .predictions(data)?
        .into_iter()
        .map(|p| Ok(u8::from(rng.random::<f64>() < p)))
        .collect()
}

/// A pool read from CSV, with its labels if the file had a `label` column.
#[derive(Debug, Clone)]
pub struct CsvPool {
    pub data: Dataset,
    pub labels: Option<Vec<u8>>,
}

enum Column {
    Feature(usize),
    Label,
    Weight,
}

/// Read a pool with header `f0..f{d-1}` plus optional `label` and `weight`.
pub fn load_csv(path: &Path) -> Result<CsvPool> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let mut columns = Vec::with_capacity(headers.len());
    let mut d = 0;
    for h in headers.iter() {
        let col = match h {
            "label" => Column::Label,
            "weight" => Column::Weight,
            f => match f.strip_prefix('f').and_then(|k| k.parse::<usize>().ok()) {
                Some(k) => {
                    d = d.max(k + 1);
                    Column::Feature(k)
                }
                None => return Err(Error::Validation(format!("unknown column '{f}'"))),
            },
        };
        columns.push(col);
    }
    let features = columns.iter().filter(|c| matches!(c, Column::Feature(_))).count();
    if features != d {
        return Err(Error::Validation("feature columns must be f0..f{d-1} without gaps".into()));
    }
    let has_label = columns.iter().any(|c| matches!(c, Column::Label));
    let has_weight = columns.iter().any(|c| matches!(c, Column::Weight));

    let (mut flat, mut labels, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", columns.len(), record.len()),
            });
        }
        let mut row = vec![0.0; d];
        for (col, field) in columns.iter().zip(record.iter()) {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{field}' is not a number"),
            })?;
            match col {
                Column::Feature(k) => row[*k] = value,
                Column::Weight => weights.push(value),
                Column::Label => {
                    if value != 0.0 && value != 1.0 {
                        return Err(Error::Validation(format!("line {line}: label {field} is not 0 or 1")));
                    }
                    labels.push(value as u8);
                }
            }
        }
        flat.extend(row);
    }
    if labels.is_empty() && flat.is_empty() {
        return Err(Error::Validation(format!("{} has no rows", path.display())));
    }
    let n = if d == 0 { labels.len().max(weights.len()) } else { flat.len() / d };
    let weights = if has_weight {
        Some(weights)
    } else if d == 0 {
        Some(vec![1.0 / n as f64; n])
    } else {
        None
    };
    Ok(CsvPool {
        data: Dataset::from_flat(flat, d, weights)?,
        labels: has_label.then_some(labels),
    })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Write a pool in the format read by [`load_csv`]. Weights are written only
/// for non-uniform pools.
pub fn write_csv(path: &Path, data: &Dataset, labels: Option<&[u8]>) -> Result<()> {
    if let Some(l) = labels {
        crate::error::check_dim(data.len(), l.len())?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("f{k}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    let weighted = !data.is_uniform();
    if weighted {
        header.push("weight".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, x) in data.rows().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        if weighted {
            rec.push(data.weight(i).to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Pool, evaluation labels, and instance built from a config.
pub struct PreparedExperiment {
    pub problem: ProblemInstance,
    pub evaluation: Evaluation,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    match cfg.dataset.as_str() {
        "synthetic" => {
            let (n, d) = (cfg.n.unwrap_or(0), cfg.d.unwrap_or(0));
            let (train, oracle) = generate_synthetic(n, d, cfg.data_seed)?;
            let truth = oracle.truth().cloned().expect("synthetic oracle has a truth");
            let test = synthetic_points(cfg.n_test.unwrap_or(n), d, cfg.data_seed, 2)?;
            let train_labels = realize_labels(&truth, &train, cfg.data_seed)?;
            let test_labels = realize_labels(&truth, &test, cfg.data_seed ^ 1)?;
            let r1 = cfg.r1_bound.unwrap_or(((d + 1) as f64).sqrt());
            let data = oracle.pool().clone();
            Ok(PreparedExperiment {
                problem: ProblemInstance::new(data, oracle, Link::Sigmoid, r1, cfg.epsilon, cfg.delta)?,
                evaluation: Evaluation {
                    train_labels,
                    test: Some(EvalSet {
                        data: Arc::new(test),
                        labels: test_labels,
                    }),
                },
            })
        }
        _ => {
            let path = cfg.train_csv.as_ref().expect("validated");
            let pool = load_csv(path)?;
            let labels = pool
                .labels
                .ok_or_else(|| Error::Validation(format!("{} has no label column", path.display())))?;
            let data = Arc::new(pool.data);
            let oracle = LabelOracle::replay(data.clone(), labels.clone())?;
            let test = match &cfg.test_csv {
                Some(p) => {
                    let t = load_csv(p)?;
                    let tl = t
                        .labels
                        .ok_or_else(|| Error::Validation(format!("{} has no label column", p.display())))?;
                    Some(EvalSet {
                        data: Arc::new(t.data),
                        labels: tl,
                    })
                }
                None => None,
            };
            let r1 = cfg.r1_bound.unwrap_or(((data.dim() + 1) as f64).sqrt());
            Ok(PreparedExperiment {
                problem: ProblemInstance::new(data, oracle, Link::Sigmoid, r1, cfg.epsilon, cfg.delta)?,
                evaluation: Evaluation {
                    train_labels: labels,
                    test,
                },
            })
        }
    }
}

/// Median labels-to-target of one strategy; `None` when the median trial
/// never reaches the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub trials: usize,
    pub reached: usize,
    pub median_labels: Option<f64>,
}

/// Median with unreached trials treated as +∞.
pub fn median_labels(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values
        .iter()
        .map(|x| x.map_or(f64::INFINITY, |b| b as f64))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

pub fn summarize_curves(curves: &[LearningCurve], metric: Metric, target: f64) -> Vec<SummaryRow> {
    let mut by: BTreeMap<Strategy, Vec<Option<usize>>> = BTreeMap::new();
    for c in curves {
        by.entry(c.strategy).or_default().push(c.labels_to_target(metric, target));
    }
    by.into_iter()
        .map(|(s, v)| SummaryRow {
            strategy: s.name().into(),
            trials: v.len(),
            reached: v.iter().filter(|x| x.is_some()).count(),
            median_labels: median_labels(&v),
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow], metric: &str, target: f64) -> String {
    let mut out = format!("labels to reach {metric} {} {target:.4}\n", if metric == "l2_to_truth" { "<=" } else { ">=" });
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>10}", "strategy", "trials", "reached", "median");
    for r in rows {
        let med = r.median_labels.map_or("never".to_string(), |m| format!("{m}"));
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>10}", r.strategy, r.trials, r.reached, med);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub const CURVE_HEADER: &str = "strategy,trial,budget,train_acc,test_acc,l2_to_truth";

pub fn curves_csv(curves: &[LearningCurve]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for c in curves {
        for r in &c.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.strategy,
                c.trial,
                r.budget,
                r.train_acc,
                opt(r.test_acc),
                opt(r.l2_to_truth)
            );
        }
    }
    out
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    strategy: &'a str,
    trial: usize,
    index: usize,
    point: usize,
    label: u8,
    kind: QueryKind,
    phase: Option<usize>,
    iteration: Option<usize>,
}

pub fn transcripts_jsonl(curves: &[LearningCurve]) -> Result<String> {
    let mut out = String::new();
    for c in curves {
        for (index, q) in c.queries.iter().enumerate() {
            let line = TranscriptLine {
                strategy: c.strategy.name(),
                trial: c.trial,
                index,
                point: q.point,
                label: q.label,
                kind: q.kind,
                phase: q.phase,
                iteration: q.iteration,
            };
            out.push_str(&serde_json::to_string(&line).map_err(|e| Error::Validation(e.to_string()))?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub curves: Vec<LearningCurve>,
    pub summary: String,
    pub failures: Vec<(Strategy, usize, String)>,
}

/// Summary target: the configured one, else the median passive train
/// accuracy at the largest budget, else the median over all strategies.
fn resolve_target(cfg: &ExperimentConfig, curves: &[LearningCurve]) -> Result<(Metric, String, f64)> {
    if let (Some(m), Some(v)) = (&cfg.target_metric, cfg.target_value) {
        return Ok((m.parse()?, m.clone(), v));
    }
    let last = *cfg.budgets.last().expect("validated");
    let pick = |only_passive: bool| -> Vec<f64> {
        curves
            .iter()
            .filter(|c| !only_passive || c.strategy == Strategy::Passive)
            .filter_map(|c| c.row_at(last).map(|r| r.train_acc))
            .collect()
    };
    let mut vals = pick(true);
    if vals.is_empty() {
        vals = pick(false);
    }
    vals.sort_by(f64::total_cmp);
    let target = if vals.is_empty() {
        1.0
    } else if vals.len() % 2 == 1 {
        vals[vals.len() / 2]
    } else {
        (vals[vals.len() / 2 - 1] + vals[vals.len() / 2]) / 2.0
    };
    Ok((Metric::TrainAcc, "train_acc".into(), target))
}

/// Run every strategy × trial, write `curves.csv`, `transcripts.jsonl` and
/// `summary.txt` into the output directory, and return the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let settings = cfg.settings()?;
    let mut curves = Vec::new();
    for s in cfg.strategy_list()? {
        curves.extend(learning_curve(
            s,
            &prepared.problem,
            &cfg.budgets,
            cfg.trials,
            cfg.master_seed,
            &prepared.evaluation,
            &settings,
        )?);
    }
    let failures: Vec<_> = curves
        .iter()
        .filter_map(|c| c.error.clone().map(|e| (c.strategy, c.trial, e)))
        .collect();
    let (metric, name, target) = resolve_target(cfg, &curves)?;
    let mut summary = format_summary(&summarize_curves(&curves, metric, target), &name, target);
    for (s, t, e) in &failures {
        let _ = writeln!(summary, "failed: {s} trial {t}: {e}");
    }

    fs::create_dir_all(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("curves.csv"), &curves_csv(&curves))?;
    write_file(&cfg.output_dir.join("transcripts.jsonl"), &transcripts_jsonl(&curves)?)?;
    write_file(&cfg.output_dir.join("summary.txt"), &summary)?;
    Ok(ExperimentReport {
        curves,
        summary,
        failures,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// One parsed line of a curves table.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRecord {
    pub strategy: String,
    pub trial: usize,
    pub budget: usize,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub l2_to_truth: Option<f64>,
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CURVE_HEADER {
        return Err(Error::Validation(format!("{} is not a curves table", path.display())));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let num = |i: usize| -> Result<Option<f64>> {
            let f = rec.get(i).unwrap_or("");
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| bad("number"))
            }
        };
        out.push(CurveRecord {
            strategy: rec.get(0).unwrap_or("").to_string(),
            trial: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("trial"))?,
            budget: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("budget"))?,
            train_acc: num(3)?.ok_or_else(|| bad("train_acc"))?,
            test_acc: num(4)?,
            l2_to_truth: num(5)?,
        });
    }
    Ok(out)
}

/// Labels-to-target per strategy from a curves table, rows in file order.
pub fn summarize(records: &[CurveRecord], metric: Metric, target: f64) -> Vec<SummaryRow> {
    let mut trials: BTreeMap<(String, usize), Option<usize>> = BTreeMap::new();
    for r in records {
        let v = match metric {
            Metric::TrainAcc => Some(r.train_acc),
            Metric::TestAcc => r.test_acc,
            Metric::L2ToTruth => r.l2_to_truth,
        };
        let entry = trials.entry((r.strategy.clone(), r.trial)).or_insert(None);
        if entry.is_none() && v.is_some_and(|v| metric.meets(v, target)) {
            *entry = Some(r.budget);
        }
    }
    let mut by: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for ((s, _), v) in trials {
        by.entry(s).or_default().push(v);
    }
    by.into_iter()
        .map(|(strategy, v)| SummaryRow {
            strategy,
            trials: v.len(),
            reached: v.iter().filter(|x| x.is_some()).count(),
            median_labels: median_labels(&v),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians_treat_unreached_as_infinite() {
        assert_eq!(median_labels(&[Some(3), Some(1), Some(2)]), Some(2.0));
        assert_eq!(median_labels(&[Some(4), Some(2)]), Some(3.0));
        assert_eq!(median_labels(&[Some(4), None]), None);
        assert_eq!(median_labels(&[Some(4), None, Some(1)]), Some(4.0));
        assert_eq!(median_labels(&[]), None);
    }

    #[test]
    fn synthetic_shape() {
        let (data, oracle) = generate_synthetic(50, 4, 9).unwrap();
        assert_eq!(data.dim(), 5);
        assert!(data.rows().all(|x| x[4] == 1.0 && x[..4].iter().all(|v| v.abs() <= 1.0)));
        assert!(data.is_uniform());
        let truth = oracle.truth().unwrap();
        assert!(truth.theta.iter().all(|t| t.abs() <= 1.0));
        let (again, _) = generate_synthetic(50, 4, 9).unwrap();
        assert_eq!(data.flat(), again.flat());
        assert!(generate_synthetic(0, 4, 9).is_err());
    }
}

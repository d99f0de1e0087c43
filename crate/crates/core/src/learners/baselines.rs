use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{ProblemInstance, QueryKind, QueryRecord, RunResult};
use crate::error::{Error, Result};
use crate::eval::{fit_logistic, FitConfig};
use crate::model::Hypothesis;

/// Eigenvalues of `XᵀX` below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

fn finish(prob: &ProblemInstance, mut result: RunResult, fit: &FitConfig) -> Result<RunResult> {
    if result.labels_used > 0 {
        result.hypothesis = fit_logistic(&prob.data, result.transcript.entries(), fit)?.hypothesis;
    }
    Ok(result)
}

/// Label points in random order: successive shuffles of the pool on a
/// uniform pool, i.i.d. draws from the pool weights otherwise. The returned
/// hypothesis is a logistic fit to the labels.
pub fn passive_baseline<R: Rng>(
    prob: &mut ProblemInstance,
    budget: usize,
    fit: &FitConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let data = prob.data.clone();
    let mut result = RunResult::new(Hypothesis::zero(data.dim(), prob.link, 0.0), data.clone());
    let order: Vec<usize> = if data.is_uniform() {
        let mut order = Vec::with_capacity(budget);
        let mut perm: Vec<usize> = (0..data.len()).collect();
        while order.len() < budget {
            perm.shuffle(rng);
            let take = (budget - order.len()).min(perm.len());
            order.extend_from_slice(&perm[..take]);
        }
        order
    } else {
        let dist = WeightedIndex::new(data.weights())
            .map_err(|e| Error::Validation(format!("pool weights: {e}")))?;
        (0..budget).map(|_| dist.sample(rng)).collect()
    };
    for (t, x) in order.into_iter().enumerate() {
        let y = prob.oracle.query(x)?;
        result.record(QueryRecord {
            point: x,
            label: y,
            kind: QueryKind::Passive,
            phase: None,
            iteration: Some(t),
        })?;
    }
    finish(prob, result, fit)
}

/// Diagonal of the hat matrix `X (XᵀX)⁺ Xᵀ`, via an eigendecomposition of the
/// Gram matrix. Pool weights are ignored.
pub fn leverage_scores(data: &crate::model::Dataset) -> Vec<f64> {
    let (n, d) = (data.len(), data.dim());
    if d == 0 {
        return vec![0.0; n];
    }
    let x = DMatrix::from_row_slice(n, d, data.flat());
    let gram = x.transpose() * &x;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return vec![0.0; n];
    }
    let kept: Vec<usize> = (0..d).filter(|&k| eig.eigenvalues[k] > top * RANK_TOL).collect();
    (0..n)
        .map(|i| {
            let row = data.point(i);
            let l: f64 = kept
                .iter()
                .map(|&k| {
                    let u = eig.eigenvectors.column(k);
                    let proj: f64 = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    proj * proj / eig.eigenvalues[k]
                })
                .sum();
            l.clamp(0.0, 1.0)
        })
        .collect()
}

/// Draw `budget` points with replacement in proportion to their leverage
/// scores and label each draw.
pub fn lss_baseline<R: Rng>(
    prob: &mut ProblemInstance,
    budget: usize,
    fit: &FitConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let data = prob.data.clone();
    let mut result = RunResult::new(Hypothesis::zero(data.dim(), prob.link, 0.0), data.clone());
    if budget == 0 {
        return Ok(result);
    }
    let scores = leverage_scores(&data);
    let dist = WeightedIndex::new(&scores)
        .map_err(|e| Error::Validation(format!("leverage scores: {e}")))?;
    for t in 0..budget {
        let x = dist.sample(rng);
        let y = prob.oracle.query(x)?;
        result.record(QueryRecord {
            point: x,
            label: y,
            kind: QueryKind::Leverage,
            phase: None,
            iteration: Some(t),
        })?;
    }
    finish(prob, result, fit)
}

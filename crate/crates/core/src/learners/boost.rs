use super::RunResult;
use crate::error::{Error, Result};
use crate::metrics::weighted_l2_predictions;
use crate::model::{Dataset, Hypothesis};
use crate::par;

/// Index of the candidate whose `radius` ball holds the most candidates;
/// ties go to the lowest index.
pub fn boost_success(candidates: &[Hypothesis], radius: f64, data: &Dataset) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Parameter("boosting needs at least one candidate".into()));
    }
    let preds = candidates
        .iter()
        .map(|h| h.predictions(data))
        .collect::<Result<Vec<_>>>()?;
    let w = data.weights();
    let counts = par::map_range(preds.len(), |i| {
        preds
            .iter()
            .filter(|p| weighted_l2_predictions(&preds[i], p, w) <= radius)
            .count()
    });
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Run `copies` independent learners (in parallel when enabled) and keep the
/// result at the center of the heaviest `radius` ball. `run` receives the copy
/// index and must derive its own seed from it.
pub fn boost_runs<F>(copies: usize, radius: f64, data: &Dataset, run: F) -> Result<RunResult>
where
    F: Fn(usize) -> Result<RunResult> + Sync + Send,
{
    if copies == 0 {
        return Err(Error::Parameter("boosting needs at least one copy".into()));
    }
    let mut results = par::map_range(copies, run).into_iter().collect::<Result<Vec<_>>>()?;
    let hyps: Vec<Hypothesis> = results.iter().map(|r| r.hypothesis.clone()).collect();
    let best = boost_success(&hyps, radius, data)?;
    Ok(results.swap_remove(best))
}

//! Core domain types: the weighted pool, link functions, parameterized
//! hypotheses with clipping, and the simulated label oracle.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Tolerance on the total mass of a pool marginal.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A finite pool of feature vectors with an explicit marginal.
///
/// Points are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
    r2_bound: f64,
}

impl Dataset {
    /// Build a pool from rows. `weights = None` gives the uniform marginal.
    pub fn new(rows: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Parameter("dataset must contain at least one point".into()))?;
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, dim, weights)
    }

    pub fn from_flat(points: Vec<f64>, dim: usize, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 && !points.is_empty() {
            return Err(Error::Parameter("zero-dimensional points must be empty".into()));
        }
        let n = if dim == 0 {
            weights.as_ref().map_or(0, Vec::len)
        } else {
            if points.len() % dim != 0 {
                return Err(Error::Parameter(format!(
                    "flat buffer of length {} is not a multiple of dimension {dim}",
                    points.len()
                )));
            }
            points.len() / dim
        };
        if n == 0 {
            return Err(Error::Parameter("dataset must contain at least one point".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("points must be finite".into()));
        }
        let weights = match weights {
            Some(w) => {
                check_dim(n, w.len())?;
                if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::Parameter("weights must be finite and non-negative".into()));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::Parameter(format!("weights sum to {total}, expected 1")));
                }
                w
            }
            None => vec![1.0 / n as f64; n],
        };
        let max_norm = if dim == 0 {
            0.0
        } else {
            points.chunks_exact(dim).map(norm).fold(0.0, f64::max)
        };
        Ok(Self {
            points,
            weights,
            dim,
            r2_bound: max_norm.max(1.0),
        })
    }

    /// Override the point-norm bound; fails if some point exceeds it beyond
    /// rounding.
    pub fn with_r2_bound(mut self, r2: f64) -> Result<Self> {
        let max_norm = self.rows().map(norm).fold(0.0, f64::max);
        if !(r2 >= max_norm * (1.0 - 1e-12)) {
            return Err(Error::Parameter(format!(
                "r2 bound {r2} is below the largest point norm {max_norm}"
            )));
        }
        self.r2_bound = r2;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on the point norms (never below 1).
    pub fn r2_bound(&self) -> f64 {
        self.r2_bound
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn try_point(&self, i: usize) -> Result<&[f64]> {
        if i < self.len() {
            Ok(self.point(i))
        } else {
            Err(Error::Range {
                index: i,
                len: self.len(),
            })
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    /// True when every weight equals 1/n (to rounding).
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - u).abs() <= 1e-12)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Log of 1 + e^z without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Monotone link from a margin to a label-1 probability.
///
/// Both variants have convex cross-entropy penalties and are Lipschitz, so
/// the induced posteriors stay log-concave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Sigmoid,
    Probit,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn ln_std_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        // Asymptotic Mills-ratio expansion; erfc underflows past here.
        let z2 = z * z;
        -0.5 * z2 - LN_SQRT_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    } else if z < 0.0 {
        (0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        (-0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    }
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Sigmoid => "sigmoid",
            Link::Probit => "probit",
        }
    }

    pub fn lipschitz_const(&self) -> f64 {
        match self {
            Link::Sigmoid => 0.25,
            Link::Probit => (-LN_SQRT_2PI).exp(),
        }
    }

    /// Label-1 probability at margin `z`.
    pub fn forward(&self, z: f64) -> f64 {
        match self {
            Link::Sigmoid => {
                // Branch split keeps exp() from overflowing at large |z|.
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
            Link::Probit => 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2),
        }
    }

    /// `(ln f(z), ln(1 - f(z)))`, accurate in both tails.
    pub fn log_probs(&self, z: f64) -> (f64, f64) {
        match self {
            Link::Sigmoid => (-softplus(-z), -softplus(z)),
            Link::Probit => (ln_std_normal_cdf(z), ln_std_normal_cdf(-z)),
        }
    }

    /// Derivatives of `ln f(z)` and `ln(1 - f(z))` with respect to `z`.
    pub fn log_prob_slopes(&self, z: f64) -> (f64, f64) {
        match self {
            Link::Sigmoid => {
                let p = self.forward(z);
                (1.0 - p, -p)
            }
            Link::Probit => {
                let ln_pdf = -0.5 * z * z - LN_SQRT_2PI;
                let up = (ln_pdf - ln_std_normal_cdf(z)).exp();
                let down = -(ln_pdf - ln_std_normal_cdf(-z)).exp();
                (up, down)
            }
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..0.5).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("clip level {gamma} outside [0, 1/2)")))
    }
}

/// `min(max(z, gamma), 1 - gamma)`.
pub fn clip(z: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!("probability {z} outside [0, 1]")));
    }
    Ok(z.max(gamma).min(1.0 - gamma))
}

/// A parameter vector together with its link and clip level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub theta: Vec<f64>,
    pub link: Link,
    pub gamma: f64,
}

impl Hypothesis {
    pub fn new(theta: Vec<f64>, link: Link, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("theta must be finite".into()));
        }
        Ok(Self { theta, link, gamma })
    }

    /// Unclipped sigmoid hypothesis.
    pub fn logistic(theta: Vec<f64>) -> Self {
        Self {
            theta,
            link: Link::Sigmoid,
            gamma: 0.0,
        }
    }

    pub fn zero(dim: usize, link: Link, gamma: f64) -> Self {
        Self {
            theta: vec![0.0; dim],
            link,
            gamma,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        self.gamma = gamma;
        Ok(self)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.theta, x)
    }

    /// Clipped probability from a precomputed margin.
    pub fn prob_from_margin(&self, z: f64) -> f64 {
        self.link.forward(z).max(self.gamma).min(1.0 - self.gamma)
    }

    /// Clipped `(p, ln p, ln(1 - p))` from a precomputed margin.
    pub fn log_probs_from_margin(&self, z: f64) -> (f64, f64, f64) {
        let (lp, lq) = self.link.log_probs(z);
        let p = self.prob_from_margin(z);
        if self.gamma > 0.0 {
            let lo = self.gamma.ln();
            let hi = (-self.gamma).ln_1p();
            (p, lp.clamp(lo, hi), lq.clamp(lo, hi))
        } else {
            (p, lp, lq)
        }
    }

    /// Clipped prediction at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.prob_from_margin(self.margin(x)))
    }

    /// Predictions at every pool point.
    pub fn predictions(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(data.dim(), self.dim())?;
        Ok(data
            .rows()
            .map(|x| self.prob_from_margin(self.margin(x)))
            .collect())
    }
}

/// Free-function form of [`Hypothesis::predict`].
pub fn predict(h: &Hypothesis, x: &[f64]) -> Result<f64> {
    h.predict(x)
}

/// Where an oracle's labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// Realizable ground truth; each query is a fresh Bernoulli draw.
    Bernoulli { truth: Hypothesis },
    /// Fixed labels; repeated queries of a point return the stored label.
    Replay { labels: Vec<u8> },
}

/// Answers label queries on a fixed pool and counts them.
#[derive(Debug, Clone)]
pub struct LabelOracle {
    pool: Arc<Dataset>,
    source: LabelSource,
    seed: u64,
    rng: ChaCha8Rng,
    query_count: usize,
}

impl LabelOracle {
    pub fn bernoulli(pool: Arc<Dataset>, truth: Hypothesis, seed: u64) -> Result<Self> {
        check_dim(pool.dim(), truth.dim())?;
        Ok(Self {
            pool,
            source: LabelSource::Bernoulli { truth },
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            query_count: 0,
        })
    }

    pub fn replay(pool: Arc<Dataset>, labels: Vec<u8>) -> Result<Self> {
        check_dim(pool.len(), labels.len())?;
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Validation("replay labels must be 0 or 1".into()));
        }
        Ok(Self {
            pool,
            source: LabelSource::Replay { labels },
            seed: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            query_count: 0,
        })
    }

    /// Fresh copy with a new seed and a zeroed counter.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            pool: Arc::clone(&self.pool),
            source: self.source.clone(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            query_count: 0,
        }
    }

    pub fn pool(&self) -> &Arc<Dataset> {
        &self.pool
    }

    pub fn source(&self) -> &LabelSource {
        &self.source
    }

    pub fn truth(&self) -> Option<&Hypothesis> {
        match &self.source {
            LabelSource::Bernoulli { truth } => Some(truth),
            LabelSource::Replay { .. } => None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    /// Label for pool point `index`.
    pub fn query(&mut self, index: usize) -> Result<u8> {
        let x = self.pool.try_point(index)?;
        let label = match &self.source {
            LabelSource::Bernoulli { truth } => {
                let p = truth.prob_from_margin(truth.margin(x));
                u8::from(self.rng.random::<f64>() < p)
            }
            LabelSource::Replay { labels } => labels[index],
        };
        self.query_count += 1;
        Ok(label)
    }

    /// Label for an arbitrary vector; only meaningful for a Bernoulli truth.
    pub fn query_point(&mut self, x: &[f64]) -> Result<u8> {
        match &self.source {
            LabelSource::Bernoulli { truth } => {
                let p = truth.predict(x)?;
                self.query_count += 1;
                Ok(u8::from(self.rng.random::<f64>() < p))
            }
            LabelSource::Replay { .. } => Err(Error::Parameter(
                "replay oracles only answer pool indices".into(),
            )),
        }
    }
}

/// The two-point instance on which active querying is exponentially cheaper
/// than passive sampling.
#[derive(Debug, Clone)]
pub struct Example1 {
    pub data: Dataset,
    pub r1_bound: f64,
    pub link: Link,
    /// Target error, one quarter of the rare point's mass.
    pub epsilon: f64,
}

/// Pool `{0, 1}` in one dimension with weights `(1 - eps', eps')`, R1 = 10.
pub fn make_example1_instance(eps_prime: f64) -> Result<Example1> {
    if !(eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(Error::Parameter(format!("eps' = {eps_prime} outside (0, 1)")));
    }
    let data = Dataset::new(vec![vec![0.0], vec![1.0]], Some(vec![1.0 - eps_prime, eps_prime]))?;
    Ok(Example1 {
        data,
        r1_bound: 10.0,
        link: Link::Sigmoid,
        epsilon: eps_prime / 4.0,
    })
}

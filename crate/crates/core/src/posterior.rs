//! Unnormalized log-concave posteriors over the parameter ball and a
//! Metropolis-adjusted Langevin (MALA) sampler for them.
//!
//! A posterior is the uniform prior on `‖θ‖ ≤ R1` reweighted by
//! `exp(-loss)` for every labelled observation, where the loss is the
//! cross-entropy of the clipped prediction. Weights are never normalized.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{dot, norm, Dataset, Hypothesis, Link};
use crate::par;

/// One transcript entry: `multiplicity` copies of label `label` at `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub index: usize,
    pub label: u8,
    pub multiplicity: usize,
}

/// Ordered record of labelled pool points.
#[derive(Debug, Clone)]
pub struct ObservationTranscript {
    data: Arc<Dataset>,
    entries: Vec<Observation>,
}

impl ObservationTranscript {
    pub fn new(data: Arc<Dataset>) -> Self {
        Self {
            data,
            entries: Vec::new(),
        }
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn total_labels(&self) -> usize {
        self.entries.iter().map(|e| e.multiplicity).sum()
    }

    /// Add `multiplicity` labels, merging into an identical `(index, label)` entry.
    pub fn record(&mut self, index: usize, label: u8, multiplicity: usize) -> Result<()> {
        if index >= self.data.len() {
            return Err(Error::Range {
                index,
                len: self.data.len(),
            });
        }
        if label > 1 {
            return Err(Error::Domain(format!("label {label} is not binary")));
        }
        if multiplicity == 0 {
            return Err(Error::Parameter("multiplicity must be at least 1".into()));
        }
        match self
            .entries
            .iter_mut()
            .find(|e| e.index == index && e.label == label)
        {
            Some(e) => e.multiplicity += multiplicity,
            None => self.entries.push(Observation {
                index,
                label,
                multiplicity,
            }),
        }
        Ok(())
    }
}

/// Per-point label counts; the form the density is evaluated in.
#[derive(Debug, Clone, Copy)]
struct PointCounts {
    index: usize,
    zeros: f64,
    ones: f64,
}

/// Unnormalized posterior induced by a transcript.
#[derive(Debug, Clone)]
pub struct Posterior {
    transcript: ObservationTranscript,
    gamma: f64,
    r1_bound: f64,
    link: Link,
    counts: Vec<PointCounts>,
}

impl Posterior {
    /// Uniform prior on the ball of radius `r1_bound`.
    pub fn uniform(data: Arc<Dataset>, link: Link, gamma: f64, r1_bound: f64) -> Result<Self> {
        Self::from_transcript(ObservationTranscript::new(data), link, gamma, r1_bound)
    }

    pub fn from_transcript(
        transcript: ObservationTranscript,
        link: Link,
        gamma: f64,
        r1_bound: f64,
    ) -> Result<Self> {
        if !(0.0..0.5).contains(&gamma) {
            return Err(Error::Parameter(format!("clip level {gamma} outside [0, 1/2)")));
        }
        if !(r1_bound > 0.0) {
            return Err(Error::Parameter(format!("R1 must be positive, got {r1_bound}")));
        }
        let mut post = Self {
            transcript,
            gamma,
            r1_bound,
            link,
            counts: Vec::new(),
        };
        post.recount();
        Ok(post)
    }

    fn recount(&mut self) {
        let mut counts: Vec<PointCounts> = Vec::new();
        for e in &self.transcript.entries {
            let m = e.multiplicity as f64;
            let slot = match counts.iter_mut().find(|c| c.index == e.index) {
                Some(c) => c,
                None => {
                    counts.push(PointCounts {
                        index: e.index,
                        zeros: 0.0,
                        ones: 0.0,
                    });
                    counts.last_mut().expect("just pushed")
                }
            };
            if e.label == 1 {
                slot.ones += m;
            } else {
                slot.zeros += m;
            }
        }
        counts.sort_by_key(|c| c.index);
        self.counts = counts;
    }

    pub fn transcript(&self) -> &ObservationTranscript {
        &self.transcript
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.transcript.data
    }

    pub fn dim(&self) -> usize {
        self.transcript.data.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r1_bound(&self) -> f64 {
        self.r1_bound
    }

    pub fn link(&self) -> Link {
        self.link
    }

    /// New posterior with one more label; `self` is left untouched.
    pub fn append_observation(&self, index: usize, label: u8) -> Result<Posterior> {
        self.append_many(index, label, 1)
    }

    pub fn append_many(&self, index: usize, label: u8, multiplicity: usize) -> Result<Posterior> {
        let mut next = self.clone();
        next.push(index, label, multiplicity)?;
        Ok(next)
    }

    /// In-place append, for learners that own their posterior.
    pub fn push(&mut self, index: usize, label: u8, multiplicity: usize) -> Result<()> {
        self.transcript.record(index, label, multiplicity)?;
        let m = multiplicity as f64;
        let pos = self.counts.binary_search_by_key(&index, |c| c.index);
        let slot = match pos {
            Ok(p) => &mut self.counts[p],
            Err(p) => {
                self.counts.insert(
                    p,
                    PointCounts {
                        index,
                        zeros: 0.0,
                        ones: 0.0,
                    },
                );
                &mut self.counts[p]
            }
        };
        if label == 1 {
            slot.ones += m;
        } else {
            slot.zeros += m;
        }
        Ok(())
    }

    /// Hypothesis carried by a parameter sample.
    pub fn hypothesis(&self, theta: Vec<f64>) -> Hypothesis {
        Hypothesis {
            theta,
            link: self.link,
            gamma: self.gamma,
        }
    }

    /// Clipped log-density and unclipped gradient in one pass over the
    /// transcript. `theta` must lie inside the ball.
    fn eval_into(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let data = &self.transcript.data;
        let (lo, hi) = if self.gamma > 0.0 {
            (self.gamma.ln(), (-self.gamma).ln_1p())
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        let mut logp = 0.0;
        for c in &self.counts {
            let x = data.point(c.index);
            let z = dot(theta, x);
            let (lp, lq, up, down) = log_probs_and_slopes(self.link, z);
            logp += c.ones * lp.clamp(lo, hi) + c.zeros * lq.clamp(lo, hi);
            let s = c.ones * up + c.zeros * down;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += s * xi;
            }
        }
        logp
    }

    /// `-Σ multiplicity · loss` of the clipped hypothesis, or `-inf` off the ball.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        if norm(theta) > self.r1_bound {
            return Ok(f64::NEG_INFINITY);
        }
        let mut scratch = vec![0.0; theta.len()];
        Ok(self.eval_into(theta, &mut scratch))
    }

    /// Gradient of the unclipped log-density.
    pub fn grad_log_density(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        if !(norm(theta) < self.r1_bound) {
            return Err(Error::Domain("gradient requested outside the parameter ball".into()));
        }
        let mut grad = vec![0.0; theta.len()];
        self.eval_into(theta, &mut grad);
        Ok(grad)
    }
}

/// `(ln f, ln(1-f), d ln f, d ln(1-f))` at margin `z`.
fn log_probs_and_slopes(link: Link, z: f64) -> (f64, f64, f64, f64) {
    match link {
        Link::Sigmoid => {
            let e = (-z.abs()).exp();
            let l = e.ln_1p();
            let (sp_neg, sp_pos) = if z >= 0.0 { (l, z + l) } else { (l - z, l) };
            let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
            (-sp_neg, -sp_pos, 1.0 - p, -p)
        }
        Link::Probit => {
            let (lp, lq) = link.log_probs(z);
            let (up, down) = link.log_prob_slopes(z);
            (lp, lq, up, down)
        }
    }
}

/// MALA settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Initial step; adapted during burn-in, then frozen.
    pub step_size: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub chain_count: usize,
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            burn_in: 200,
            thinning: 10,
            chain_count: 1,
            target_acceptance: 0.574,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Parameter("step_size must be positive".into()));
        }
        if self.thinning == 0 || self.chain_count == 0 {
            return Err(Error::Parameter("thinning and chain_count must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Parameter("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// State of one MALA chain. Chains can be carried across posterior updates
/// (call [`MalaChain::refresh`] after the target changes).
#[derive(Debug, Clone)]
pub struct MalaChain {
    theta: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
    step: f64,
    proposed: u64,
    accepted: u64,
    // scratch buffers
    prop: Vec<f64>,
    prop_grad: Vec<f64>,
}

const INIT_ATTEMPTS: usize = 64;

impl MalaChain {
    /// Start at `θ = 0`, shrinking toward it if the density is not finite.
    pub fn new(post: &Posterior, step_size: f64) -> Result<Self> {
        Self::starting_at(post, vec![0.0; post.dim()], step_size)
    }

    pub fn starting_at(post: &Posterior, start: Vec<f64>, step_size: f64) -> Result<Self> {
        check_dim(post.dim(), start.len())?;
        let d = start.len();
        let mut chain = Self {
            theta: start,
            logp: f64::NEG_INFINITY,
            grad: vec![0.0; d],
            step: step_size,
            proposed: 0,
            accepted: 0,
            prop: vec![0.0; d],
            prop_grad: vec![0.0; d],
        };
        for _ in 0..INIT_ATTEMPTS {
            if norm(&chain.theta) < post.r1_bound {
                chain.logp = post.eval_into(&chain.theta, &mut chain.grad);
                if chain.logp.is_finite() && chain.grad.iter().all(|g| g.is_finite()) {
                    return Ok(chain);
                }
            }
            chain.theta.iter_mut().for_each(|t| *t *= 0.5);
        }
        Err(Error::Initialization(
            "no interior point with finite log-density found".into(),
        ))
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Recompute cached density and gradient for a changed target.
    pub fn refresh(&mut self, post: &Posterior) -> Result<()> {
        check_dim(post.dim(), self.theta.len())?;
        if !(norm(&self.theta) < post.r1_bound) {
            let fresh = Self::starting_at(post, self.theta.clone(), self.step)?;
            *self = fresh;
            return Ok(());
        }
        self.logp = post.eval_into(&self.theta, &mut self.grad);
        Ok(())
    }

    /// One MALA transition; returns the acceptance probability. The drift
    /// `h²/2 · ∇log π` is truncated to length `max(2, √d)·h`, which keeps the
    /// chain from sticking where the gradient is steep; the Metropolis ratio
    /// uses the same truncated drift, so the target is unchanged.
    fn transition<R: Rng + ?Sized>(&mut self, post: &Posterior, rng: &mut R) -> f64 {
        let h = self.step;
        let half_h2 = 0.5 * h * h;
        let max_drift = (self.theta.len() as f64).sqrt().max(2.0) * h;
        let drift_scale = |g: &[f64]| {
            let len = half_h2 * norm(g);
            if len > max_drift {
                half_h2 * max_drift / len
            } else {
                half_h2
            }
        };
        let fwd = drift_scale(&self.grad);
        for ((p, t), g) in self.prop.iter_mut().zip(&self.theta).zip(&self.grad) {
            let xi: f64 = rng.sample(StandardNormal);
            *p = t + fwd * g + h * xi;
        }
        self.proposed += 1;
        // Outside the ball the density is zero: reject.
        if norm(&self.prop) > post.r1_bound {
            return 0.0;
        }
        let logp_prop = post.eval_into(&self.prop, &mut self.prop_grad);
        if !logp_prop.is_finite() {
            return 0.0;
        }
        let bwd = drift_scale(&self.prop_grad);
        // log q(to | from) for the Langevin proposal, up to shared constants.
        let log_q = |to: &[f64], from: &[f64], grad_from: &[f64], scale: f64| {
            let s: f64 = to
                .iter()
                .zip(from)
                .zip(grad_from)
                .map(|((a, b), g)| {
                    let r = a - b - scale * g;
                    r * r
                })
                .sum();
            -s / (2.0 * h * h)
        };
        let log_alpha = logp_prop - self.logp + log_q(&self.theta, &self.prop, &self.prop_grad, bwd)
            - log_q(&self.prop, &self.theta, &self.grad, fwd);
        let alpha = if log_alpha >= 0.0 { 1.0 } else { log_alpha.exp() };
        let u: f64 = rng.random();
        if u < alpha {
            std::mem::swap(&mut self.theta, &mut self.prop);
            std::mem::swap(&mut self.grad, &mut self.prop_grad);
            self.logp = logp_prop;
            self.accepted += 1;
        }
        alpha
    }

    /// Burn-in with Robbins–Monro step adaptation toward `target` acceptance.
    pub fn burn_in<R: Rng + ?Sized>(&mut self, post: &Posterior, steps: usize, target: f64, rng: &mut R) {
        let mut log_step = self.step.ln();
        for t in 0..steps {
            let alpha = self.transition(post, rng);
            let rate = (1.0 / (t as f64 + 1.0).powf(0.6)).max(0.05);
            log_step += rate * (alpha - target);
            // Keep the step inside a sane band relative to the ball.
            log_step = log_step.clamp((1e-8 * post.r1_bound).ln(), post.r1_bound.ln());
            self.step = log_step.exp();
        }
    }

    /// Collect `n` states, keeping every `thinning`-th transition.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        post: &Posterior,
        n: usize,
        thinning: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..thinning.max(1) {
                self.transition(post, rng);
            }
            out.push(self.theta.clone());
        }
        out
    }
}

fn chain_quota(n: usize, chains: usize, c: usize) -> usize {
    n / chains + usize::from(c < n % chains)
}

fn run_chain(post: &Posterior, cfg: &SamplerConfig, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = MalaChain::new(post, cfg.step_size)?;
    chain.burn_in(post, cfg.burn_in, cfg.target_acceptance, &mut rng);
    Ok(chain.sample(post, n, cfg.thinning, &mut rng))
}

/// Draw `n` parameter vectors with MALA.
///
/// Each of `cfg.chain_count` chains starts at the origin with its own seed
/// taken from `rng`; outputs are concatenated in chain order, so results do
/// not depend on whether chains ran in parallel.
pub fn mala_sample<R: RngCore + ?Sized>(
    post: &Posterior,
    cfg: &SamplerConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..cfg.chain_count).map(|_| rng.next_u64()).collect();
    let per_chain = par::map_range(cfg.chain_count, |c| {
        run_chain(post, cfg, chain_quota(n, cfg.chain_count, c), seeds[c])
    });
    let mut out = Vec::with_capacity(n);
    for chunk in per_chain {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Sequential twin of [`mala_sample`]; identical output.
pub fn mala_sample_seq<R: RngCore + ?Sized>(
    post: &Posterior,
    cfg: &SamplerConfig,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..cfg.chain_count).map(|_| rng.next_u64()).collect();
    let mut out = Vec::with_capacity(n);
    for (c, &seed) in seeds.iter().enumerate() {
        out.extend(run_chain(post, cfg, chain_quota(n, cfg.chain_count, c), seed)?);
    }
    Ok(out)
}

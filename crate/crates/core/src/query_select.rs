//! Informativeness estimation, best-point selection, and paired rejection
//! sampling of hypotheses.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::metrics::{kl_from_logs, weighted_l2_predictions, LogRatioCap};
use crate::model::{Dataset, Hypothesis};
use crate::par;
use crate::posterior::{MalaChain, Posterior, SamplerConfig};

/// Per-point informativeness `r̂(x)` and mean prediction `h̄(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformativenessEstimate {
    pub r: Vec<f64>,
    pub mean_prediction: Vec<f64>,
    pub sample_count: usize,
}

/// Flattened sample population: thetas row-major plus per-sample clip/link.
struct Population<'a> {
    thetas: Vec<f64>,
    samples: &'a [Hypothesis],
    dim: usize,
}

impl<'a> Population<'a> {
    fn new(samples: &'a [Hypothesis], data: &Dataset) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Parameter(format!(
                "informativeness needs at least two hypotheses, got {}",
                samples.len()
            )));
        }
        let dim = data.dim();
        let mut thetas = Vec::with_capacity(samples.len() * dim);
        for h in samples {
            check_dim(dim, h.dim())?;
            thetas.extend_from_slice(&h.theta);
        }
        Ok(Self {
            thetas,
            samples,
            dim,
        })
    }

    /// `(r̂(x), h̄(x))` at one point.
    fn score(&self, x: &[f64], cap: f64) -> (f64, f64) {
        let s = self.samples.len();
        let mut logs = Vec::with_capacity(s);
        let mut mean = 0.0;
        for (h, theta) in self.samples.iter().zip(self.thetas.chunks_exact(self.dim.max(1))) {
            let z = if self.dim == 0 {
                0.0
            } else {
                theta.iter().zip(x).map(|(a, b)| a * b).sum()
            };
            let (p, lp, lq) = h.log_probs_from_margin(z);
            mean += p;
            logs.push((lp, lq));
        }
        mean /= s as f64;
        let mean = mean.clamp(0.0, 1.0);
        let (lm, l1m) = (mean.ln(), (-mean).ln_1p());
        let r = logs
            .iter()
            .map(|&(lp, lq)| kl_from_logs(mean, lm, l1m, lp, lq, cap))
            .sum::<f64>()
            / s as f64;
        (r, mean)
    }
}

fn collect(scores: Vec<(f64, f64)>, sample_count: usize) -> InformativenessEstimate {
    let (r, mean_prediction) = scores.into_iter().unzip();
    InformativenessEstimate {
        r,
        mean_prediction,
        sample_count,
    }
}

/// `r̂(x) = (1/S) Σ_s KL(h̄(x) ‖ h_s(x))` at every pool point, where `h̄` is
/// the sample-mean prediction. Parallel over pool points when enabled.
pub fn estimate_r(
    samples: &[Hypothesis],
    data: &Dataset,
    cap: LogRatioCap,
) -> Result<InformativenessEstimate> {
    let pop = Population::new(samples, data)?;
    let scores = par::map_range(data.len(), |i| pop.score(data.point(i), cap.value()));
    Ok(collect(scores, samples.len()))
}

/// Sequential twin of [`estimate_r`].
pub fn estimate_r_seq(
    samples: &[Hypothesis],
    data: &Dataset,
    cap: LogRatioCap,
) -> Result<InformativenessEstimate> {
    let pop = Population::new(samples, data)?;
    let scores = par::map_range_seq(data.len(), |i| pop.score(data.point(i), cap.value()));
    Ok(collect(scores, samples.len()))
}

/// Index of the largest `r̂`; ties go to the lowest index.
pub fn select_query(est: &InformativenessEstimate) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in est.r.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Something that can produce hypotheses one at a time.
pub trait HypothesisSource {
    fn draw(&mut self, rng: &mut dyn RngCore) -> Result<Hypothesis>;
}

/// Always returns the same hypothesis.
#[derive(Debug, Clone)]
pub struct PointMass(pub Hypothesis);

impl HypothesisSource for PointMass {
    fn draw(&mut self, _rng: &mut dyn RngCore) -> Result<Hypothesis> {
        Ok(self.0.clone())
    }
}

/// Finite mixture of hypotheses.
#[derive(Debug, Clone)]
pub struct DiscreteSource {
    hypotheses: Vec<Hypothesis>,
    cumulative: Vec<f64>,
}

impl DiscreteSource {
    pub fn new(hypotheses: Vec<Hypothesis>, weights: Vec<f64>) -> Result<Self> {
        check_dim(hypotheses.len(), weights.len())?;
        if hypotheses.is_empty() || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Parameter("need non-empty, non-negative mixture weights".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Parameter("mixture weights sum to zero".into()));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(Self {
            hypotheses,
            cumulative,
        })
    }

    pub fn uniform(hypotheses: Vec<Hypothesis>) -> Result<Self> {
        let n = hypotheses.len();
        Self::new(hypotheses, vec![1.0; n])
    }

    pub fn index_of_draw(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }
}

impl HypothesisSource for DiscreteSource {
    fn draw(&mut self, rng: &mut dyn RngCore) -> Result<Hypothesis> {
        let u: f64 = rng.random();
        Ok(self.hypotheses[self.index_of_draw(u)].clone())
    }
}

/// MALA-backed draws from a posterior, with chains that persist across
/// posterior updates.
#[derive(Debug, Clone)]
pub struct PosteriorSource {
    posterior: Posterior,
    cfg: SamplerConfig,
    chains: Vec<(MalaChain, ChaCha8Rng)>,
    seed: u64,
    rewarm_steps: usize,
    pending_rewarm: bool,
    cursor: usize,
}

impl PosteriorSource {
    /// Chains are created lazily on first draw and seeded from `seed`.
    pub fn new(posterior: Posterior, cfg: SamplerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            posterior,
            cfg,
            chains: Vec::new(),
            seed,
            rewarm_steps: (cfg.burn_in / 4).max(10),
            pending_rewarm: false,
            cursor: 0,
        })
    }

    /// Burn-in steps run after each posterior update.
    pub fn with_rewarm_steps(mut self, steps: usize) -> Self {
        self.rewarm_steps = steps;
        self
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    /// Record labels; chains pick up the new target on the next draw.
    pub fn observe(&mut self, index: usize, label: u8, multiplicity: usize) -> Result<()> {
        self.posterior.push(index, label, multiplicity)?;
        self.pending_rewarm = true;
        Ok(())
    }

    fn ensure_ready(&mut self) -> Result<()> {
        if self.chains.is_empty() {
            let mut master = ChaCha8Rng::seed_from_u64(self.seed);
            for _ in 0..self.cfg.chain_count {
                let chain = MalaChain::new(&self.posterior, self.cfg.step_size)?;
                let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
                self.chains.push((chain, rng));
            }
            let (post, cfg) = (&self.posterior, &self.cfg);
            par::for_each_mut(&mut self.chains, |_, (chain, rng)| {
                chain.burn_in(post, cfg.burn_in, cfg.target_acceptance, rng);
            });
            self.pending_rewarm = false;
        } else if self.pending_rewarm {
            for (chain, _) in &mut self.chains {
                chain.refresh(&self.posterior)?;
            }
            let (post, cfg, steps) = (&self.posterior, &self.cfg, self.rewarm_steps);
            par::for_each_mut(&mut self.chains, |_, (chain, rng)| {
                chain.burn_in(post, steps, cfg.target_acceptance, rng);
            });
            self.pending_rewarm = false;
        }
        Ok(())
    }

    /// `n` thinned draws split across chains, concatenated in chain order.
    pub fn draw_many(&mut self, n: usize) -> Result<Vec<Hypothesis>> {
        self.ensure_ready()?;
        let k = self.chains.len();
        let (post, thinning) = (&self.posterior, self.cfg.thinning);
        let mut outputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
        {
            let mut work: Vec<(&mut (MalaChain, ChaCha8Rng), &mut Vec<Vec<f64>>)> =
                self.chains.iter_mut().zip(outputs.iter_mut()).collect();
            par::for_each_mut(&mut work, |c, (state, out)| {
                let quota = n / k + usize::from(c < n % k);
                let (chain, rng) = &mut **state;
                **out = chain.sample(post, quota, thinning, rng);
            });
        }
        Ok(outputs
            .into_iter()
            .flatten()
            .map(|theta| self.posterior.hypothesis(theta))
            .collect())
    }

    pub fn acceptance_rate(&self) -> f64 {
        let k = self.chains.len().max(1) as f64;
        self.chains.iter().map(|(c, _)| c.acceptance_rate()).sum::<f64>() / k
    }
}

impl HypothesisSource for PosteriorSource {
    /// One thinned draw, rotating over chains. The caller's rng is unused:
    /// each chain owns its stream.
    fn draw(&mut self, _rng: &mut dyn RngCore) -> Result<Hypothesis> {
        self.ensure_ready()?;
        let c = self.cursor % self.chains.len();
        self.cursor += 1;
        let (chain, rng) = &mut self.chains[c];
        let theta = chain
            .sample(&self.posterior, 1, self.cfg.thinning, rng)
            .pop()
            .expect("one sample requested");
        Ok(self.posterior.hypothesis(theta))
    }
}

/// Settings for [`paired_sample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSampleConfig {
    pub distance_threshold: f64,
    pub max_rejections: usize,
}

impl PairedSampleConfig {
    pub fn new(distance_threshold: f64) -> Result<Self> {
        if !(distance_threshold > 0.0) {
            return Err(Error::Parameter("distance threshold must be positive".into()));
        }
        Ok(Self {
            distance_threshold,
            max_rejections: 2000,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairedOutcome {
    /// A far-enough partner was found; one of the pair was returned.
    Paired,
    /// The rejection budget ran out; the anchor draw was returned.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct PairedDraw {
    pub hypothesis: Hypothesis,
    pub outcome: PairedOutcome,
    pub rejections: usize,
}

/// Draw an anchor from `p`, rejection-sample a partner from `q` at weighted
/// ℓ2 distance at least the threshold, and return either with probability ½.
pub fn paired_sample<P, Q>(
    p: &mut P,
    q: &mut Q,
    cfg: &PairedSampleConfig,
    data: &Dataset,
    rng: &mut dyn RngCore,
) -> Result<PairedDraw>
where
    P: HypothesisSource + ?Sized,
    Q: HypothesisSource + ?Sized,
{
    let anchor = p.draw(rng)?;
    let anchor_pred = anchor.predictions(data)?;
    for tries in 0..cfg.max_rejections {
        let partner = q.draw(rng)?;
        let partner_pred = partner.predictions(data)?;
        let dist = weighted_l2_predictions(&anchor_pred, &partner_pred, data.weights());
        if dist >= cfg.distance_threshold {
            let pick_anchor = rng.random_bool(0.5);
            return Ok(PairedDraw {
                hypothesis: if pick_anchor { anchor } else { partner },
                outcome: PairedOutcome::Paired,
                rejections: tries,
            });
        }
    }
    Ok(PairedDraw {
        hypothesis: anchor,
        outcome: PairedOutcome::Fallback,
        rejections: cfg.max_rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::kl_binary;
    use crate::model::{make_example1_instance, Link};
    use std::sync::Arc;

    fn hyp(t: f64) -> Hypothesis {
        Hypothesis::logistic(vec![t])
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn identical_samples_are_uninformative() {
        let data = Dataset::new(vec![vec![1.0], vec![-2.0], vec![0.5]], None).unwrap();
        let est = estimate_r(&vec![hyp(0.7); 5], &data, LogRatioCap::default()).unwrap();
        assert!(est.r.iter().all(|&r| r == 0.0));
        assert_eq!(est.sample_count, 5);
    }

    #[test]
    fn two_sample_mixture_value() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        let samples = vec![hyp(logit(0.9)), hyp(logit(0.1))];
        let est = estimate_r(&samples, &data, LogRatioCap::default()).unwrap();
        assert!((est.mean_prediction[0] - 0.5).abs() < 1e-12);
        // ½ ln(25/9), frozen from a 40-digit evaluation.
        assert!((est.r[0] - 0.510_825_623_765_990_7).abs() < 1e-12);
        let direct = 0.5 * kl_binary(0.5, 0.9, LogRatioCap::default()).unwrap()
            + 0.5 * kl_binary(0.5, 0.1, LogRatioCap::default()).unwrap();
        assert!((est.r[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn example1_origin_is_never_informative() {
        let ex = make_example1_instance(0.01).unwrap();
        let samples: Vec<_> = [-9.0, -1.0, 0.5, 3.0, 8.0].iter().map(|&t| hyp(t)).collect();
        let est = estimate_r(&samples, &ex.data, LogRatioCap::default()).unwrap();
        assert_eq!(est.r[0], 0.0);
        assert!(est.r[1] > 0.0);
        assert_eq!(select_query(&est), 1);
    }

    #[test]
    fn estimate_rejects_tiny_populations() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        assert!(estimate_r(&[], &data, LogRatioCap::default()).is_err());
        assert!(estimate_r(&[hyp(1.0)], &data, LogRatioCap::default()).is_err());
        let wrong = vec![Hypothesis::logistic(vec![1.0, 2.0]); 2];
        assert!(estimate_r(&wrong, &data, LogRatioCap::default()).is_err());
    }

    #[test]
    fn saturated_samples_stay_finite() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        let samples = vec![hyp(800.0), hyp(-800.0), hyp(0.0)];
        let est = estimate_r(&samples, &data, LogRatioCap::default()).unwrap();
        assert!(est.r[0].is_finite() && est.r[0] > 0.0);
    }

    #[test]
    fn select_query_examples() {
        let mk = |r: Vec<f64>| InformativenessEstimate {
            mean_prediction: vec![0.5; r.len()],
            r,
            sample_count: 2,
        };
        assert_eq!(select_query(&mk(vec![0.0, 0.3, 0.1])), 1);
        assert_eq!(select_query(&mk(vec![0.0; 4])), 0);
        assert_eq!(select_query(&mk(vec![0.1, 0.2, 0.9, 0.3, 0.0, 0.9])), 2);
    }

    #[test]
    fn select_query_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
            let c: f64 = rng.random_range(1e-3..1e3);
            let a = InformativenessEstimate {
                mean_prediction: vec![0.5; 30],
                r: r.clone(),
                sample_count: 2,
            };
            let b = InformativenessEstimate {
                r: r.iter().map(|v| v * c).collect(),
                ..a.clone()
            };
            assert_eq!(select_query(&a), select_query(&b));
        }
    }

    #[test]
    fn parallel_and_sequential_estimates_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = (0..200)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let samples: Vec<_> = (0..64)
            .map(|_| {
                Hypothesis::new((0..4).map(|_| rng.random_range(-3.0..3.0)).collect(), Link::Sigmoid, 0.01)
                    .unwrap()
            })
            .collect();
        let a = estimate_r(&samples, &data, LogRatioCap::default()).unwrap();
        let b = estimate_r_seq(&samples, &data, LogRatioCap::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_prediction.iter().all(|&m| (0.01..=0.99).contains(&m)));
    }

    #[test]
    fn paired_sample_falls_back_on_point_masses() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        let cfg = PairedSampleConfig {
            distance_threshold: 0.01,
            max_rejections: 50,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = paired_sample(
            &mut PointMass(hyp(1.0)),
            &mut PointMass(hyp(1.0)),
            &cfg,
            &data,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.outcome, PairedOutcome::Fallback);
        assert_eq!(out.rejections, 50);
        assert_eq!(out.hypothesis, hyp(1.0));
    }

    #[test]
    fn paired_sample_splits_far_pair_evenly() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        let cfg = PairedSampleConfig::new(0.2).unwrap();
        let (a, b) = (hyp(-2.0), hyp(2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut count_a = 0;
        for _ in 0..10_000 {
            let out = paired_sample(
                &mut PointMass(a.clone()),
                &mut PointMass(b.clone()),
                &cfg,
                &data,
                &mut rng,
            )
            .unwrap();
            assert_eq!(out.outcome, PairedOutcome::Paired);
            count_a += usize::from(out.hypothesis == a);
        }
        let freq = count_a as f64 / 1e4;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn paired_sample_filters_near_partners() {
        let data = Dataset::new(vec![vec![1.0]], None).unwrap();
        let cfg = PairedSampleConfig::new(0.3).unwrap();
        let anchor = hyp(0.0);
        let (far, near) = (hyp(4.0), hyp(0.1));
        let mut q = DiscreteSource::uniform(vec![far.clone(), near.clone()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let out = paired_sample(&mut PointMass(anchor.clone()), &mut q, &cfg, &data, &mut rng).unwrap();
            assert!(out.hypothesis == anchor || out.hypothesis == far);
            assert_ne!(out.hypothesis, near);
        }
    }

    #[test]
    fn posterior_source_draws_inside_ball_and_updates() {
        let data = Arc::new(Dataset::new(vec![vec![1.0], vec![-1.0]], None).unwrap());
        let post = Posterior::uniform(data, Link::Sigmoid, 0.0, 3.0).unwrap();
        let cfg = SamplerConfig {
            chain_count: 2,
            burn_in: 40,
            ..Default::default()
        };
        let mut src = PosteriorSource::new(post, cfg, 5).unwrap();
        let hs = src.draw_many(101).unwrap();
        assert_eq!(hs.len(), 101);
        assert!(hs.iter().all(|h| h.theta[0].abs() <= 3.0));
        src.observe(0, 1, 30).unwrap();
        let hs = src.draw_many(400).unwrap();
        let mean = hs.iter().map(|h| h.theta[0]).sum::<f64>() / 400.0;
        assert!(mean > 1.0, "mean {mean}");
        let mut again = PosteriorSource::new(src.posterior().clone(), cfg, 5).unwrap();
        let mut other = PosteriorSource::new(src.posterior().clone(), cfg, 5).unwrap();
        assert_eq!(again.draw_many(20).unwrap(), other.draw_many(20).unwrap());
    }
}

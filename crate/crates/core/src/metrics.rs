//! Distances and losses: weighted ℓ2 between hypotheses, binary KL with a
//! log-ratio cap, and the cross-entropy penalty.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{Dataset, Hypothesis};

/// Magnitude cap applied to each log-ratio inside a KL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioCap(f64);

impl LogRatioCap {
    pub fn new(cap: f64) -> Result<Self> {
        if cap > 0.0 {
            Ok(Self(cap))
        } else {
            Err(Error::Parameter(format!("log-ratio cap must be positive, got {cap}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for LogRatioCap {
    fn default() -> Self {
        Self(100.0)
    }
}

/// `sqrt(sum_x w(x) (p1(x) - p2(x))^2)` over precomputed prediction vectors.
pub fn weighted_l2_predictions(p1: &[f64], p2: &[f64], weights: &[f64]) -> f64 {
    p1.iter()
        .zip(p2)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Weighted ℓ2 distance between two hypotheses under the pool marginal.
pub fn weighted_l2(h1: &Hypothesis, h2: &Hypothesis, data: &Dataset) -> Result<f64> {
    check_dim(h1.dim(), h2.dim())?;
    let p1 = h1.predictions(data)?;
    let p2 = h2.predictions(data)?;
    Ok(weighted_l2_predictions(&p1, &p2, data.weights()))
}

/// Capped binary KL from log-probabilities.
///
/// `p` may sit on {0, 1}; its zero-weight term then vanishes. Tiny negative
/// results from rounding are snapped to zero.
pub(crate) fn kl_from_logs(p: f64, ln_p: f64, ln_1mp: f64, ln_q: f64, ln_1mq: f64, cap: f64) -> f64 {
    let term = |w: f64, ln_a: f64, ln_b: f64| {
        if w == 0.0 {
            0.0
        } else {
            let r = ln_a - ln_b;
            // NaN only arises from (-inf) - (-inf), i.e. both sides are zero.
            let r = if r.is_nan() { 0.0 } else { r.clamp(-cap, cap) };
            w * r
        }
    };
    let kl = term(p, ln_p, ln_q) + term(1.0 - p, ln_1mp, ln_1mq);
    if kl < 0.0 && kl > -1e-12 {
        0.0
    } else {
        kl
    }
}

/// `p ln(p/q) + (1-p) ln((1-p)/(1-q))` with each log-ratio clamped to `±cap`.
pub fn kl_binary(p: f64, q: f64, cap: LogRatioCap) -> Result<f64> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain(format!("{name} = {v} must lie strictly inside (0, 1)")));
        }
    }
    Ok(kl_from_logs(
        p,
        p.ln(),
        (-p).ln_1p(),
        q.ln(),
        (-q).ln_1p(),
        cap.value(),
    ))
}

/// Cross-entropy penalty of predicting `pred` for label `y`.
pub fn cross_entropy_loss(pred: f64, y: u8) -> Result<f64> {
    if !(pred > 0.0 && pred < 1.0) {
        return Err(Error::Domain(format!("prediction {pred} must be clipped into (0, 1)")));
    }
    match y {
        1 => Ok(-pred.ln()),
        0 => Ok(-(-pred).ln_1p()),
        _ => Err(Error::Domain(format!("label {y} is not binary"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Link;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weighted_l2_examples() {
        let two = Dataset::new(vec![vec![1.0], vec![-1.0]], None).unwrap();
        let h = Hypothesis::logistic(vec![2.0]);
        assert_eq!(weighted_l2(&h, &h, &two).unwrap(), 0.0);

        // Predictions (1, 0) vs (0, 0) at weights (1/2, 1/2).
        let d = weighted_l2_predictions(&[1.0, 0.0], &[0.0, 0.0], &[0.5, 0.5]);
        assert!((d - 0.5f64.sqrt()).abs() < 1e-15);

        // Example-1 geometry: only x = 1 differs.
        let eps = 0.01;
        let ex = crate::model::make_example1_instance(eps).unwrap();
        let (a, b) = (Hypothesis::logistic(vec![1.0]), Hypothesis::logistic(vec![-0.5]));
        let delta = Link::Sigmoid.forward(1.0) - Link::Sigmoid.forward(-0.5);
        let d = weighted_l2(&a, &b, &ex.data).unwrap();
        assert!((d - eps.sqrt() * delta).abs() < 1e-15);

        assert!(weighted_l2(&a, &Hypothesis::logistic(vec![0.0, 1.0]), &ex.data).is_err());
    }

    #[test]
    fn kl_examples() {
        let cap = LogRatioCap::default();
        assert_eq!(kl_binary(0.5, 0.5, cap).unwrap(), 0.0);
        // 0.75 ln 3 - 0.25 ln 3 = 0.5 ln 3.
        let v = kl_binary(0.75, 0.25, cap).unwrap();
        assert!((v - 0.549_306_144_334_054_8).abs() < 1e-14);
        // ln(0.5 / e^-200) is clamped to 100; the other term is 0.5 ln 0.5.
        let q = (-200.0f64).exp();
        let v = kl_binary(0.5, q, cap).unwrap();
        assert!((v - 49.653_426_409_720_03).abs() < 1e-10, "{v}");

        assert!(matches!(kl_binary(0.0, 0.5, cap), Err(Error::Domain(_))));
        assert!(matches!(kl_binary(0.5, 1.0, cap), Err(Error::Domain(_))));
        assert!(LogRatioCap::new(0.0).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((cross_entropy_loss(0.5, 1).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy_loss(0.5, 0).unwrap() - ln2).abs() < 1e-15);
        assert!((cross_entropy_loss(0.01, 1).unwrap() - 4.605_170_185_988_091).abs() < 1e-12);
        assert!(cross_entropy_loss(1.0, 1).is_err());
        assert!(cross_entropy_loss(0.0, 0).is_err());
    }

    #[test]
    fn kl_grid_nonnegative_and_pinsker() {
        let cap = LogRatioCap::default();
        let grid: Vec<f64> = (0..100).map(|i| 0.01 + 0.98 * i as f64 / 99.0).collect();
        for &p in &grid {
            for &q in &grid {
                let kl = kl_binary(p, q, cap).unwrap();
                if p == q {
                    assert!(kl.abs() < 1e-15);
                } else {
                    assert!(kl > 0.0, "p={p} q={q}");
                }
                assert!(kl >= 2.0 * (p - q) * (p - q) - 1e-15);
            }
        }
    }

    #[test]
    fn loss_is_bounded_by_clip_level() {
        for &gamma in &[0.001, 0.01, 0.2] {
            let bound = (1.0 / gamma as f64).ln();
            for i in 0..=1000 {
                let pred = gamma + (1.0 - 2.0 * gamma) * i as f64 / 1000.0;
                for y in [0, 1] {
                    assert!(cross_entropy_loss(pred, y).unwrap() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_l2_is_a_metric_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Dataset::new(rows, None).unwrap();
        let rand_h = |rng: &mut ChaCha8Rng| {
            Hypothesis::logistic((0..3).map(|_| rng.random_range(-4.0..4.0)).collect())
        };
        for _ in 0..1000 {
            let (a, b, c) = (rand_h(&mut rng), rand_h(&mut rng), rand_h(&mut rng));
            let ab = weighted_l2(&a, &b, &data).unwrap();
            let ba = weighted_l2(&b, &a, &data).unwrap();
            let bc = weighted_l2(&b, &c, &data).unwrap();
            let ac = weighted_l2(&a, &c, &data).unwrap();
            assert_eq!(ab, ba);
            assert!(ac <= ab + bc + 1e-12);
        }
    }
}

use std::sync::Arc;

use alr_core::dimred::{dimension_reduction, is_significant};
use alr_core::eval::{accuracy, fit_logistic, l2_to_truth, FitConfig};
use alr_core::learners::boost_success;
use alr_core::metrics::{cross_entropy_loss, kl_binary, weighted_l2, LogRatioCap};
use alr_core::model::{clip, Dataset, Hypothesis, LabelOracle, Link};
use alr_core::posterior::{Observation, ObservationTranscript, Posterior};
use alr_core::query_select::{select_query, InformativenessEstimate};
use proptest::prelude::*;

fn vec_in(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, d)
}

fn pool(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(vec_in(d, -2.0, 2.0), n).prop_map(|rows| Dataset::new(rows, None).unwrap())
}

fn link() -> impl Strategy<Value = Link> {
    prop_oneof![Just(Link::Sigmoid), Just(Link::Probit)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_stay_inside_clip_band(
        theta in vec_in(3, -50.0, 50.0),
        x in vec_in(3, -50.0, 50.0),
        gamma in 0.0..0.49f64,
        link in link(),
    ) {
        let h = Hypothesis::new(theta, link, gamma).unwrap();
        let p = h.predict(&x).unwrap();
        prop_assert!(p >= gamma && p <= 1.0 - gamma);
    }

    #[test]
    fn clip_is_idempotent(z in 0.0..1.0f64, gamma in 0.0..0.5f64) {
        let once = clip(z, gamma).unwrap();
        prop_assert_eq!(clip(once, gamma).unwrap(), once);
    }

    #[test]
    fn loss_is_bounded_under_clipping(p in 0.0..1.0f64, gamma in 0.001..0.49f64, y in 0u8..2) {
        let pred = clip(p, gamma).unwrap();
        let loss = cross_entropy_loss(pred, y).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= (1.0 / gamma).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_dominates_pinsker(p in 0.01..0.99f64, q in 0.01..0.99f64) {
        let kl = kl_binary(p, q, LogRatioCap::default()).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(kl >= 2.0 * (p - q) * (p - q) - 1e-12);
    }

    #[test]
    fn weighted_l2_is_symmetric_and_triangular(
        data in pool(2, 1..20),
        a in vec_in(2, -3.0, 3.0),
        b in vec_in(2, -3.0, 3.0),
        c in vec_in(2, -3.0, 3.0),
    ) {
        let (ha, hb, hc) = (Hypothesis::logistic(a), Hypothesis::logistic(b), Hypothesis::logistic(c));
        let ab = weighted_l2(&ha, &hb, &data).unwrap();
        prop_assert_eq!(ab, weighted_l2(&hb, &ha, &data).unwrap());
        let ac = weighted_l2(&ha, &hc, &data).unwrap();
        let cb = weighted_l2(&hc, &hb, &data).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn posterior_density_ignores_transcript_order(
        data in pool(2, 4..12),
        labels in prop::collection::vec((0usize..4, 0u8..2, 1usize..3), 1..15),
        theta in vec_in(2, -1.0, 1.0),
        gamma in 0.0..0.3f64,
        seed in any::<u64>(),
    ) {
        let data = Arc::new(data);
        let build = |obs: &[(usize, u8, usize)]| {
            let mut t = ObservationTranscript::new(data.clone());
            for &(i, y, m) in obs {
                t.record(i, y, m).unwrap();
            }
            Posterior::from_transcript(t, Link::Sigmoid, gamma, 2.0).unwrap()
        };
        let mut shuffled = labels.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let a = build(&labels).log_density(&theta).unwrap();
        let b = build(&shuffled).log_density(&theta).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn appended_labels_never_raise_density(
        data in pool(2, 3..8),
        theta in vec_in(2, -1.0, 1.0),
        idx in 0usize..3,
        y in 0u8..2,
        gamma in 0.01..0.4f64,
    ) {
        let post = Posterior::uniform(Arc::new(data), Link::Sigmoid, gamma, 2.0).unwrap();
        let before = post.log_density(&theta).unwrap();
        let after = post.append_observation(idx, y).unwrap().log_density(&theta).unwrap();
        let change = after - before;
        prop_assert!(change <= 1e-12);
        prop_assert!(change >= -(1.0 / gamma).ln() - 1e-12);
    }

    #[test]
    fn argmax_survives_positive_rescaling(r in prop::collection::vec(0.0..5.0f64, 1..40), scale in 0.01..100.0f64) {
        let est = |r: Vec<f64>| InformativenessEstimate {
            mean_prediction: vec![0.5; r.len()],
            r,
            sample_count: 2,
        };
        let scaled: Vec<f64> = r.iter().map(|v| v * scale).collect();
        let base = select_query(&est(r.clone()));
        let rescaled = select_query(&est(scaled.clone()));
        prop_assert_eq!(scaled[base], scaled[rescaled]);
        prop_assert!(base == rescaled || r[base] == r[rescaled]);
    }

    #[test]
    fn fit_objective_never_increases(
        data in pool(3, 5..30),
        labels in prop::collection::vec(0u8..2, 30),
        reg in 1e-4..1.0f64,
    ) {
        let obs: Vec<Observation> = (0..data.len())
            .map(|i| Observation { index: i, label: labels[i], multiplicity: 1 })
            .collect();
        let cfg = FitConfig { reg, ..FitConfig::default() };
        let fit = fit_logistic(&data, &obs, &cfg).unwrap();
        prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
        if fit.converged {
            prop_assert!(fit.grad_norm <= cfg.tol);
        }
    }

    #[test]
    fn accuracy_and_truth_distance_are_bounded(
        data in pool(2, 1..30),
        theta in vec_in(2, -5.0, 5.0),
        truth in vec_in(2, -5.0, 5.0),
        labels in prop::collection::vec(0u8..2, 30),
    ) {
        let h = Hypothesis::logistic(theta);
        let n = data.len();
        let acc = accuracy(&h, &data, &labels[..n]).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let data = Arc::new(data);
        let oracle = LabelOracle::bernoulli(data.clone(), Hypothesis::logistic(truth), 0).unwrap();
        let l2 = l2_to_truth(&h, &oracle, &data).unwrap();
        prop_assert!((0.0..=1.0).contains(&l2));
    }

    #[test]
    fn dimension_reduction_postconditions(data in pool(4, 2..25), eps in 0.05..0.8f64) {
        let r2 = data.r2_bound();
        prop_assume!(r2 > 1e-6);
        let c = 2f64.sqrt() / (r2 * eps);
        let kappa = eps * eps / 2.0;
        let red = dimension_reduction(&data, c, kappa).unwrap();
        let basis = red.subspace.basis();
        prop_assert!(basis.len() <= data.dim());
        for (i, u) in basis.iter().enumerate() {
            for (j, v) in basis.iter().enumerate() {
                let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-9);
            }
        }
        prop_assert!(is_significant(&red.subspace, &data, c, kappa).unwrap());
    }

    #[test]
    fn boosting_ignores_candidate_order_among_equals(
        data in pool(1, 1..6),
        thetas in prop::collection::vec(-2.0..2.0f64, 2..7),
        radius in 0.01..0.5f64,
        rot in 0usize..7,
    ) {
        let cands: Vec<Hypothesis> = thetas.iter().map(|&t| Hypothesis::logistic(vec![t])).collect();
        let best = boost_success(&cands, radius, &data).unwrap();
        let k = rot % cands.len();
        let mut rotated = cands.clone();
        rotated.rotate_left(k);
        let best_rot = boost_success(&rotated, radius, &data).unwrap();
        let count = |cs: &[Hypothesis], i: usize| {
            cs.iter().filter(|h| weighted_l2(&cs[i], h, &data).unwrap() <= radius).count()
        };
        prop_assert_eq!(count(&cands, best), count(&rotated, best_rot));
    }
}

use alr_core::eval::{
    accuracy, fit_logistic, learning_curve, CurveSettings, EvalSet, Evaluation, FitConfig, Metric, Strategy,
};
use alr_core::harness::{generate_synthetic, realize_labels};
use alr_core::learners::ProblemInstance;
use alr_core::model::Link;
use alr_core::posterior::Observation;

fn setup(n: usize) -> (ProblemInstance, Evaluation) {
    let (data, oracle) = generate_synthetic(n, 3, 11).unwrap();
    let labels = realize_labels(oracle.truth().unwrap(), &data, 11).unwrap();
    let prob = ProblemInstance::new(oracle.pool().clone(), oracle, Link::Sigmoid, 2.0, 0.3, 0.1).unwrap();
    let eval = Evaluation {
        train_labels: labels.clone(),
        test: Some(EvalSet {
            data: prob.data.clone(),
            labels,
        }),
    };
    (prob, eval)
}

#[test]
fn passive_curve_at_full_budget_equals_full_pool_fit() {
    let (prob, eval) = setup(60);
    let settings = CurveSettings::default();
    let curves = learning_curve(Strategy::Passive, &prob, &[60], 2, 3, &eval, &settings).unwrap();
    for c in &curves {
        let mut seen: Vec<usize> = c.queries.iter().map(|q| q.point).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..60).collect::<Vec<_>>());
        let mut obs: Vec<Observation> = c
            .queries
            .iter()
            .map(|q| Observation {
                index: q.point,
                label: q.label,
                multiplicity: 1,
            })
            .collect();
        obs.sort_by_key(|o| o.index);
        let fit = fit_logistic(&prob.data, &obs, &FitConfig::default()).unwrap();
        let want = accuracy(&fit.hypothesis, &prob.data, &eval.train_labels).unwrap();
        let got = c.row_at(60).unwrap().train_acc;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn trials_draw_distinct_transcripts_and_rows_align() {
    let (prob, eval) = setup(80);
    let budgets = [5, 10, 20];
    for s in [Strategy::Passive, Strategy::Leverage] {
        let curves = learning_curve(s, &prob, &budgets, 2, 0, &eval, &CurveSettings::default()).unwrap();
        assert_eq!(curves.len(), 2);
        assert_ne!(curves[0].queries, curves[1].queries);
        for c in &curves {
            assert!(c.error.is_none());
            let got: Vec<usize> = c.rows.iter().map(|r| r.budget).collect();
            assert_eq!(got, budgets);
            for r in &c.rows {
                assert!((0.0..=1.0).contains(&r.train_acc));
                assert!(r.l2_to_truth.is_some_and(|v| (0.0..=1.0).contains(&v)));
            }
            let hit = c.labels_to_target(Metric::TrainAcc, 0.0);
            assert_eq!(hit, Some(5));
        }
    }
}

#[test]
fn unordered_budgets_are_rejected() {
    let (prob, eval) = setup(20);
    assert!(learning_curve(Strategy::Passive, &prob, &[10, 5], 1, 0, &eval, &CurveSettings::default()).is_err());
    assert!(learning_curve(Strategy::Passive, &prob, &[], 1, 0, &eval, &CurveSettings::default()).is_err());
}

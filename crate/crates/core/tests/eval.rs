use dcrn_core::eval::{
    counterfactual_eval, export_longitudinal_csv, ingest_longitudinal_csv, plan_selection_accuracy, CsvSchema,
    EvalError, OracleForecaster, RandomForecaster,
};
use dcrn_core::sim::{
    enumerate_optimal_plan, generate_counterfactual_test, generate_dataset, test_histories, CounterfactualHistory,
    SimConfig,
};

fn plan_patients(n: usize, tau: usize) -> Vec<CounterfactualHistory> {
    let cfg = SimConfig {
        test_patients: n,
        seed: 13,
        ..SimConfig::default()
    };
    test_histories(&cfg, tau, std::iter::once(cfg.max_len - tau)).unwrap()
}

#[test]
fn oracle_is_exact_on_the_default_test_set() {
    let set = generate_counterfactual_test(&SimConfig::default(), 5).unwrap();
    assert_eq!(set.len(), 5000);
    let report = counterfactual_eval(&OracleForecaster, &set, 5).unwrap();
    assert!(report.per_step.iter().all(|&e| e < 1e-9), "{:?}", report.per_step);
    for tau in [3, 5] {
        let plans = plan_selection_accuracy(&OracleForecaster, &plan_patients(200, tau), tau, false).unwrap();
        assert_eq!(plans.accuracy, 1.0);
        assert_eq!(plans.mean_regret, 0.0);
    }
}

fn optimal_share(h: &CounterfactualHistory) -> f64 {
    let e = enumerate_optimal_plan(h, 3).unwrap();
    (0..8).filter(|&i| e.is_optimal(i)).count() as f64 / 8.0
}

#[test]
fn random_chooser_hits_one_plan_in_eight() {
    // Extinct tumours make every plan optimal, so 1/8 holds only where the
    // optimum is unique; over all patients the target is the mean share of
    // optimal plans.
    let all = plan_patients(1500, 3);
    let (unique, tied): (Vec<_>, Vec<_>) = all
        .into_iter()
        .partition(|h| optimal_share(h) == 0.125);
    let chooser = RandomForecaster { seed: 3 };
    let report = plan_selection_accuracy(&chooser, &unique, 3, false).unwrap();
    assert!(unique.len() >= 1000);
    assert_eq!(report.plans_per_patient, 8);
    assert!((report.accuracy - 0.125).abs() < 0.03, "accuracy {}", report.accuracy);

    let everyone: Vec<_> = unique.iter().chain(&tied).cloned().collect();
    let expected = everyone.iter().map(optimal_share).sum::<f64>() / everyone.len() as f64;
    let report = plan_selection_accuracy(&chooser, &everyone, 3, false).unwrap();
    assert!((report.accuracy - expected).abs() < 0.03, "accuracy {} vs {expected}", report.accuracy);
}

#[test]
fn export_then_ingest_preserves_every_observation() {
    let ds = generate_dataset(&SimConfig {
        n_patients: 25,
        max_len: 9,
        horizon: 3,
        seed: 4,
        ..SimConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    export_longitudinal_csv(&ds, std::fs::File::create(&path).unwrap()).unwrap();
    let back = ingest_longitudinal_csv(&path, &CsvSchema::for_dataset(&ds)).unwrap();

    // Simulator parameters are not columns of the CSV.
    let mut stripped = ds.trajectories.clone();
    stripped.iter_mut().for_each(|t| t.statics = None);
    assert_eq!(back.trajectories, stripped);
    assert_eq!(back.meta.normalization, ds.meta.normalization);
    assert_eq!(back.meta.treated_fraction, ds.meta.treated_fraction);
    assert_eq!(back.meta.covariate_names, ds.meta.covariate_names);

    let mut again = Vec::new();
    export_longitudinal_csv(&back, &mut again).unwrap();
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn malformed_files_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let schema = CsvSchema {
        covariates: vec!["x".into()],
        split: None,
        ..CsvSchema::default()
    };
    let cases = [
        ("id,step,x,treatment,outcome\n1,0,0.5,0,1.0\n1,1,0.5,1,0.9\n1,1,0.4,0,0.8\n", 4, "duplicate"),
        ("id,step,x,treatment,outcome\n1,0,0.5,0,1.0\n1,1,0.5,2,0.9\n", 3, "binary"),
        ("id,step,x,treatment,outcome\n1,0,0.5,0,1.0\n1,1,0.5,0.5,0.9\n", 3, "binary"),
    ];
    for (i, (text, line, needle)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.csv"));
        std::fs::write(&path, text).unwrap();
        match ingest_longitudinal_csv(&path, &schema) {
            Err(EvalError::Parse { line: l, message }) => {
                assert_eq!(l, *line as u64, "{message}");
                assert!(message.contains(needle), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}


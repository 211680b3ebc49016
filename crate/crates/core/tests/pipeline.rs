use lod_core::experiment::{run_pipeline, run_sweep, run_theory, SweepAxis};
use lod_core::metrics::MetricsReport;
use lod_core::{ExperimentConfig, Scenario};

fn small(scenario: Scenario) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "scenario = {scenario}\n\
         data.n_train = 400\n\
         data.m = 200\n\
         data.n_id_test = 200\n\
         data.n_ood_test = 200\n\
         filter.epochs = 10\n\
         detector.classifier_epochs = 20\n"
    ))
    .unwrap()
}

#[test]
fn oracle_filtering_dominates() {
    let cfg = ExperimentConfig::default();
    let mut oracle = cfg.clone();
    oracle.oracle = true;
    let wins = (0..20)
        .filter(|&seed| {
            let real = run_pipeline(&cfg, seed, None).unwrap().report.auroc;
            let best = run_pipeline(&oracle, seed, None).unwrap().report.auroc;
            best >= real
        })
        .count();
    assert!(wins >= 18, "oracle AUROC >= pipeline AUROC in only {wins}/20 seeds");
}

#[test]
fn report_fields_populated() {
    let r = run_pipeline(&small(Scenario::SyntheticFar), 0, None).unwrap().report;
    r.validate().unwrap();
    assert!((0.0..=1.0).contains(&r.auroc));
    assert!(r.filter_precision.is_some() && r.filter_recall.is_some());
    assert_eq!((r.n_id_test, r.n_ood_test), (200, 200));
}

#[test]
fn single_value_sweep_matches_pipeline() {
    let mut cfg = small(Scenario::SyntheticNear);
    cfg.seeds = vec![4, 5];
    let sweep = run_sweep(&cfg, SweepAxis::Pi, &["0.5".to_string()], None).unwrap();
    for cell in &sweep.cells {
        let direct = run_pipeline(&cfg, cell.seed, None).unwrap().report;
        assert_eq!(cell.result.as_ref().unwrap().csv_row(), direct.csv_row());
    }
}

#[test]
fn sweep_aggregation_matches_cell_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Scenario::SyntheticFar);
    cfg.seeds = vec![0, 1, 2];
    cfg.workers = 2;
    let values = vec!["3:1".to_string(), "1:1".to_string()];
    let sweep = run_sweep(&cfg, SweepAxis::Ratio, &values, Some(dir.path())).unwrap();

    let cells = std::fs::read_to_string(dir.path().join("cells.csv")).unwrap();
    for value in &values {
        let reports: Vec<MetricsReport> = cells
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{value},ok,")))
            .map(|l| {
                let row = l.splitn(3, ',').nth(2).unwrap();
                MetricsReport::from_csv_row(row.trim_end_matches(',')).unwrap()
            })
            .collect();
        assert_eq!(reports.len(), 3);
        let fpr = reports.iter().map(|r| r.fpr95).sum::<f64>() / 3.0;
        let auroc = reports.iter().map(|r| r.auroc).sum::<f64>() / 3.0;
        let row = sweep.row(value).unwrap();
        assert!((row.fpr95 - fpr).abs() < 1e-6, "{value}: {} vs {fpr}", row.fpr95);
        assert!((row.auroc - auroc).abs() < 1e-6, "{value}: {} vs {auroc}", row.auroc);
    }
}

#[test]
fn near_clean_theory_gap_is_positive() {
    let mut cfg = ExperimentConfig {
        scenario: Scenario::Theory,
        ..ExperimentConfig::default()
    };
    cfg.set("theory.delta", "0.001").unwrap();
    // Enough samples that the flipped group is non-empty.
    cfg.set("theory.n", "20000").unwrap();
    cfg.seeds = vec![0];
    let summary = run_theory(&cfg, None).unwrap();
    let trace = &summary.runs[0].trace;
    let last_early = trace
        .steps
        .iter()
        .rev()
        .find(|s| s.theta_drift <= 1.0)
        .unwrap();
    assert!(last_early.gap > 0.0, "gap {}", last_early.gap);
}

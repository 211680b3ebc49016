//! End-to-end runs: data, filtering, detector, metrics, artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::data::csv::{load_csv, save_csv, CsvFormat};
use crate::data::{
    build_wild, gen_multiclass_gaussian, gen_ood, hard_split, noisify_as_extra_class, ood_count,
    LabeledDataset, OodSpec, WildSet,
};
use crate::detector::{classify, score, train_detector, train_id_classifier, DetectorConfig, DetectorModel};
use crate::error::{Error, PartialTrace, Result};
use crate::experiment::config::{ExperimentConfig, Scenario};
use crate::filter::{
    filter_report, kmeans2, mean_losses, summary_text, ClusterSplit, FilterReport, FilterTraining,
    train_kplus1,
};
use crate::metrics::{accuracy, auroc, fpr95, MetricsReport};
use crate::rng::{self, derive_seed};

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Every dataset a run touches.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub id_train: LabeledDataset,
    pub wild: WildSet,
    pub id_test: LabeledDataset,
    pub ood_test: Array2<f64>,
}

fn rows(a: &Array2<f64>, from: usize, to: usize) -> Array2<f64> {
    a.slice(s![from..to, ..]).to_owned()
}

/// Builds the data for one seed of a synthetic or CSV scenario.
pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<ScenarioData> {
    let d = &cfg.data;
    let n_wild_ood = ood_count(cfg.pi, d.m).min(d.m);
    let n_wild_id = d.m - n_wild_ood;
    match cfg.scenario {
        Scenario::SyntheticFar | Scenario::SyntheticNear => {
            let id_train = gen_multiclass_gaussian(
                d.k,
                d.n_train / d.k,
                d.d,
                d.separation,
                d.sigma,
                derive_seed(seed, "id-train"),
            )?;
            let holdout = gen_multiclass_gaussian(
                d.k,
                (n_wild_id + d.n_id_test).div_ceil(d.k),
                d.d,
                d.separation,
                d.sigma,
                derive_seed(seed, "id-holdout"),
            )?;
            let spec = OodSpec {
                kind: cfg.scenario.ood_kind().expect("synthetic scenario"),
                id_classes: d.k,
                blobs: d.ood_blobs,
                separation: d.separation,
                near_scale: d.near_scale,
                sigma: d.sigma,
            };
            let ood = gen_ood(
                &spec,
                (n_wild_ood + d.n_ood_test).div_ceil(d.ood_blobs.max(1)),
                d.d,
                derive_seed(seed, "ood"),
            )?;
            let wild = build_wild(
                holdout.features.slice(s![..n_wild_id, ..]),
                ood.features.slice(s![..n_wild_ood, ..]),
                cfg.pi,
                d.m,
                derive_seed(seed, "wild"),
            )?;
            let test_idx: Vec<usize> = (n_wild_id..n_wild_id + d.n_id_test).collect();
            Ok(ScenarioData {
                id_train,
                wild,
                id_test: holdout.select(&test_idx),
                ood_test: rows(&ood.features, n_wild_ood, n_wild_ood + d.n_ood_test),
            })
        }
        Scenario::CsvDataset => {
            let path = d
                .input
                .as_ref()
                .ok_or_else(|| Error::Config("csv-dataset needs data.input".into()))?;
            let ds: LabeledDataset = load_csv(path)?;
            let split = hard_split(&ds, d.num_id_classes, d.wild_ood_fraction, derive_seed(seed, "split"))?;
            // The unlabeled ID half is shared between wild ID rows and ID test rows.
            let mut order: Vec<usize> = (0..split.id_test.len()).collect();
            order.shuffle(&mut rng::stream(seed, "holdout"));
            let (to_wild, to_test) = order.split_at(order.len() / 2);
            let id_pool = split.id_test.select(to_wild);
            let wild = build_wild(
                id_pool.features.view(),
                split.wild_ood_pool.features.view(),
                cfg.pi,
                d.m,
                derive_seed(seed, "wild"),
            )?;
            Ok(ScenarioData {
                id_train: split.id_train,
                wild,
                id_test: split.id_test.select(to_test),
                ood_test: split.ood_test.features,
            })
        }
        Scenario::Theory => Err(Error::Config("the theory scenario has no pipeline data".into())),
    }
}

#[derive(Debug, Clone)]
pub struct FilterStage {
    pub training: FilterTraining,
    pub mean_losses: Vec<f64>,
    pub split: ClusterSplit,
    pub report: FilterReport,
}

impl FilterStage {
    /// Wild row indices assigned to the OOD cluster.
    pub fn candidates(&self) -> Vec<usize> {
        self.split.ood_indices()
    }
}

/// Noisify, train the `K + 1` classifier, reduce and cluster the losses.
pub fn run_filter_stage(cfg: &ExperimentConfig, seed: u64, data: &ScenarioData) -> Result<FilterStage> {
    let noisy = stage("noisify", noisify_as_extra_class(&data.wild, data.id_train.num_classes))?;
    let training = stage(
        "train_kplus1",
        train_kplus1(&data.id_train, &noisy, &cfg.filter_config(seed)),
    )?;
    let u = stage("mean_losses", mean_losses(&training.trace))?;
    let split = stage("kmeans2", kmeans2(&u))?;
    let report = stage("filter_report", filter_report(&split.assignment, &data.wild.ground_truth))?;
    Ok(FilterStage {
        training,
        mean_losses: u,
        split,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct DetectStage {
    pub model: DetectorModel,
    pub classifier_train_accuracy: f64,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub acc: f64,
    pub fpr95: f64,
    pub auroc: f64,
}

/// Backbone, detector head, and test-set evaluation.
pub fn run_detect_stage(
    id_train: &LabeledDataset,
    candidates: ArrayView2<f64>,
    id_test: &LabeledDataset,
    ood_test: ArrayView2<f64>,
    config: &DetectorConfig,
) -> Result<DetectStage> {
    let classifier = stage("train_id_classifier", train_id_classifier(id_train, config))?;
    let trained = stage(
        "train_detector",
        train_detector(id_train.features.view(), candidates, &classifier.network, config),
    )?;
    let model = trained.model;
    let id_scores = stage("score", score(&model, id_test.features.view()))?;
    let ood_scores = stage("score", score(&model, ood_test))?;
    let predicted = stage("classify", classify(&model.backbone, id_test.features.view()))?;
    let acc = stage("metrics", accuracy(&predicted, &id_test.labels))?;
    let fpr = stage("metrics", fpr95(&id_scores, &ood_scores))?;
    let au = stage("metrics", auroc(&id_scores, &ood_scores))?;
    Ok(DetectStage {
        model,
        classifier_train_accuracy: classifier.train_accuracy,
        id_scores,
        ood_scores,
        acc,
        fpr95: fpr,
        auroc: au,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: MetricsReport,
    pub data: ScenarioData,
    /// Absent in oracle mode.
    pub filter: Option<FilterStage>,
    pub detect: DetectStage,
    pub run_dir: Option<PathBuf>,
}

/// `sample_id,split,score` rows, ID test rows first.
pub fn scores_csv(id_scores: &[f64], ood_scores: &[f64]) -> String {
    let mut out = String::from("sample_id,split,score\n");
    for (i, s) in id_scores.iter().enumerate() {
        writeln!(out, "{i},id_test,{s}").unwrap();
    }
    for (i, s) in ood_scores.iter().enumerate() {
        writeln!(out, "{i},ood_test,{s}").unwrap();
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Config for a single seed, as persisted in `config.snapshot`.
pub fn single_seed(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![seed],
        ..cfg.clone()
    }
}

/// Runs the whole pipeline for one seed. With `out`, artifacts go to
/// `<out>/<run-id>/`; files written before a failure are kept, including
/// a partial `trace.csv` when filtering aborts numerically.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<PipelineOutcome> {
    stage("config", cfg.validate())?;
    let run_dir = match out {
        Some(root) => {
            let dir = root.join(cfg.run_id_for(seed));
            create_dir(&dir)?;
            write_file(&dir.join("config.snapshot"), &single_seed(cfg, seed).snapshot())?;
            Some(dir)
        }
        None => None,
    };
    let data = stage("data", build_scenario(cfg, seed))?;

    let (filter, candidates, precision, recall) = if cfg.oracle {
        let ood: Vec<usize> = (0..data.wild.len()).filter(|&i| !data.wild.ground_truth[i]).collect();
        if let Some(dir) = &run_dir {
            write_file(&dir.join("filter.txt"), "mode=oracle\n")?;
        }
        (None, ood, 1.0, 1.0)
    } else {
        let result = run_filter_stage(cfg, seed, &data);
        if let (Some(dir), Err(e)) = (&run_dir, &result) {
            if let Error::Numerical {
                partial: Some(p), ..
            } = e.root()
            {
                if let PartialTrace::Loss(trace) = p.as_ref() {
                    save_csv(trace, dir.join("trace.csv"))?;
                }
            }
        }
        let fs = result?;
        if let Some(dir) = &run_dir {
            save_csv(&fs.training.trace, dir.join("trace.csv"))?;
            write_file(&dir.join("filter.txt"), &summary_text(&fs.split, Some(&fs.report)))?;
        }
        let cand = fs.candidates();
        let (p, r) = (fs.report.precision, fs.report.recall);
        (Some(fs), cand, p, r)
    };

    let cand_features = data.wild.features.select(Axis(0), &candidates);
    let detect = run_detect_stage(
        &data.id_train,
        cand_features.view(),
        &data.id_test,
        data.ood_test.view(),
        &cfg.detector_config(seed),
    )?;
    let report = MetricsReport {
        pi: cfg.pi,
        ratio: cfg.filter.ratio,
        seed,
        fpr95: detect.fpr95,
        auroc: detect.auroc,
        acc: detect.acc,
        filter_precision: Some(precision),
        filter_recall: Some(recall),
        n_id_test: detect.id_scores.len(),
        n_ood_test: detect.ood_scores.len(),
        config_digest: cfg.digest(seed),
    };
    if let Some(dir) = &run_dir {
        write_file(&dir.join("scores.csv"), &scores_csv(&detect.id_scores, &detect.ood_scores))?;
        write_file(&dir.join("report.csv"), &report.to_csv())?;
        write_file(&dir.join("report.txt"), &report.to_key_value())?;
    }
    Ok(PipelineOutcome {
        report,
        data,
        filter,
        detect,
        run_dir,
    })
}

/// Writes the datasets of one seed as CSV files into `dir`:
/// `id_train.csv`, `wild.csv`, `id_test.csv`, `ood_test.csv`.
pub fn export_scenario(data: &ScenarioData, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    save_csv(&data.id_train, dir.join("id_train.csv"))?;
    save_csv(&data.wild, dir.join("wild.csv"))?;
    save_csv(&data.id_test, dir.join("id_test.csv"))?;
    let ood = WildSet::new(data.ood_test.clone(), vec![false; data.ood_test.nrows()])?;
    save_csv(&ood, dir.join("ood_test.csv"))?;
    Ok(())
}

/// Wild rows whose assignment is OOD, in `gt,f1..` format.
pub fn candidates_csv(wild: &WildSet, split: &ClusterSplit) -> Result<String> {
    Ok(wild.select(&split.ood_indices())?.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(scenario: Scenario) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            scenario,
            ..ExperimentConfig::default()
        };
        for kv in [
            "data.n_train=400",
            "data.m=200",
            "data.n_id_test=100",
            "data.n_ood_test=100",
            "filter.epochs=5",
        ] {
            cfg.set_pair(kv).unwrap();
        }
        cfg
    }

    #[test]
    fn synthetic_composition() {
        let cfg = small(Scenario::SyntheticFar);
        let data = build_scenario(&cfg, 1).unwrap();
        assert_eq!(data.id_train.len(), 400);
        assert_eq!(data.wild.len(), 200);
        assert_eq!(data.wild.n_ood(), 100);
        assert_eq!(data.id_test.len(), 100);
        assert_eq!(data.ood_test.nrows(), 100);
    }

    #[test]
    fn pipeline_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(Scenario::SyntheticFar);
        let out = run_pipeline(&cfg, 0, Some(dir.path())).unwrap();
        let run = out.run_dir.unwrap();
        for f in ["config.snapshot", "trace.csv", "filter.txt", "scores.csv", "report.csv"] {
            assert!(run.join(f).exists(), "{f}");
        }
        let report = fs::read_to_string(run.join("report.csv")).unwrap();
        assert!(report.starts_with(MetricsReport::CSV_HEADER));
        assert!((0.0..=1.0).contains(&out.report.auroc));
        let snap = ExperimentConfig::load(run.join("config.snapshot")).unwrap();
        assert_eq!(snap.seeds, vec![0]);
    }

    #[test]
    fn oracle_mode_skips_filter() {
        let mut cfg = small(Scenario::SyntheticFar);
        cfg.oracle = true;
        let out = run_pipeline(&cfg, 0, None).unwrap();
        assert!(out.filter.is_none());
        assert_eq!(out.report.filter_precision, Some(1.0));
    }

    #[test]
    fn csv_scenario_runs() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_multiclass_gaussian(5, 120, 8, 4.0, 1.0, 2).unwrap();
        let path = dir.path().join("all.csv");
        save_csv(&ds, &path).unwrap();
        let mut cfg = small(Scenario::CsvDataset);
        cfg.data.input = Some(path);
        cfg.data.num_id_classes = 4;
        cfg.data.m = 100;
        let out = run_pipeline(&cfg, 3, None).unwrap();
        assert_eq!(out.data.id_train.num_classes, 4);
        assert_eq!(out.data.id_train.len(), 240);
        assert_eq!(out.data.wild.n_ood(), 50);
        assert_eq!(out.data.ood_test.nrows(), 120 - 84);
    }
}

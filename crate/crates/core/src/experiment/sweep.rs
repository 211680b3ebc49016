//! One-axis sweeps over `pi`, batch ratio, or epochs.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::pipeline::{create_dir, run_pipeline, write_file};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Pi,
    Ratio,
    Epochs,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Pi => "pi",
            SweepAxis::Ratio => "filter.ratio",
            SweepAxis::Epochs => "filter.epochs",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Pi => "pi",
            SweepAxis::Ratio => "ratio",
            SweepAxis::Epochs => "epochs",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pi" => Ok(SweepAxis::Pi),
            "ratio" => Ok(SweepAxis::Ratio),
            "epochs" => Ok(SweepAxis::Epochs),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected pi, ratio or epochs)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub seed: u64,
    /// The failure message when the cell did not complete.
    pub result: std::result::Result<MetricsReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub fpr95: f64,
    pub fpr95_std: f64,
    pub auroc: f64,
    pub acc: f64,
    pub filter_precision: f64,
    pub filter_recall: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-value means over the seeds that completed.
pub fn aggregate(values: &[String], cells: &[SweepCell]) -> Vec<SweepRow> {
    values
        .iter()
        .map(|value| {
            let ok: Vec<&MetricsReport> = cells
                .iter()
                .filter(|c| &c.value == value)
                .filter_map(|c| c.result.as_ref().ok())
                .collect();
            let failed = cells
                .iter()
                .filter(|c| &c.value == value && c.result.is_err())
                .count();
            let col = |f: &dyn Fn(&MetricsReport) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
            let fpr = col(&|r| r.fpr95);
            SweepRow {
                value: value.clone(),
                n_ok: ok.len(),
                n_failed: failed,
                fpr95: mean(&fpr),
                fpr95_std: std_dev(&fpr),
                auroc: mean(&col(&|r| r.auroc)),
                acc: mean(&col(&|r| r.acc)),
                filter_precision: mean(&col(&|r| r.filter_precision.unwrap_or(f64::NAN))),
                filter_recall: mean(&col(&|r| r.filter_recall.unwrap_or(f64::NAN))),
            }
        })
        .collect()
}

impl SweepResult {
    pub const SUMMARY_HEADER: &'static str =
        "value,n_ok,n_failed,fpr95,fpr95_std,auroc,acc,filter_precision,filter_recall";

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{}\n", Self::SUMMARY_HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.value,
                r.n_ok,
                r.n_failed,
                r.fpr95,
                r.fpr95_std,
                r.auroc,
                r.acc,
                r.filter_precision,
                r.filter_recall
            )
            .unwrap();
        }
        out
    }

    /// Every cell's report row plus a status column.
    pub fn cells_csv(&self) -> String {
        let mut out = format!("value,status,{},error\n", MetricsReport::CSV_HEADER);
        for c in &self.cells {
            match &c.result {
                Ok(r) => writeln!(out, "{},ok,{},", c.value, r.csv_row()).unwrap(),
                Err(msg) => writeln!(
                    out,
                    "{},failed,,,{},,,,,,{}",
                    c.value,
                    c.seed,
                    msg.replace(['\n', ','], " ")
                )
                .unwrap(),
            }
        }
        out
    }

    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// Runs every `(value, seed)` cell on `config.workers` threads. Failed
/// cells are recorded and the sweep continues. With `out`, each cell writes
/// its own run directory and the sweep writes `sweep.csv` and `cells.csv`.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    out: Option<&Path>,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut per_value = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = config.clone();
        cfg.set(axis.key(), v)?;
        cfg.run_id = None;
        cfg.validate()?;
        per_value.push(cfg);
    }
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| config.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, seed)| SweepCell {
                value: values[i].clone(),
                seed,
                result: run_pipeline(&per_value[i], seed, out)
                    .map(|o| o.report)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    });
    let result = SweepResult {
        axis,
        rows: aggregate(values, &cells),
        cells,
    };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("sweep.csv"), &result.summary_csv())?;
        write_file(&dir.join("cells.csv"), &result.cells_csv())?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::BatchRatio;

    fn report(fpr: f64, seed: u64) -> MetricsReport {
        MetricsReport {
            pi: 0.5,
            ratio: BatchRatio::new(3, 1),
            seed,
            fpr95: fpr,
            auroc: 1.0 - fpr,
            acc: 1.0,
            filter_precision: Some(1.0),
            filter_recall: Some(0.5),
            n_id_test: 1,
            n_ood_test: 1,
            config_digest: String::new(),
        }
    }

    #[test]
    fn aggregation_matches_recomputation() {
        let values = vec!["a".to_string(), "b".to_string()];
        let cells = vec![
            SweepCell { value: "a".into(), seed: 0, result: Ok(report(0.1, 0)) },
            SweepCell { value: "a".into(), seed: 1, result: Ok(report(0.3, 1)) },
            SweepCell { value: "b".into(), seed: 0, result: Err("boom".into()) },
            SweepCell { value: "b".into(), seed: 1, result: Ok(report(0.5, 1)) },
        ];
        let rows = aggregate(&values, &cells);
        assert!((rows[0].fpr95 - 0.2).abs() < 1e-15);
        assert!((rows[0].fpr95_std - 0.1414213562373095).abs() < 1e-12);
        assert_eq!((rows[1].n_ok, rows[1].n_failed), (1, 1));
        assert_eq!(rows[1].fpr95, 0.5);
        assert_eq!(rows[1].fpr95_std, 0.0);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("ratio".parse::<SweepAxis>().unwrap(), SweepAxis::Ratio);
        assert!("lr".parse::<SweepAxis>().unwrap_err().is_config());
    }
}

//! Detection and classification metrics. Higher scores mean "more ID".

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::filter::BatchRatio;

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Input("ID and OOD score lists must be non-empty".into()));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::Input("scores must not be NaN".into()));
    }
    Ok(())
}

/// Fraction of OOD scores at or above the threshold that keeps `tpr` of the
/// ID scores.
///
/// The threshold is the `k`-th largest ID score, where `k` is the smallest
/// count with `k / n_id >= tpr`. A score counts as accepted when `>= tau`.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::Input(format!("tpr target must be in (0, 1], got {tpr}")));
    }
    let n = id_scores.len();
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= tpr)
        .unwrap_or(n);
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tau = sorted[k - 1];
    let accepted = ood_scores.iter().filter(|&&s| s >= tau).count();
    Ok(accepted as f64 / ood_scores.len() as f64)
}

pub fn fpr95(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    fpr_at_tpr(id_scores, ood_scores, 0.95)
}

/// Mann-Whitney AUROC from average ranks; ties count one half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps average ranks integral.
    let mut id_rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share the average (i + j + 2) / 2.
        let twice_avg = (i + j + 2) as u128;
        let ids = all[i..=j].iter().filter(|e| e.1).count() as u128;
        id_rank_sum2 += ids * twice_avg;
        i = j + 1;
    }
    let n1 = id_scores.len() as u128;
    let n0 = ood_scores.len() as u128;
    // 2U = 2R - n1(n1+1)
    let twice_u = id_rank_sum2 - n1 * (n1 + 1);
    Ok(twice_u as f64 / (2 * n1 * n0) as f64)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Input("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub pi: f64,
    pub ratio: BatchRatio,
    pub seed: u64,
    pub fpr95: f64,
    pub auroc: f64,
    pub acc: f64,
    /// OOD-recovery quality of the filter; absent when no ground truth exists.
    pub filter_precision: Option<f64>,
    pub filter_recall: Option<f64>,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    /// Hex digest of the config snapshot that produced the run.
    pub config_digest: String,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "pi,ratio,seed,fpr95,auroc,acc,filter_precision,filter_recall";

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fpr95", Some(self.fpr95)),
            ("auroc", Some(self.auroc)),
            ("acc", Some(self.acc)),
            ("filter_precision", self.filter_precision),
            ("filter_recall", self.filter_recall),
        ] {
            let Some(v) = v else { continue };
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.n_id_test == 0 || self.n_ood_test == 0 {
            return Err(Error::Input("test set counts must be positive".into()));
        }
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.pi,
            self.ratio,
            self.seed,
            self.fpr95,
            self.auroc,
            self.acc,
            opt(self.filter_precision),
            opt(self.filter_recall)
        )
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        writeln!(out, "pi={}", self.pi).unwrap();
        writeln!(out, "ratio={}", self.ratio).unwrap();
        writeln!(out, "seed={}", self.seed).unwrap();
        writeln!(out, "fpr95={}", self.fpr95).unwrap();
        writeln!(out, "auroc={}", self.auroc).unwrap();
        writeln!(out, "acc={}", self.acc).unwrap();
        writeln!(out, "filter_precision={}", opt(self.filter_precision)).unwrap();
        writeln!(out, "filter_recall={}", opt(self.filter_recall)).unwrap();
        writeln!(out, "n_id_test={}", self.n_id_test).unwrap();
        writeln!(out, "n_ood_test={}", self.n_ood_test).unwrap();
        writeln!(out, "config_digest={}", self.config_digest).unwrap();
        out
    }

    /// Parses one data row written by [`MetricsReport::csv_row`]. Counts and
    /// digest are not part of the row and come back empty.
    pub fn from_csv_row(row: &str) -> Result<Self> {
        let cells: Vec<&str> = row.trim().split(',').collect();
        if cells.len() != 8 {
            return Err(Error::Input(format!("report row has {} cells, expected 8", cells.len())));
        }
        let f = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .map_err(|_| Error::Input(format!("bad number `{}` in report row", cells[i])))
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() { Ok(None) } else { f(i).map(Some) }
        };
        Ok(Self {
            pi: f(0)?,
            ratio: cells[1].parse()?,
            seed: cells[2]
                .parse()
                .map_err(|_| Error::Input(format!("bad seed `{}`", cells[2])))?,
            fpr95: f(3)?,
            auroc: f(4)?,
            acc: f(5)?,
            filter_precision: maybe(6)?,
            filter_recall: maybe(7)?,
            n_id_test: 0,
            n_ood_test: 0,
            config_digest: String::new(),
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

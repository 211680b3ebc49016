//! Config-driven runs, sweeps and theory checks with on-disk artifacts.

pub mod config;
pub mod pipeline;
pub mod sweep;

use std::fmt::Write as _;
use std::path::Path;

pub use config::{DataConfig, ExperimentConfig, Scenario};
pub use pipeline::{
    build_scenario, run_detect_stage, run_filter_stage, run_pipeline, PipelineOutcome, ScenarioData,
};
pub use sweep::{run_sweep, SweepAxis, SweepResult};

use crate::error::Result;
use crate::theory::{check_gap, run_linear_gd, GapReport, TheoryTrace};
use pipeline::{create_dir, single_seed, write_file};

#[derive(Debug, Clone)]
pub struct TheoryRun {
    pub seed: u64,
    pub trace: TheoryTrace,
    pub report: GapReport,
}

#[derive(Debug, Clone)]
pub struct TheorySummary {
    pub runs: Vec<TheoryRun>,
    pub median_alignment_fraction: f64,
    pub median_gap_fraction: f64,
    /// Seeds whose every early step has alignment at or above the floor.
    pub seeds_fully_aligned: usize,
    /// Seeds whose bound turns positive within the early phase.
    pub seeds_nonvacuous_early: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl TheorySummary {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seeds={}", self.runs.len()).unwrap();
        writeln!(out, "median_alignment_fraction={}", self.median_alignment_fraction).unwrap();
        writeln!(out, "median_gap_fraction={}", self.median_gap_fraction).unwrap();
        writeln!(out, "seeds_fully_aligned={}", self.seeds_fully_aligned).unwrap();
        writeln!(out, "seeds_nonvacuous_early={}", self.seeds_nonvacuous_early).unwrap();
        out
    }
}

/// Runs the linear verifier for every configured seed. With `out`, each seed
/// writes `<out>/<run-id>/{config.snapshot, trace.csv, report.txt}` and the
/// aggregate goes to `<out>/theory-summary.txt`.
pub fn run_theory(config: &ExperimentConfig, out: Option<&Path>) -> Result<TheorySummary> {
    config.theory_config(0).validate()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let trace = run_linear_gd(&config.theory_config(seed))?;
        let report = check_gap(&trace)?;
        if let Some(root) = out {
            let dir = root.join(config.run_id_for(seed));
            create_dir(&dir)?;
            write_file(&dir.join("config.snapshot"), &single_seed(config, seed).snapshot())?;
            write_file(&dir.join("trace.csv"), &trace.to_csv())?;
            write_file(&dir.join("report.txt"), &report.to_key_value())?;
        }
        runs.push(TheoryRun {
            seed,
            trace,
            report,
        });
    }
    let align: Vec<f64> = runs.iter().map(|r| r.report.alignment_fraction).collect();
    let gap: Vec<f64> = runs.iter().map(|r| r.report.gap_fraction).collect();
    let summary = TheorySummary {
        median_alignment_fraction: median(&align),
        median_gap_fraction: median(&gap),
        seeds_fully_aligned: runs
            .iter()
            .filter(|r| r.report.first_alignment_violation.is_none())
            .count(),
        seeds_nonvacuous_early: runs.iter().filter(|r| r.report.nonvacuous_early).count(),
        runs,
    };
    if let Some(root) = out {
        create_dir(root)?;
        write_file(&root.join("theory-summary.txt"), &summary.to_key_value())?;
    }
    Ok(summary)
}

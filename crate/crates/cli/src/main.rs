//! `lod`: command-line harness for loss-difference OOD detection runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lod_core::data::csv::{load_csv, save_csv};
use lod_core::data::{noisify_as_extra_class, LabeledDataset, WildSet};
use lod_core::experiment::pipeline::{candidates_csv, export_scenario, scores_csv, single_seed};
use lod_core::experiment::{build_scenario, run_detect_stage, run_pipeline, run_sweep, run_theory, SweepAxis};
use lod_core::filter::{filter_report, kmeans2, mean_losses, summary_text, train_kplus1};
use lod_core::metrics::MetricsReport;
use lod_core::{Error, ExperimentConfig, Result, Scenario};

#[derive(Parser, Debug)]
#[command(name = "lod", version, about = "Loss-difference OOD detection on wild data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed, overriding `seeds`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed list, e.g. `0..10` or `0,3,7`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `synthetic-far`, `synthetic-near`, `csv-dataset` or `theory`.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Wild-set OOD fraction.
    #[arg(long, global = true)]
    pi: Option<f64>,
    /// ID-to-wild batch ratio, e.g. `3:1`.
    #[arg(long, global = true)]
    ratio: Option<String>,
    /// Filter training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Parallel sweep cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Train the detector on ground-truth OOD flags.
    #[arg(long, global = true)]
    oracle: bool,
    /// Any config key, e.g. `--set filter.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario and write its datasets as CSV.
    Synth,
    /// Train the (K+1)-way classifier and split the wild set.
    Filter {
        /// Labeled ID data; synthesized from the config when absent.
        #[arg(long)]
        id_train: Option<PathBuf>,
        /// Wild set in `gt,f1..` format.
        #[arg(long)]
        wild: Option<PathBuf>,
    },
    /// Train the detector from saved data and score the test sets.
    Detect {
        #[arg(long)]
        id_train: PathBuf,
        /// OOD candidates in `gt,f1..` format.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        id_test: PathBuf,
        /// OOD test rows in `gt,f1..` format.
        #[arg(long)]
        ood_test: PathBuf,
        /// Full wild set, used only to report filter recall.
        #[arg(long)]
        wild: Option<PathBuf>,
    },
    /// Full pipeline for every seed.
    Run,
    /// One pipeline per (value, seed) and a per-value summary.
    Sweep {
        /// `pi`, `ratio` or `epochs`.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Early-learning verifier for the linear model.
    Theory,
}

fn build_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &common.scenario {
        cfg.set("scenario", s)?;
    }
    if let Some(pi) = common.pi {
        cfg.pi = pi;
    }
    if let Some(r) = &common.ratio {
        cfg.set("filter.ratio", r)?;
    }
    if let Some(e) = common.epochs {
        cfg.filter.optimizer.epochs = e;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if common.oracle {
        cfg.oracle = true;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(s) = &common.seeds {
        cfg.set("seeds", s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let dir = cfg.out.join(cfg.run_id_for(seed));
    mkdir(&dir)?;
    write(&dir.join("config.snapshot"), &single_seed(cfg, seed).snapshot())?;
    Ok(dir)
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        let dir = run_dir(cfg, seed)?;
        export_scenario(&build_scenario(cfg, seed)?, &dir)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn cmd_filter(cfg: &ExperimentConfig, id_train: Option<&Path>, wild: Option<&Path>) -> Result<()> {
    cfg.filter.validate()?;
    for &seed in &cfg.seeds {
        let (train, wild_set): (LabeledDataset, WildSet) = match (id_train, wild) {
            (Some(a), Some(b)) => (load_csv(a)?, load_csv(b)?),
            (None, None) => {
                cfg.validate()?;
                let data = build_scenario(cfg, seed)?;
                (data.id_train, data.wild)
            }
            _ => return Err(Error::Config("--id-train and --wild go together".into())),
        };
        let dir = run_dir(cfg, seed)?;
        let noisy = noisify_as_extra_class(&wild_set, train.num_classes)?;
        let training = match train_kplus1(&train, &noisy, &cfg.filter_config(seed)) {
            Ok(t) => t,
            Err(e) => {
                if let Error::Numerical {
                    partial: Some(p), ..
                } = &e
                {
                    if let lod_core::error::PartialTrace::Loss(t) = p.as_ref() {
                        save_csv(t, dir.join("trace.csv"))?;
                    }
                }
                return Err(e);
            }
        };
        save_csv(&training.trace, dir.join("trace.csv"))?;
        let u = mean_losses(&training.trace)?;
        let split = kmeans2(&u)?;
        let report = filter_report(&split.assignment, &wild_set.ground_truth)?;
        let summary = summary_text(&split, Some(&report));
        write(&dir.join("filter.txt"), &summary)?;
        write(&dir.join("candidates.csv"), &candidates_csv(&wild_set, &split)?)?;
        print!("{summary}");
        println!("{}", dir.display());
    }
    Ok(())
}

struct DetectInputs<'a> {
    id_train: &'a Path,
    candidates: &'a Path,
    id_test: &'a Path,
    ood_test: &'a Path,
    wild: Option<&'a Path>,
}

fn cmd_detect(cfg: &ExperimentConfig, inputs: DetectInputs<'_>) -> Result<()> {
    let train: LabeledDataset = load_csv(inputs.id_train)?;
    let cands: WildSet = load_csv(inputs.candidates)?;
    let id_test: LabeledDataset = load_csv(inputs.id_test)?;
    let ood_test: WildSet = load_csv(inputs.ood_test)?;
    let wild: Option<WildSet> = inputs.wild.map(load_csv).transpose()?;
    for &seed in &cfg.seeds {
        let det_cfg = cfg.detector_config(seed);
        det_cfg.validate()?;
        let dir = run_dir(cfg, seed)?;
        let stage = run_detect_stage(&train, cands.features.view(), &id_test, ood_test.features.view(), &det_cfg)?;
        let hits = cands.n_ood();
        let report = MetricsReport {
            pi: wild.as_ref().map_or(cfg.pi, |w| w.pi),
            ratio: cfg.filter.ratio,
            seed,
            fpr95: stage.fpr95,
            auroc: stage.auroc,
            acc: stage.acc,
            filter_precision: Some(hits as f64 / cands.len() as f64),
            filter_recall: wild
                .as_ref()
                .filter(|w| w.n_ood() > 0)
                .map(|w| hits as f64 / w.n_ood() as f64),
            n_id_test: stage.id_scores.len(),
            n_ood_test: stage.ood_scores.len(),
            config_digest: cfg.digest(seed),
        };
        write(&dir.join("scores.csv"), &scores_csv(&stage.id_scores, &stage.ood_scores))?;
        write(&dir.join("report.csv"), &report.to_csv())?;
        write(&dir.join("report.txt"), &report.to_key_value())?;
        print!("{}", report.to_key_value());
    }
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    for &seed in &cfg.seeds {
        let outcome = run_pipeline(cfg, seed, Some(&cfg.out))?;
        print!("{}", outcome.report.to_key_value());
        if let Some(dir) = outcome.run_dir {
            println!("run_dir={}", dir.display());
        }
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, axis: &str, values: &[String]) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let dir = cfg.out.join(format!("sweep-{axis}"));
    let result = run_sweep(cfg, axis, values, Some(&dir))?;
    print!("{}", result.summary_csv());
    println!("sweep_dir={}", dir.display());
    Ok(())
}

fn cmd_theory(cfg: &ExperimentConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.scenario = Scenario::Theory;
    let summary = run_theory(&cfg, Some(&cfg.out))?;
    print!("{}", summary.to_key_value());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Filter { id_train, wild } => cmd_filter(&cfg, id_train.as_deref(), wild.as_deref()),
        Command::Detect {
            id_train,
            candidates,
            id_test,
            ood_test,
            wild,
        } => cmd_detect(
            &cfg,
            DetectInputs {
                id_train,
                candidates,
                id_test,
                ood_test,
                wild: wild.as_deref(),
            },
        ),
        Command::Run => cmd_run(&cfg),
        Command::Sweep { axis, values } => cmd_sweep(&cfg, axis, values),
        Command::Theory => cmd_theory(&cfg),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments; nested names are dotted, e.g.
//! `filter.epochs = 100`. Unknown keys are rejected. A config is rendered
//! back to the same format by [`ExperimentConfig::snapshot`], and parsing a
//! snapshot reproduces the config.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::OodKind;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::filter::{BatchRatio, FilterConfig};
use crate::rng::fnv1a;
use crate::theory::TheoryConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    SyntheticFar,
    SyntheticNear,
    CsvDataset,
    Theory,
}

impl Scenario {
    pub fn ood_kind(self) -> Option<OodKind> {
        match self {
            Scenario::SyntheticFar => Some(OodKind::Far),
            Scenario::SyntheticNear => Some(OodKind::Near),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::SyntheticFar => "synthetic-far",
            Scenario::SyntheticNear => "synthetic-near",
            Scenario::CsvDataset => "csv-dataset",
            Scenario::Theory => "theory",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic-far" => Ok(Scenario::SyntheticFar),
            "synthetic-near" => Ok(Scenario::SyntheticNear),
            "csv-dataset" => Ok(Scenario::CsvDataset),
            "theory" => Ok(Scenario::Theory),
            other => Err(Error::Config(format!(
                "unknown scenario `{other}` (expected synthetic-far, synthetic-near, csv-dataset or theory)"
            ))),
        }
    }
}

/// Synthetic data shape. For `csv-dataset` only `m`, `input`,
/// `num_id_classes` and `wild_ood_fraction` apply.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub k: usize,
    pub d: usize,
    /// Labeled ID training rows (split evenly over classes).
    pub n_train: usize,
    /// Wild set size.
    pub m: usize,
    pub sigma: f64,
    pub separation: f64,
    pub near_scale: f64,
    pub ood_blobs: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    pub input: Option<PathBuf>,
    pub num_id_classes: usize,
    pub wild_ood_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            k: 4,
            d: 20,
            n_train: 2000,
            m: 1000,
            sigma: 1.0,
            separation: 4.0,
            near_scale: 1.0,
            ood_blobs: 2,
            n_id_test: 1000,
            n_ood_test: 1000,
            input: None,
            num_id_classes: 0,
            wild_ood_fraction: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Directory name under `out`; derived from the settings when absent.
    pub run_id: Option<String>,
    pub data: DataConfig,
    pub pi: f64,
    pub filter: FilterConfig,
    pub detector: DetectorConfig,
    /// Classifier and head epochs; `None` follows `filter.epochs`.
    pub classifier_epochs: Option<usize>,
    pub head_epochs: Option<usize>,
    /// Train the detector on ground-truth OOD flags instead of filtered ones.
    pub oracle: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::SyntheticFar,
            run_id: None,
            data: DataConfig::default(),
            pi: 0.5,
            filter: FilterConfig::default(),
            detector: DetectorConfig::default(),
            classifier_epochs: None,
            head_epochs: None,
            oracle: false,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            workers: 1,
            theory: TheoryConfig::reference(0),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// Empty means "unset".
fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// `0,1,5` or `0..10` (half-open).
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = value.split_once("..") {
        let a: u64 = parse_num("seeds", a.trim())?;
        let b: u64 = parse_num("seeds", b.trim())?;
        (a..b).collect()
    } else {
        value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_num("seeds", s))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(Error::Config("seeds must be non-empty".into()));
    }
    Ok(seeds)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.data;
        match key {
            "scenario" => self.scenario = value.parse()?,
            "run_id" => self.run_id = (!value.is_empty()).then(|| value.to_string()),
            "pi" => self.pi = parse_num(key, value)?,
            "oracle" => self.oracle = parse_bool(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = parse_num(key, value)?,

            "data.k" => d.k = parse_num(key, value)?,
            "data.d" => d.d = parse_num(key, value)?,
            "data.n_train" => d.n_train = parse_num(key, value)?,
            "data.m" => d.m = parse_num(key, value)?,
            "data.sigma" => d.sigma = parse_num(key, value)?,
            "data.separation" => d.separation = parse_num(key, value)?,
            "data.near_scale" => d.near_scale = parse_num(key, value)?,
            "data.ood_blobs" => d.ood_blobs = parse_num(key, value)?,
            "data.n_id_test" => d.n_id_test = parse_num(key, value)?,
            "data.n_ood_test" => d.n_ood_test = parse_num(key, value)?,
            "data.input" => d.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.num_id_classes" => d.num_id_classes = parse_num(key, value)?,
            "data.wild_ood_fraction" => d.wild_ood_fraction = parse_num(key, value)?,

            "filter.ratio" => self.filter.ratio = value.parse::<BatchRatio>()?,
            "filter.batch_size" => self.filter.batch_size = parse_num(key, value)?,
            "filter.hidden" => self.filter.hidden = parse_list(key, value)?,
            "filter.epochs" => self.filter.optimizer.epochs = parse_num(key, value)?,
            "filter.lr" => self.filter.optimizer.initial_lr = parse_num(key, value)?,
            "filter.momentum" => self.filter.optimizer.momentum = parse_num(key, value)?,
            "filter.dropout" => self.filter.optimizer.dropout_rate = parse_num(key, value)?,

            "detector.hidden" => self.detector.backbone_hidden = parse_list(key, value)?,
            "detector.batch_size" => self.detector.batch_size = parse_num(key, value)?,
            "detector.classifier_epochs" => self.classifier_epochs = parse_opt(key, value)?,
            "detector.classifier_lr" => self.detector.classifier.initial_lr = parse_num(key, value)?,
            "detector.classifier_momentum" => {
                self.detector.classifier.momentum = parse_num(key, value)?
            }
            "detector.classifier_dropout" => {
                self.detector.classifier.dropout_rate = parse_num(key, value)?
            }
            "detector.epochs" => self.head_epochs = parse_opt(key, value)?,
            "detector.lr" => self.detector.head.initial_lr = parse_num(key, value)?,
            "detector.momentum" => self.detector.head.momentum = parse_num(key, value)?,

            "theory.n" => self.theory.n = parse_num(key, value)?,
            "theory.d" => self.theory.d = parse_num(key, value)?,
            "theory.sigma" => self.theory.sigma = parse_num(key, value)?,
            "theory.delta" => self.theory.delta_noise = parse_num(key, value)?,
            "theory.eta" => self.theory.eta = parse_num(key, value)?,
            "theory.steps" => self.theory.steps = parse_num(key, value)?,
            "theory.r" => self.theory.r_clip = parse_num(key, value)?,
            "theory.confidence_delta" => self.theory.confidence_delta = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Filter settings for one run.
    pub fn filter_config(&self, seed: u64) -> FilterConfig {
        FilterConfig {
            seed: crate::rng::derive_seed(seed, "filter"),
            ..self.filter.clone()
        }
    }

    /// Detector settings for one run, with epochs resolved.
    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        let mut det = self.detector.clone();
        det.classifier.epochs = self.classifier_epochs.unwrap_or(self.filter.optimizer.epochs);
        det.head.epochs = self.head_epochs.unwrap_or(self.filter.optimizer.epochs);
        det.seed = crate::rng::derive_seed(seed, "detector");
        det
    }

    pub fn theory_config(&self, seed: u64) -> TheoryConfig {
        TheoryConfig {
            seed,
            ..self.theory
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.scenario == Scenario::Theory {
            return self.theory.validate();
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::Config(format!("pi must lie in (0, 1], got {}", self.pi)));
        }
        self.filter.validate()?;
        self.detector_config(0).validate()?;
        let d = &self.data;
        if d.m == 0 {
            return Err(Error::Config("data.m must be positive".into()));
        }
        match self.scenario {
            Scenario::CsvDataset => {
                let input = d.input.as_ref().ok_or_else(|| {
                    Error::Config("csv-dataset needs data.input".into())
                })?;
                if !input.exists() {
                    return Err(Error::Config(format!("data.input {} does not exist", input.display())));
                }
                if d.num_id_classes == 0 {
                    return Err(Error::Config("data.num_id_classes must be positive".into()));
                }
                if !(d.wild_ood_fraction > 0.0 && d.wild_ood_fraction <= 1.0) {
                    return Err(Error::Config("data.wild_ood_fraction must lie in (0, 1]".into()));
                }
            }
            _ => {
                if d.k < 2 || d.n_train < d.k {
                    return Err(Error::Config("need data.k >= 2 and data.n_train >= data.k".into()));
                }
                if d.n_id_test == 0 || d.n_ood_test == 0 {
                    return Err(Error::Config("test set sizes must be positive".into()));
                }
                if !(d.sigma > 0.0 && d.separation > 0.0) {
                    return Err(Error::Config("data.sigma and data.separation must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Canonical rendering of every key, parseable by [`ExperimentConfig::parse`].
    pub fn snapshot(&self) -> String {
        let d = &self.data;
        let f = &self.filter;
        let det = &self.detector;
        let t = &self.theory;
        let opt_usize = |o: Option<usize>| o.map_or_else(String::new, |v| v.to_string());
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("scenario", self.scenario.to_string());
        kv("run_id", self.run_id.clone().unwrap_or_default());
        kv("pi", self.pi.to_string());
        kv("oracle", self.oracle.to_string());
        kv("seeds", join(&self.seeds));
        kv("out", self.out.display().to_string());
        kv("workers", self.workers.to_string());
        kv("data.k", d.k.to_string());
        kv("data.d", d.d.to_string());
        kv("data.n_train", d.n_train.to_string());
        kv("data.m", d.m.to_string());
        kv("data.sigma", d.sigma.to_string());
        kv("data.separation", d.separation.to_string());
        kv("data.near_scale", d.near_scale.to_string());
        kv("data.ood_blobs", d.ood_blobs.to_string());
        kv("data.n_id_test", d.n_id_test.to_string());
        kv("data.n_ood_test", d.n_ood_test.to_string());
        kv(
            "data.input",
            d.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("data.num_id_classes", d.num_id_classes.to_string());
        kv("data.wild_ood_fraction", d.wild_ood_fraction.to_string());
        kv("filter.ratio", f.ratio.to_string());
        kv("filter.batch_size", f.batch_size.to_string());
        kv("filter.hidden", join(&f.hidden));
        kv("filter.epochs", f.optimizer.epochs.to_string());
        kv("filter.lr", f.optimizer.initial_lr.to_string());
        kv("filter.momentum", f.optimizer.momentum.to_string());
        kv("filter.dropout", f.optimizer.dropout_rate.to_string());
        kv("detector.hidden", join(&det.backbone_hidden));
        kv("detector.batch_size", det.batch_size.to_string());
        kv("detector.classifier_epochs", opt_usize(self.classifier_epochs));
        kv("detector.classifier_lr", det.classifier.initial_lr.to_string());
        kv("detector.classifier_momentum", det.classifier.momentum.to_string());
        kv("detector.classifier_dropout", det.classifier.dropout_rate.to_string());
        kv("detector.epochs", opt_usize(self.head_epochs));
        kv("detector.lr", det.head.initial_lr.to_string());
        kv("detector.momentum", det.head.momentum.to_string());
        kv("theory.n", t.n.to_string());
        kv("theory.d", t.d.to_string());
        kv("theory.sigma", t.sigma.to_string());
        kv("theory.delta", t.delta_noise.to_string());
        kv("theory.eta", t.eta.to_string());
        kv("theory.steps", t.steps.to_string());
        kv("theory.r", t.r_clip.to_string());
        kv("theory.confidence_delta", t.confidence_delta.to_string());
        s
    }

    /// Snapshot of the settings that affect results for `seed`; excludes
    /// output location, run id, worker count and the seed list.
    pub fn run_snapshot(&self, seed: u64) -> String {
        let mut s: String = self
            .snapshot()
            .lines()
            .filter(|l| {
                let k = l.split('=').next().unwrap_or("").trim();
                !matches!(k, "out" | "run_id" | "workers" | "seeds")
            })
            .map(|l| format!("{l}\n"))
            .collect();
        writeln!(s, "seed = {seed}").unwrap();
        s
    }

    pub fn digest(&self, seed: u64) -> String {
        format!("{:016x}", fnv1a(self.run_snapshot(seed).as_bytes()))
    }

    pub fn run_id_for(&self, seed: u64) -> String {
        match &self.run_id {
            Some(id) if self.seeds.len() == 1 => id.clone(),
            Some(id) => format!("{id}-s{seed}"),
            None if self.scenario == Scenario::Theory => format!("theory-s{seed}"),
            None => format!(
                "{}-pi{}-r{}x{}-e{}{}-s{seed}",
                self.scenario,
                self.pi,
                self.filter.ratio.id,
                self.filter.ratio.wild,
                self.filter.optimizer.epochs,
                if self.oracle { "-oracle" } else { "" }
            ),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

//! Early-learning verifier for a linear sigmoid classifier.
//!
//! Full-batch gradient descent on the noisy two-Gaussian mixture, recording
//! at every iterate how well the descent direction aligns with the true
//! direction `v = e_1`, the loss gap between flipped and clean samples, and
//! the concentration lower bound on that gap.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::data::{gen_two_gaussian_noisy, HiddenTruth, LabeledDataset};
use crate::error::{Error, PartialTrace, Result};
use crate::nn::{sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    /// Label-flip rate.
    pub delta_noise: f64,
    pub eta: f64,
    pub steps: usize,
    /// Loss clip used both for the gap and for the concentration term.
    pub r_clip: f64,
    pub confidence_delta: f64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 100,
            sigma: 0.1,
            delta_noise: 0.2,
            eta: 0.5,
            steps: 200,
            r_clip: 10.0,
            confidence_delta: 0.05,
            seed: 0,
        }
    }
}

impl TheoryConfig {
    /// The verification setting used by the acceptance checks. Early
    /// iterates have `||theta|| <= 1`, where no per-sample loss exceeds 2,
    /// so `R = 2` is a valid clip there.
    pub fn reference(seed: u64) -> Self {
        Self {
            r_clip: 2.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_noise > 0.0 && self.delta_noise < 0.5) {
            return Err(Error::Config(format!(
                "delta_noise must lie in (0, 1/2), got {}",
                self.delta_noise
            )));
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("eta", self.eta),
            ("r_clip", self.r_clip),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.confidence_delta > 0.0 && self.confidence_delta < 1.0) {
            return Err(Error::Config(format!(
                "confidence_delta must lie in (0, 1), got {}",
                self.confidence_delta
            )));
        }
        if self.n < 2 || self.d < 2 {
            return Err(Error::Config("need n >= 2 and d >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryStep {
    pub step: usize,
    pub alignment: f64,
    pub gap: f64,
    pub bound: f64,
    pub theta_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TheoryTrace {
    pub steps: Vec<TheoryStep>,
    pub thetas: Vec<Array1<f64>>,
}

impl TheoryTrace {
    pub const CSV_HEADER: &'static str = "step,alignment,gap,bound,theta_drift";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.step, s.alignment, s.gap, s.bound, s.theta_drift
            )
            .unwrap();
        }
        out
    }
}

/// Observed labels as `±1`.
fn signs(ds: &LabeledDataset) -> Array1<f64> {
    ds.labels.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect()
}

/// Mean logistic loss `(1/n) sum softplus(-s_i theta^T x_i)`.
pub fn linear_loss(theta: ArrayView1<f64>, x: ArrayView2<f64>, s: ArrayView1<f64>) -> f64 {
    let margins = x.dot(&theta) * &s;
    margins.iter().map(|&m| softplus(-m)).sum::<f64>() / x.nrows() as f64
}

/// `(1/n) sum -s_i x_i sigmoid(-s_i theta^T x_i)`.
pub fn linear_grad(theta: ArrayView1<f64>, x: ArrayView2<f64>, s: ArrayView1<f64>) -> Array1<f64> {
    let margins = x.dot(&theta) * &s;
    let coef: Array1<f64> = margins
        .iter()
        .zip(s.iter())
        .map(|(&m, &si)| -si * sigmoid(-m))
        .collect();
    x.t().dot(&coef) / x.nrows() as f64
}

/// Lower bound on the flipped-minus-clean mean loss gap:
/// `1 - 2 exp(-theta.v + ||theta||^2 sigma^2 / 2) - 2 sqrt(2) R sqrt(ln(1/delta) / n)`.
pub fn prop1_bound(
    theta: ArrayView1<f64>,
    v: ArrayView1<f64>,
    sigma: f64,
    n: usize,
    r_clip: f64,
    confidence_delta: f64,
) -> f64 {
    let tv = theta.dot(&v);
    let norm2 = theta.dot(&theta);
    let concentration =
        2.0 * std::f64::consts::SQRT_2 * r_clip * ((1.0 / confidence_delta).ln() / n as f64).sqrt();
    1.0 - 2.0 * (-tv + 0.5 * norm2 * sigma * sigma).exp() - concentration
}

/// Cosine between the negative gradient and `v`; zero for a zero gradient.
pub fn alignment(grad: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let norm = grad.dot(&grad).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    (-grad.dot(&v) / norm).clamp(-1.0, 1.0)
}

/// Mean clipped loss of flipped samples minus that of clean samples, 0 when
/// either group is empty.
fn loss_gap(
    theta: ArrayView1<f64>,
    x: ArrayView2<f64>,
    s: ArrayView1<f64>,
    flipped: &[bool],
    r_clip: f64,
) -> f64 {
    let margins = x.dot(&theta) * &s;
    let (mut sf, mut nf, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (&m, &f) in margins.iter().zip(flipped) {
        let l = softplus(-m).min(r_clip);
        if f {
            sf += l;
            nf += 1;
        } else {
            sc += l;
            nc += 1;
        }
    }
    if nf == 0 || nc == 0 {
        0.0
    } else {
        sf / nf as f64 - sc / nc as f64
    }
}

/// Gradient descent from `theta_0 = 0` on the dataset drawn for `config`.
pub fn run_linear_gd(config: &TheoryConfig) -> Result<TheoryTrace> {
    config.validate()?;
    let ds = gen_two_gaussian_noisy(config.n, config.d, config.sigma, config.delta_noise, config.seed)?;
    run_linear_gd_on(&ds, config)
}

/// Same as [`run_linear_gd`] on a caller-supplied noisy two-class dataset.
pub fn run_linear_gd_on(ds: &LabeledDataset, config: &TheoryConfig) -> Result<TheoryTrace> {
    config.validate()?;
    let clean = match &ds.hidden {
        Some(HiddenTruth::CleanLabels(c)) => c,
        _ => return Err(Error::Input("dataset carries no clean labels".into())),
    };
    let flipped: Vec<bool> = clean.iter().zip(&ds.labels).map(|(c, o)| c != o).collect();
    let x = ds.features.view();
    let s = signs(ds);
    let d = ds.dim();
    let mut v = Array1::<f64>::zeros(d);
    v[0] = 1.0;
    let mut theta = Array1::<f64>::zeros(d);
    let mut trace = TheoryTrace::default();

    for t in 0..=config.steps {
        let grad = linear_grad(theta.view(), x, s.view());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                message: format!("non-finite gradient at step {t}"),
                partial: Some(Box::new(PartialTrace::Theory(trace))),
            });
        }
        trace.steps.push(TheoryStep {
            step: t,
            alignment: alignment(grad.view(), v.view()),
            gap: loss_gap(theta.view(), x, s.view(), &flipped, config.r_clip),
            bound: prop1_bound(
                theta.view(),
                v.view(),
                config.sigma,
                ds.len(),
                config.r_clip,
                config.confidence_delta,
            ),
            theta_drift: theta.dot(&theta).sqrt(),
        });
        trace.thetas.push(theta.clone());
        if t < config.steps {
            theta.scaled_add(-config.eta, &grad);
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// Number of iterates with `theta_drift <= 1`.
    pub early_steps: usize,
    pub alignment_fraction: f64,
    pub gap_fraction: f64,
    pub first_alignment_violation: Option<usize>,
    pub first_gap_violation: Option<usize>,
    /// First iterate at which the bound is positive.
    pub first_nonvacuous: Option<usize>,
    /// The bound turned positive while `theta_drift <= 1`.
    pub nonvacuous_early: bool,
}

pub const ALIGNMENT_FLOOR: f64 = 1.0 / 6.0;

pub fn check_gap(trace: &TheoryTrace) -> Result<GapReport> {
    if trace.steps.is_empty() {
        return Err(Error::Input("theory trace is empty".into()));
    }
    let early: Vec<&TheoryStep> = trace.steps.iter().filter(|s| s.theta_drift <= 1.0).collect();
    let frac = |ok: usize| if early.is_empty() { 0.0 } else { ok as f64 / early.len() as f64 };
    let align_ok = early.iter().filter(|s| s.alignment >= ALIGNMENT_FLOOR).count();
    let gap_ok = early.iter().filter(|s| s.gap >= s.bound).count();
    let first_nonvacuous = trace.steps.iter().find(|s| s.bound > 0.0);
    Ok(GapReport {
        early_steps: early.len(),
        alignment_fraction: frac(align_ok),
        gap_fraction: frac(gap_ok),
        first_alignment_violation: early
            .iter()
            .find(|s| s.alignment < ALIGNMENT_FLOOR)
            .map(|s| s.step),
        first_gap_violation: early.iter().find(|s| s.gap < s.bound).map(|s| s.step),
        first_nonvacuous: first_nonvacuous.map(|s| s.step),
        nonvacuous_early: first_nonvacuous.is_some_and(|s| s.theta_drift <= 1.0),
    })
}

impl GapReport {
    pub fn to_key_value(&self) -> String {
        let opt = |o: Option<usize>| o.map_or_else(|| "none".to_string(), |v| v.to_string());
        let mut out = String::new();
        writeln!(out, "early_steps={}", self.early_steps).unwrap();
        writeln!(out, "alignment_fraction={}", self.alignment_fraction).unwrap();
        writeln!(out, "gap_fraction={}", self.gap_fraction).unwrap();
        writeln!(out, "first_alignment_violation={}", opt(self.first_alignment_violation)).unwrap();
        writeln!(out, "first_gap_violation={}", opt(self.first_gap_violation)).unwrap();
        writeln!(out, "first_nonvacuous={}", opt(self.first_nonvacuous)).unwrap();
        writeln!(out, "nonvacuous_early={}", self.nonvacuous_early).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step(t: usize, alignment: f64, gap: f64, bound: f64, drift: f64) -> TheoryStep {
        TheoryStep {
            step: t,
            alignment,
            gap,
            bound,
            theta_drift: drift,
        }
    }

    #[test]
    fn bound_examples() {
        let v = array![1.0, 0.0, 0.0];
        let c = 2.0 * 2f64.sqrt() * 5.0 * (20f64.ln() / 1e4).sqrt();
        let b = prop1_bound(array![0.0, 0.0, 0.0].view(), v.view(), 0.1, 10_000, 5.0, 0.05);
        assert!((b - (-1.0 - c)).abs() < 1e-15);
        let b = prop1_bound(array![3.0, 0.0, 0.0].view(), v.view(), 0.1, 10_000, 5.0, 0.05);
        let expected = 1.0 - 2.0 * (-3.0f64 + 0.045).exp() - c;
        assert!((b - expected).abs() < 1e-15);
        assert!((b - 0.651_068).abs() < 1e-6, "{b}");
        let lim = prop1_bound(array![2.0, 0.0, 0.0].view(), v.view(), 1e-9, usize::MAX, 1e-9, 0.5);
        assert!((lim - (1.0 - 2.0 * (-2.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn initial_loss_is_ln2() {
        let ds = gen_two_gaussian_noisy(50, 5, 0.3, 0.2, 1).unwrap();
        let s = signs(&ds);
        let l = linear_loss(Array1::zeros(5).view(), ds.features.view(), s.view());
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = gen_two_gaussian_noisy(200, 10, 0.5, 0.2, 2).unwrap();
        let s = signs(&ds);
        let x = ds.features.view();
        for _ in 0..10 {
            let theta: Array1<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = linear_grad(theta.view(), x, s.view());
            let h = 1e-5;
            for j in 0..10 {
                let mut p = theta.clone();
                p[j] += h;
                let mut m = theta.clone();
                m[j] -= h;
                let fd = (linear_loss(p.view(), x, s.view()) - linear_loss(m.view(), x, s.view())) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-6, "coord {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn near_clean_run_aligns() {
        let cfg = TheoryConfig {
            delta_noise: 0.001,
            steps: 40,
            seed: 3,
            ..TheoryConfig::default()
        };
        let trace = run_linear_gd(&cfg).unwrap();
        for s in trace.steps.iter().filter(|s| s.theta_drift <= 1.0) {
            assert!(s.alignment >= 0.9, "step {}: {}", s.step, s.alignment);
        }
    }

    #[test]
    fn reference_run_shapes() {
        let cfg = TheoryConfig {
            steps: 30,
            ..TheoryConfig::reference(1)
        };
        let trace = run_linear_gd(&cfg).unwrap();
        assert_eq!(trace.steps.len(), 31);
        assert_eq!(trace.steps[0].theta_drift, 0.0);
        assert!(trace.steps[0].gap.abs() < 1e-12);
        assert!(trace.steps.iter().all(|s| (-1.0..=1.0).contains(&s.alignment)));
        assert!(trace.to_csv().starts_with("step,alignment,gap,bound,theta_drift\n0,"));
        let again = run_linear_gd(&cfg).unwrap();
        assert_eq!(again.to_csv(), trace.to_csv());
    }

    #[test]
    fn check_gap_examples() {
        let t = TheoryTrace {
            steps: (0..5).map(|i| step(i, 0.5, 1.0, 0.2, i as f64 * 0.3)).collect(),
            thetas: Vec::new(),
        };
        let r = check_gap(&t).unwrap();
        assert_eq!(r.early_steps, 4);
        assert_eq!(r.alignment_fraction, 1.0);
        assert_eq!(r.gap_fraction, 1.0);
        assert_eq!(r.first_gap_violation, None);
        assert!(r.nonvacuous_early);

        let t = TheoryTrace {
            steps: vec![step(0, 0.1, 0.0, -1.0, 0.0), step(1, 0.9, 0.1, 0.3, 0.5)],
            thetas: Vec::new(),
        };
        let r = check_gap(&t).unwrap();
        assert_eq!(r.first_alignment_violation, Some(0));
        assert_eq!(r.first_gap_violation, Some(1));
        assert_eq!((r.alignment_fraction, r.gap_fraction), (0.5, 0.5));
        assert!(check_gap(&TheoryTrace::default()).is_err());
    }

    #[test]
    fn config_rejects_bad_noise() {
        for delta in [0.0, 0.5, -0.1] {
            let cfg = TheoryConfig {
                delta_noise: delta,
                ..TheoryConfig::default()
            };
            assert!(cfg.validate().unwrap_err().is_config());
        }
    }

    proptest! {
        #[test]
        fn alignment_scale_invariant(g in proptest::collection::vec(-5.0f64..5.0, 3), c in 1e-3f64..1e3) {
            let g = Array1::from(g);
            prop_assume!(g.dot(&g) > 1e-6);
            let v = array![1.0, 0.0, 0.0];
            let a = alignment(g.view(), v.view());
            let b = alignment((&g * c).view(), v.view());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn bound_increases_with_projection(r in 0.1f64..3.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // Same norm r, projections r*lo < r*hi.
            let th = |c: f64| array![r * c, r * (1.0 - c * c).sqrt()];
            let v = array![1.0, 0.0];
            let f = |c: f64| prop1_bound(th(c).view(), v.view(), 0.1, 1000, 2.0, 0.05);
            prop_assert!(f(hi) > f(lo));
        }
    }

    #[test]
    fn gradient_of_zero_data_direction() {
        let x = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let s = array![1.0, -1.0];
        let g = linear_grad(Array1::zeros(2).view(), x.view(), s.view());
        assert_eq!(g, array![-0.5, 0.0]);
        assert_eq!(alignment(g.view(), array![1.0, 0.0].view()), 1.0);
    }
}

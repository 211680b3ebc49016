//! Synthetic datasets, wild-set construction and class splitting.

pub mod csv;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Labels or flags attached to a dataset for evaluation only. Training code
/// never reads them.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenTruth {
    /// Noise-free labels of a label-flipped dataset.
    CleanLabels(Vec<usize>),
    /// Wild-set origin of each row, `true` = ID.
    WildOrigin(Vec<bool>),
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub sigma: f64,
    pub means: Vec<Vec<f64>>,
    /// After a class split: `label_map[new_label] = original_class`.
    pub label_map: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub hidden: Option<HiddenTruth>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Input("dataset must contain at least one row".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("features must be finite".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            hidden: None,
            provenance: Provenance::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Hidden truth follows the rows.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let hidden = self.hidden.as_ref().map(|h| match h {
            HiddenTruth::CleanLabels(v) => {
                HiddenTruth::CleanLabels(indices.iter().map(|&i| v[i]).collect())
            }
            HiddenTruth::WildOrigin(v) => {
                HiddenTruth::WildOrigin(indices.iter().map(|&i| v[i]).collect())
            }
        });
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            hidden,
            provenance: self.provenance.clone(),
        }
    }
}

/// Unlabeled wild data with its hidden ID/OOD origin.
#[derive(Debug, Clone, PartialEq)]
pub struct WildSet {
    pub features: Array2<f64>,
    /// `true` = drawn from the ID pool. Evaluation only.
    pub ground_truth: Vec<bool>,
    /// OOD fraction, `n_ood / m`.
    pub pi: f64,
    pub provenance: Provenance,
}

impl WildSet {
    pub fn new(features: Array2<f64>, ground_truth: Vec<bool>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Input("wild set must contain at least one row".into()));
        }
        if features.nrows() != ground_truth.len() {
            return Err(Error::Shape(format!(
                "{} wild rows but {} ground-truth flags",
                features.nrows(),
                ground_truth.len()
            )));
        }
        let n_ood = ground_truth.iter().filter(|&&id| !id).count();
        let pi = n_ood as f64 / ground_truth.len() as f64;
        Ok(Self {
            features,
            ground_truth,
            pi,
            provenance: Provenance::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn n_ood(&self) -> usize {
        self.ground_truth.iter().filter(|&&id| !id).count()
    }

    pub fn n_id(&self) -> usize {
        self.len() - self.n_ood()
    }

    pub fn select(&self, indices: &[usize]) -> Result<WildSet> {
        let mut out = WildSet::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.ground_truth[i]).collect(),
        )?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }
}

/// Which classes are in-distribution after a class split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub id_classes: Vec<usize>,
    pub ood_classes: Vec<usize>,
    pub wild_ood_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.id_classes.is_empty() {
            return Err(Error::Config("at least one ID class is required".into()));
        }
        if self.id_classes.iter().any(|c| self.ood_classes.contains(c)) {
            return Err(Error::Config("ID and OOD classes overlap".into()));
        }
        if !(self.wild_ood_fraction > 0.0 && self.wild_ood_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "wild_ood_fraction must lie in (0, 1], got {}",
                self.wild_ood_fraction
            )));
        }
        Ok(())
    }
}

fn check_gaussian_params(d: usize, sigma: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Draws `n` rows per mean from `N(mean, sigma^2 I)` and shuffles them.
fn sample_blobs(
    means: &[Vec<f64>],
    n_per_blob: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Vec<usize>) {
    let d = means[0].len();
    let total = means.len() * n_per_blob;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut features = Array2::zeros((total, d));
    let mut labels = vec![0; total];
    for (slot, &src) in order.iter().enumerate() {
        let blob = src / n_per_blob;
        labels[slot] = blob;
        let mut row = features.row_mut(slot);
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *v = means[blob][j] + sigma * z;
        }
    }
    (features, labels)
}

fn axis(d: usize, i: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = scale;
    v
}

/// `k` isotropic Gaussian classes with means `separation * e_c`.
pub fn gen_multiclass_gaussian(
    k: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if k < 2 || d < 2 {
        return Err(Error::Config(format!("need K >= 2 and d >= 2, got K={k}, d={d}")));
    }
    if k > d {
        return Err(Error::Config(format!(
            "orthogonal class means need K <= d, got K={k}, d={d}"
        )));
    }
    if !(separation > 0.0) {
        return Err(Error::Config(format!("separation must be positive, got {separation}")));
    }
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    check_gaussian_params(d, sigma)?;
    let means: Vec<Vec<f64>> = (0..k).map(|c| axis(d, c, separation)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (features, labels) = sample_blobs(&means, n_per_class, sigma, &mut rng);
    let mut ds = LabeledDataset::new(features, labels, k)?;
    ds.provenance = Provenance {
        generator: "multiclass-gaussian".into(),
        seed,
        sigma,
        means,
        label_map: Vec::new(),
    };
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodKind {
    /// Blobs on axes orthogonal to every ID mean, at 3x the ID separation.
    Far,
    /// Blobs above the midpoint of two adjacent ID means, lifted off the ID
    /// span so both neighbours sit `near_scale * separation` away.
    Near,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodSpec {
    pub kind: OodKind,
    /// Number of ID classes the OOD blobs are placed relative to.
    pub id_classes: usize,
    pub blobs: usize,
    pub separation: f64,
    /// Distance from a near blob to its two nearest ID means, in units of
    /// `separation`. Must be at least `1/sqrt(2)`.
    pub near_scale: f64,
    pub sigma: f64,
}

impl OodSpec {
    pub fn means(&self, d: usize) -> Result<Vec<Vec<f64>>> {
        if self.blobs == 0 {
            return Err(Error::Config("at least one OOD blob is required".into()));
        }
        if self.id_classes + self.blobs > d {
            return Err(Error::Config(format!(
                "{} ID classes plus {} OOD blobs need d >= {}, got {d}",
                self.id_classes,
                self.blobs,
                self.id_classes + self.blobs
            )));
        }
        let k = self.id_classes;
        let half = self.separation / 2.0;
        let lift_sq = (self.near_scale * self.separation).powi(2) - 2.0 * half * half;
        if self.kind == OodKind::Near && (lift_sq.is_nan() || lift_sq < 0.0) {
            return Err(Error::Config(format!(
                "near_scale must be at least 1/sqrt(2), got {}",
                self.near_scale
            )));
        }
        Ok((0..self.blobs)
            .map(|j| match self.kind {
                OodKind::Far => axis(d, k + j, 3.0 * self.separation),
                OodKind::Near => {
                    let mut m = vec![0.0; d];
                    m[j % k] += half;
                    m[(j + 1) % k] += half;
                    m[k + j] = lift_sq.sqrt();
                    m
                }
            })
            .collect())
    }
}

/// OOD pool of `n_per_blob * blobs` rows; labels are blob indices.
pub fn gen_ood(spec: &OodSpec, n_per_blob: usize, d: usize, seed: u64) -> Result<LabeledDataset> {
    check_gaussian_params(d, spec.sigma)?;
    if n_per_blob == 0 {
        return Err(Error::Config("n_per_blob must be positive".into()));
    }
    let means = spec.means(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (features, labels) = sample_blobs(&means, n_per_blob, spec.sigma, &mut rng);
    let mut ds = LabeledDataset::new(features, labels, spec.blobs)?;
    ds.provenance = Provenance {
        generator: match spec.kind {
            OodKind::Far => "far-ood".into(),
            OodKind::Near => "near-ood".into(),
        },
        seed,
        sigma: spec.sigma,
        means,
        label_map: Vec::new(),
    };
    Ok(ds)
}

/// Two-Gaussian mixture `x ~ N(y v, sigma^2 I)` with `v = e_1`, true labels
/// `y = ±1` stored as `1`/`0`, and observed labels flipped independently with
/// probability `delta`. Clean labels are kept as hidden truth.
pub fn gen_two_gaussian_noisy(
    n: usize,
    d: usize,
    sigma: f64,
    delta: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_gaussian_params(d, sigma)?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::Config(format!(
            "label-flip rate must lie in [0, 1/2), got {delta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, d));
    let mut clean = Vec::with_capacity(n);
    let mut observed = Vec::with_capacity(n);
    for mut row in features.rows_mut() {
        let positive = rng.random_bool(0.5);
        let sign = if positive { 1.0 } else { -1.0 };
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = sigma * z + if j == 0 { sign } else { 0.0 };
        }
        let y = usize::from(positive);
        let flipped = rng.random_bool(delta);
        clean.push(y);
        observed.push(if flipped { 1 - y } else { y });
    }
    let mut ds = LabeledDataset::new(features, observed, 2)?;
    ds.hidden = Some(HiddenTruth::CleanLabels(clean));
    ds.provenance = Provenance {
        generator: "two-gaussian-noisy".into(),
        seed,
        sigma,
        means: vec![axis(d, 0, -1.0), axis(d, 0, 1.0)],
        label_map: Vec::new(),
    };
    Ok(ds)
}

/// Round-half-up count of OOD rows in a wild set of size `m`.
pub fn ood_count(pi: f64, m: usize) -> usize {
    (pi * m as f64 + 0.5).floor() as usize
}

/// Exact-count Huber mixture: `round(pi * m)` OOD rows and the rest ID,
/// drawn without replacement and shuffled.
pub fn build_wild(
    id_pool: ArrayView2<f64>,
    ood_pool: ArrayView2<f64>,
    pi: f64,
    m: usize,
    seed: u64,
) -> Result<WildSet> {
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::Config(format!("pi must lie in (0, 1], got {pi}")));
    }
    if m == 0 {
        return Err(Error::Config("wild set size must be positive".into()));
    }
    if id_pool.ncols() != ood_pool.ncols() {
        return Err(Error::Shape(format!(
            "ID pool has {} features, OOD pool has {}",
            id_pool.ncols(),
            ood_pool.ncols()
        )));
    }
    let n_ood = ood_count(pi, m).min(m);
    let n_id = m - n_ood;
    if n_ood > ood_pool.nrows() || n_id > id_pool.nrows() {
        return Err(Error::Capacity(format!(
            "need {n_id} ID and {n_ood} OOD rows, pools hold {} and {}",
            id_pool.nrows(),
            ood_pool.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id_rows = index::sample(&mut rng, id_pool.nrows(), n_id).into_vec();
    let ood_rows = index::sample(&mut rng, ood_pool.nrows(), n_ood).into_vec();
    let mut rows: Vec<(bool, usize)> = id_rows
        .into_iter()
        .map(|r| (true, r))
        .chain(ood_rows.into_iter().map(|r| (false, r)))
        .collect();
    rows.shuffle(&mut rng);

    let mut features = Array2::zeros((m, id_pool.ncols()));
    for (slot, &(is_id, src)) in rows.iter().enumerate() {
        let pool = if is_id { &id_pool } else { &ood_pool };
        features.row_mut(slot).assign(&pool.row(src));
    }
    let mut wild = WildSet::new(features, rows.iter().map(|&(id, _)| id).collect())?;
    wild.provenance = Provenance {
        generator: "huber-mixture".into(),
        seed,
        ..Provenance::default()
    };
    Ok(wild)
}

/// Result of [`hard_split`].
#[derive(Debug, Clone)]
pub struct HardSplit {
    /// Labeled half of the ID classes, labels remapped to `0..num_id_classes`.
    pub id_train: LabeledDataset,
    /// OOD-class rows reserved for mixing into the wild set.
    pub wild_ood_pool: LabeledDataset,
    /// Other half of the ID classes (remapped). Source of wild ID rows and
    /// of ID test rows.
    pub id_test: LabeledDataset,
    /// Held-out OOD-class rows.
    pub ood_test: LabeledDataset,
    pub spec: SplitSpec,
}

/// Class-level ID/OOD split: pick `num_id_classes` classes at random, halve
/// each ID class, and split each OOD class `wild_ood_fraction` (floored) into
/// the wild pool with the remainder held out for testing.
pub fn hard_split(
    dataset: &LabeledDataset,
    num_id_classes: usize,
    wild_ood_fraction: f64,
    seed: u64,
) -> Result<HardSplit> {
    let k = dataset.num_classes;
    if num_id_classes == 0 || num_id_classes >= k {
        return Err(Error::Config(format!(
            "num_id_classes must lie in [1, {k}), got {num_id_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut rng);
    let mut id_classes = classes[..num_id_classes].to_vec();
    let mut ood_classes = classes[num_id_classes..].to_vec();
    id_classes.sort_unstable();
    ood_classes.sort_unstable();
    let spec = SplitSpec {
        id_classes: id_classes.clone(),
        ood_classes: ood_classes.clone(),
        wild_ood_fraction,
        seed,
    };
    spec.validate()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(c) = (0..k).find(|&c| by_class[c].len() < 2) {
        return Err(Error::Split(format!(
            "class {c} has {} rows, at least 2 are needed",
            by_class[c].len()
        )));
    }
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
    }

    let mut remap = vec![usize::MAX; k];
    for (new, &orig) in id_classes.iter().enumerate() {
        remap[orig] = new;
    }
    let (mut train_rows, mut test_rows) = (Vec::new(), Vec::new());
    for &c in &id_classes {
        let half = by_class[c].len() / 2;
        train_rows.extend_from_slice(&by_class[c][..half]);
        test_rows.extend_from_slice(&by_class[c][half..]);
    }
    let (mut wild_rows, mut held_rows) = (Vec::new(), Vec::new());
    for &c in &ood_classes {
        let n = by_class[c].len();
        let to_wild = ((wild_ood_fraction * n as f64).floor() as usize).min(n);
        wild_rows.extend_from_slice(&by_class[c][..to_wild]);
        held_rows.extend_from_slice(&by_class[c][to_wild..]);
    }

    let remapped = |rows: &[usize]| -> LabeledDataset {
        let mut ds = dataset.select(rows);
        for y in &mut ds.labels {
            *y = remap[*y];
        }
        ds.num_classes = num_id_classes;
        ds.provenance.label_map = id_classes.clone();
        ds
    };
    let id_train = remapped(&train_rows);
    let id_test = remapped(&test_rows);
    let wild_ood_pool = dataset.select(&wild_rows);
    let ood_test = dataset.select(&held_rows);
    Ok(HardSplit {
        id_train,
        wild_ood_pool,
        id_test,
        ood_test,
        spec,
    })
}

/// Labels every wild row as the extra class `k` (zero-indexed), producing a
/// `k + 1`-class dataset. The wild origin flags ride along as hidden truth.
pub fn noisify_as_extra_class(wild: &WildSet, k: usize) -> Result<LabeledDataset> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut ds = LabeledDataset::new(wild.features.clone(), vec![k; wild.len()], k + 1)?;
    ds.hidden = Some(HiddenTruth::WildOrigin(wild.ground_truth.clone()));
    ds.provenance = wild.provenance.clone();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn degenerate_sigma_hugs_means() {
        let ds = gen_multiclass_gaussian(3, 20, 5, 2.0, 1e-6, 1).unwrap();
        for (row, &y) in ds.features.rows().into_iter().zip(&ds.labels) {
            for (j, v) in row.iter().enumerate() {
                assert!((v - ds.provenance.means[y][j]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn stratified_counts() {
        let ds = gen_multiclass_gaussian(3, 100, 4, 2.0, 1.0, 2).unwrap();
        assert_eq!(ds.class_counts(), vec![100, 100, 100]);
    }

    #[test]
    fn multiclass_rejects_more_classes_than_dims() {
        assert!(gen_multiclass_gaussian(5, 10, 4, 1.0, 1.0, 0).unwrap_err().is_config());
    }

    #[test]
    fn generators_are_pure() {
        let a = gen_multiclass_gaussian(4, 10, 6, 3.0, 1.0, 9).unwrap();
        let b = gen_multiclass_gaussian(4, 10, 6, 3.0, 1.0, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_two_gaussian_noisy(50, 4, 0.3, 0.1, 2).unwrap();
        assert_eq!(c, gen_two_gaussian_noisy(50, 4, 0.3, 0.1, 2).unwrap());
    }

    #[test]
    fn noiseless_labels_match_truth() {
        let ds = gen_two_gaussian_noisy(500, 10, 0.5, 0.0, 3).unwrap();
        let Some(HiddenTruth::CleanLabels(clean)) = &ds.hidden else { panic!() };
        assert_eq!(clean, &ds.labels);
    }

    #[test]
    fn flip_fraction_concentrates() {
        // Binomial(1e4, 0.2): sd = 40, so [0.18, 0.22] is a 5-sigma band.
        let ds = gen_two_gaussian_noisy(10_000, 3, 0.5, 0.2, 4).unwrap();
        let Some(HiddenTruth::CleanLabels(clean)) = &ds.hidden else { panic!() };
        let flips = clean.iter().zip(&ds.labels).filter(|(a, b)| a != b).count();
        let frac = flips as f64 / 10_000.0;
        assert!((0.18..=0.22).contains(&frac), "{frac}");
    }

    #[test]
    fn bayes_rule_on_tight_mixture() {
        let ds = gen_two_gaussian_noisy(10_000, 100, 0.1, 0.0, 5).unwrap();
        let wrong = ds
            .features
            .rows()
            .into_iter()
            .zip(&ds.labels)
            .filter(|(row, &y)| usize::from(row[0] > 0.0) != y)
            .count();
        assert!((wrong as f64) < 0.001 * 10_000.0);
    }

    #[test]
    fn flip_rate_at_half_rejected() {
        assert!(gen_two_gaussian_noisy(10, 2, 1.0, 0.5, 0).unwrap_err().is_config());
    }

    #[test]
    fn near_blobs_sit_at_scaled_distance() {
        let spec = OodSpec {
            kind: OodKind::Near,
            id_classes: 4,
            blobs: 2,
            separation: 4.0,
            near_scale: 1.0,
            sigma: 1.0,
        };
        let id_means: Vec<Vec<f64>> = (0..4).map(|c| axis(20, c, 4.0)).collect();
        for (j, m) in spec.means(20).unwrap().iter().enumerate() {
            let mut dists: Vec<f64> = id_means
                .iter()
                .map(|mu| mu.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .collect();
            dists.sort_by(f64::total_cmp);
            assert!((dists[0] - 4.0).abs() < 1e-12, "blob {j}");
            assert!((dists[1] - 4.0).abs() < 1e-12, "blob {j}");
        }
        let tight = OodSpec { near_scale: 0.7, ..spec };
        assert!(tight.means(20).unwrap_err().is_config());
    }

    fn pools() -> (LabeledDataset, LabeledDataset) {
        let id = gen_multiclass_gaussian(2, 600, 4, 3.0, 1.0, 1).unwrap();
        let spec = OodSpec {
            kind: OodKind::Far,
            id_classes: 2,
            blobs: 2,
            separation: 3.0,
            near_scale: 1.0,
            sigma: 1.0,
        };
        (id, gen_ood(&spec, 600, 4, 2).unwrap())
    }

    #[test]
    fn wild_all_ood() {
        let (id, ood) = pools();
        let w = build_wild(id.features.view(), ood.features.view(), 1.0, 50, 0).unwrap();
        assert!(w.ground_truth.iter().all(|&g| !g));
    }

    #[test]
    fn wild_exact_counts() {
        let (id, ood) = pools();
        for &pi in &[0.1, 0.5, 0.9] {
            for &m in &[10, 100, 1000] {
                let w = build_wild(id.features.view(), ood.features.view(), pi, m, 3).unwrap();
                assert_eq!(w.n_ood(), ood_count(pi, m), "pi={pi} m={m}");
                assert_eq!(w.len(), m);
            }
        }
        let w = build_wild(id.features.view(), ood.features.view(), 0.5, 100, 3).unwrap();
        assert_eq!((w.n_id(), w.n_ood()), (50, 50));
    }

    #[test]
    fn wild_seeds_permute() {
        let (id, ood) = pools();
        let a = build_wild(id.features.view(), ood.features.view(), 0.1, 1000, 1).unwrap();
        let b = build_wild(id.features.view(), ood.features.view(), 0.1, 1000, 2).unwrap();
        assert_eq!(a.n_ood(), b.n_ood());
        assert_ne!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn wild_capacity_error() {
        let (id, ood) = pools();
        let small = ood.features.slice(ndarray::s![..5, ..]);
        assert!(matches!(
            build_wild(id.features.view(), small, 0.5, 100, 0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(ood_count(0.5, 5), 3);
        assert_eq!(ood_count(0.25, 10), 3);
        assert_eq!(ood_count(0.1, 1000), 100);
    }

    fn ten_class() -> LabeledDataset {
        let mut features = Array2::zeros((1000, 2));
        let mut labels = Vec::new();
        for i in 0..1000 {
            features[[i, 0]] = i as f64;
            labels.push(i % 10);
        }
        LabeledDataset::new(features, labels, 10).unwrap()
    }

    #[test]
    fn hard_split_sizes_and_determinism() {
        let ds = ten_class();
        let s = hard_split(&ds, 6, 0.7, 11).unwrap();
        assert_eq!(s.id_train.len(), 300);
        assert_eq!(s.id_test.len(), 300);
        assert_eq!(s.wild_ood_pool.len(), 280);
        assert_eq!(s.ood_test.len(), 120);
        assert!(s.id_train.labels.iter().all(|&y| y < 6));
        assert_eq!(s.id_train.provenance.label_map, s.spec.id_classes);
        let again = hard_split(&ds, 6, 0.7, 11).unwrap();
        assert_eq!(again.spec, s.spec);
        assert_eq!(again.id_train, s.id_train);
        assert_eq!(again.ood_test, s.ood_test);
    }

    #[test]
    fn hard_split_single_heldout_class() {
        let ds = ten_class();
        let s = hard_split(&ds, 9, 0.7, 2).unwrap();
        assert_eq!(s.ood_test.len(), 30);
        assert_eq!(s.wild_ood_pool.len(), 70);
    }

    #[test]
    fn hard_split_partitions_rows() {
        let ds = ten_class();
        let s = hard_split(&ds, 6, 0.7, 5).unwrap();
        // Feature column 0 is the original row index.
        let mut seen = HashSet::new();
        for part in [&s.id_train, &s.id_test, &s.wild_ood_pool, &s.ood_test] {
            for row in part.features.rows() {
                assert!(seen.insert(row[0] as usize));
            }
        }
        assert_eq!(seen.len(), 1000);
        for (row, &y) in s.id_train.features.rows().into_iter().zip(&s.id_train.labels) {
            assert_eq!(s.spec.id_classes[y], row[0] as usize % 10);
        }
    }

    #[test]
    fn hard_split_tiny_class() {
        let features = Array2::zeros((5, 2));
        let ds = LabeledDataset::new(features, vec![0, 0, 1, 1, 2], 3).unwrap();
        assert!(matches!(hard_split(&ds, 2, 0.7, 0), Err(Error::Split(_))));
    }

    #[test]
    fn noisify_labels_everything_extra() {
        let (id, ood) = pools();
        let w = build_wild(id.features.view(), ood.features.view(), 0.5, 40, 0).unwrap();
        let ds = noisify_as_extra_class(&w, 10).unwrap();
        assert!(ds.labels.iter().all(|&y| y == 10));
        assert_eq!(ds.num_classes, 11);
        assert_eq!(ds.features, w.features);
        assert_eq!(ds.hidden, Some(HiddenTruth::WildOrigin(w.ground_truth.clone())));

        let one = w.select(&[3]).unwrap();
        let ds = noisify_as_extra_class(&one, 4).unwrap();
        assert_eq!(ds.labels, vec![4]);
    }
}

//! ID classifier and binary OOD detector.
//!
//! The detector is a linear head on the frozen backbone's penultimate
//! features, trained with the logistic surrogate to score ID above zero and
//! filtered OOD candidates below it.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::nn::{
    ce_loss_with_grad, cosine_lr, sigmoid_binary_grad, sigmoid_binary_loss, Mode, Network,
    OptimizerConfig, ID_LABEL, OOD_LABEL,
};
use crate::rng::{self, CyclicStream};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Hidden widths of the K-class backbone; at least one layer.
    pub backbone_hidden: Vec<usize>,
    pub classifier: OptimizerConfig,
    pub head: OptimizerConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backbone_hidden: vec![64],
            classifier: OptimizerConfig::default(),
            head: OptimizerConfig {
                initial_lr: 0.001,
                dropout_rate: 0.0,
                ..OptimizerConfig::default()
            },
            batch_size: 128,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.head.validate()?;
        if self.backbone_hidden.is_empty() || self.backbone_hidden.contains(&0) {
            return Err(Error::Config(
                "backbone needs at least one hidden layer of positive width".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IdClassifier {
    pub network: Network,
    pub train_accuracy: f64,
}

/// K-way classifier trained with minibatch CE on shuffled `id_train`.
pub fn train_id_classifier(id_train: &LabeledDataset, config: &DetectorConfig) -> Result<IdClassifier> {
    config.validate()?;
    let opt = &config.classifier;
    let mut dims = vec![id_train.dim()];
    dims.extend_from_slice(&config.backbone_hidden);
    dims.push(id_train.num_classes);
    let mut net = Network::new(&dims, rng::derive_seed(config.seed, "backbone-net"))?
        .with_dropout(opt.dropout_rate)?
        .with_momentum(opt.momentum)?;
    let mut rng = rng::stream(config.seed, "backbone-batches");
    let mut order: Vec<usize> = (0..id_train.len()).collect();
    for epoch in 0..opt.epochs {
        let lr = cosine_lr(opt.initial_lr, epoch, opt.epochs)?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = id_train.select(chunk);
            let (logits, cache) = net.forward(batch.features.view(), Mode::Train)?;
            let (losses, mut grad) = ce_loss_with_grad(logits.view(), &batch.labels)?;
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::numerical(format!("non-finite classifier loss at epoch {epoch}")));
            }
            grad /= chunk.len() as f64;
            let grads = net.backward(&cache, grad.view())?;
            net.sgd_step(&grads, lr)?;
        }
    }
    let predicted = classify(&net, id_train.features.view())?;
    let train_accuracy = accuracy(&predicted, &id_train.labels)?;
    Ok(IdClassifier {
        network: net,
        train_accuracy,
    })
}

/// Argmax of eval-mode logits; ties go to the lowest index.
pub fn classify(backbone: &Network, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    let logits = backbone.predict(features)?;
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub backbone: Network,
    /// `penultimate_dim -> 1`, no hidden layers.
    pub head: Network,
}

impl DetectorModel {
    pub fn new(backbone: Network, head: Network) -> Result<Self> {
        if head.input_dim() != backbone.penultimate_dim() || head.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "head {:?} does not fit backbone penultimate width {}",
                head.layer_dims(),
                backbone.penultimate_dim()
            )));
        }
        Ok(Self { backbone, head })
    }
}

/// End-of-epoch detector objective over the full training sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorEpoch {
    /// Mean surrogate loss, ID and OOD halves weighted equally.
    pub loss: f64,
    /// `P(g(x_id) <= 0) + P(g(x_ood) > 0)`.
    pub zero_one: f64,
}

#[derive(Debug, Clone)]
pub struct DetectorTraining {
    pub model: DetectorModel,
    pub history: Vec<DetectorEpoch>,
    /// `(id_rows, ood_rows)` per step.
    pub batches: Vec<(usize, usize)>,
}

fn head_scores(head: &Network, feats: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(head.predict(feats)?.column(0).to_vec())
}

fn epoch_stats(head: &Network, id: ArrayView2<f64>, ood: ArrayView2<f64>) -> Result<DetectorEpoch> {
    let gi = head_scores(head, id)?;
    let go = head_scores(head, ood)?;
    let li = sigmoid_binary_loss(&gi, &vec![ID_LABEL; gi.len()])?;
    let lo = sigmoid_binary_loss(&go, &vec![OOD_LABEL; go.len()])?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let miss_id = gi.iter().filter(|&&g| g <= 0.0).count() as f64 / gi.len() as f64;
    let miss_ood = go.iter().filter(|&&g| g > 0.0).count() as f64 / go.len() as f64;
    Ok(DetectorEpoch {
        loss: (mean(&li) + mean(&lo)) / 2.0,
        zero_one: miss_id + miss_ood,
    })
}

/// Trains a linear head on frozen penultimate features.
///
/// Each batch holds equal ID and candidate-OOD halves. One epoch is a
/// shuffled pass over the larger side; the smaller side is drawn from a
/// reshuffling cyclic stream.
pub fn train_detector(
    id_train: ArrayView2<f64>,
    ood_candidates: ArrayView2<f64>,
    backbone: &Network,
    config: &DetectorConfig,
) -> Result<DetectorTraining> {
    config.validate()?;
    if ood_candidates.nrows() == 0 {
        return Err(Error::Config("no OOD candidates; detector is undefined".into()));
    }
    if id_train.nrows() == 0 {
        return Err(Error::Config("no ID training rows".into()));
    }
    let opt = &config.head;
    let fid = backbone.penultimate(id_train)?;
    let food = backbone.penultimate(ood_candidates)?;
    let h = fid.ncols();
    let mut head = Network::new(&[h, 1], rng::derive_seed(config.seed, "detector-head"))?
        .with_momentum(opt.momentum)?;

    let mut rng = rng::stream(config.seed, "detector-batches");
    let id_larger = fid.nrows() >= food.nrows();
    let (large, small) = if id_larger { (&fid, &food) } else { (&food, &fid) };
    let mut order: Vec<usize> = (0..large.nrows()).collect();
    let mut stream = CyclicStream::new(small.nrows(), &mut rng);
    let half = config.batch_size / 2;
    let mut history = Vec::with_capacity(opt.epochs);
    let mut batches = Vec::new();

    for epoch in 0..opt.epochs {
        let lr = cosine_lr(opt.initial_lr, epoch, opt.epochs)?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(half) {
            let other = stream.take(chunk.len(), &mut rng);
            let (id_rows, ood_rows) = if id_larger {
                (chunk, other.as_slice())
            } else {
                (other.as_slice(), chunk)
            };
            let n = id_rows.len() + ood_rows.len();
            let mut x = Array2::<f64>::zeros((n, h));
            let mut labels = Vec::with_capacity(n);
            for (slot, &r) in id_rows.iter().enumerate() {
                x.row_mut(slot).assign(&fid.row(r));
                labels.push(ID_LABEL);
            }
            for (j, &r) in ood_rows.iter().enumerate() {
                x.row_mut(id_rows.len() + j).assign(&food.row(r));
                labels.push(OOD_LABEL);
            }
            let (out, cache) = head.forward(x.view(), Mode::Train)?;
            let scores = out.column(0).to_vec();
            let g = sigmoid_binary_grad(&scores, &labels)?;
            let grad = Array2::from_shape_vec((n, 1), g)
                .expect("one gradient per row")
                .mapv(|v| v / n as f64);
            let grads = head.backward(&cache, grad.view())?;
            head.sgd_step(&grads, lr)?;
            batches.push((id_rows.len(), ood_rows.len()));
        }
        history.push(epoch_stats(&head, fid.view(), food.view())?);
    }
    Ok(DetectorTraining {
        model: DetectorModel::new(backbone.clone(), head)?,
        history,
        batches,
    })
}

/// Eval-mode detector score per row; `> 0` means ID.
pub fn score(model: &DetectorModel, features: ArrayView2<f64>) -> Result<Vec<f64>> {
    let feats = model.backbone.penultimate(features)?;
    head_scores(&model.head, feats.view())
}

/// Mean of each column, as a one-row matrix.
pub fn centroid(features: ArrayView2<f64>) -> Array2<f64> {
    features
        .mean_axis(Axis(0))
        .expect("non-empty features")
        .insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_multiclass_gaussian, gen_ood, OodKind, OodSpec};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick_config(seed: u64) -> DetectorConfig {
        DetectorConfig {
            classifier: OptimizerConfig::default(),
            head: OptimizerConfig {
                initial_lr: 0.001,
                epochs: 20,
                dropout_rate: 0.0,
                momentum: 0.9,
            },
            seed,
            ..DetectorConfig::default()
        }
    }

    fn far_pool(n: usize, seed: u64) -> LabeledDataset {
        let spec = OodSpec {
            kind: OodKind::Far,
            id_classes: 4,
            blobs: 2,
            separation: 4.0,
            near_scale: 1.0,
            sigma: 1.0,
        };
        gen_ood(&spec, n, 20, seed).unwrap()
    }

    #[test]
    fn classifier_fits_separable_data() {
        let ds = gen_multiclass_gaussian(4, 100, 20, 4.0, 1.0, 3).unwrap();
        let fit = train_id_classifier(&ds, &quick_config(3)).unwrap();
        assert!(fit.train_accuracy >= 0.99, "{}", fit.train_accuracy);
        let again = classify(&fit.network, ds.features.view()).unwrap();
        assert_eq!(accuracy(&again, &ds.labels).unwrap(), fit.train_accuracy);
        let rerun = train_id_classifier(&ds, &quick_config(3)).unwrap();
        assert_eq!(rerun.train_accuracy, fit.train_accuracy);
        assert_eq!(rerun.network.parameters_flat(), fit.network.parameters_flat());
    }

    #[test]
    fn classifier_memorizes_one_per_class() {
        let ds = LabeledDataset::new(array![[1.0, 0.0, 0.2], [0.0, 1.0, -0.3], [0.5, 0.5, 1.0]], vec![0, 1, 2], 3)
            .unwrap();
        let mut cfg = quick_config(1);
        cfg.classifier = OptimizerConfig {
            initial_lr: 0.1,
            epochs: 300,
            dropout_rate: 0.0,
            momentum: 0.9,
        };
        let fit = train_id_classifier(&ds, &cfg).unwrap();
        assert_eq!(fit.train_accuracy, 1.0);
    }

    #[test]
    fn classify_ties_go_to_lowest_index() {
        let mut net = Network::new(&[2, 3], 0).unwrap();
        for l in net.layers_mut() {
            l.weights.fill(0.0);
        }
        assert_eq!(classify(&net, array![[1.0, 2.0]].view()).unwrap(), vec![0]);
        net.layers_mut()[0].bias[2] = 1.0;
        assert_eq!(classify(&net, array![[1.0, 2.0]].view()).unwrap(), vec![2]);
        assert!(classify(&net, array![[1.0]].view()).is_err());
    }

    #[test]
    fn zero_head_scores_zero() {
        let backbone = Network::new(&[3, 4, 2], 0).unwrap();
        let mut head = Network::new(&[4, 1], 1).unwrap();
        head.set_parameters_flat(&[0.0; 5]).unwrap();
        let model = DetectorModel::new(backbone, head).unwrap();
        let x = array![[1.0, -2.0, 0.5], [1.0, -2.0, 0.5]];
        let s = score(&model, x.view()).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        assert!(score(&model, array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn detector_separates_far_ood_and_freezes_backbone() {
        let ds = gen_multiclass_gaussian(4, 100, 20, 4.0, 1.0, 5).unwrap();
        let ood = far_pool(100, 6);
        let cfg = quick_config(5);
        let backbone = train_id_classifier(&ds, &cfg).unwrap().network;
        let before: Vec<u64> = backbone.parameters_flat().iter().map(|v| v.to_bits()).collect();
        let mut head_cfg = cfg.clone();
        head_cfg.head.epochs = 200;
        let fit = train_detector(ds.features.view(), ood.features.view(), &backbone, &head_cfg).unwrap();
        let after: Vec<u64> = fit.model.backbone.parameters_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        let orig: Vec<u64> = backbone.parameters_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, orig);

        for (a, b) in fit.batches {
            assert!(a.abs_diff(b) <= 1);
        }
        let id_c = score(&fit.model, centroid(ds.features.view()).view()).unwrap()[0];
        let ood_c = score(&fit.model, centroid(ood.features.view()).view()).unwrap()[0];
        assert!(id_c > ood_c);
    }

    /// Backbone whose penultimate layer is ReLU(identity), so features equal
    /// the (positive) inputs.
    fn identity_backbone(d: usize) -> Network {
        let mut net = Network::new(&[d, d, 2], 0).unwrap();
        net.layers_mut()[0].weights = Array2::eye(d);
        net
    }

    #[test]
    fn separable_features_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sample = |a: f64, b: f64| {
            Array2::from_shape_fn((100, 2), |(_, j)| {
                rng.random_range(0.0..1.0) + if j == 0 { a } else { b }
            })
        };
        let id = sample(3.0, 0.5);
        let ood = sample(0.5, 3.0);
        let backbone = identity_backbone(2);
        let mut cfg = quick_config(4);
        cfg.head.epochs = 1000;
        let fit = train_detector(id.view(), ood.view(), &backbone, &cfg).unwrap();
        let last = fit.history.last().unwrap();
        assert!(last.loss < 0.05, "loss {}", last.loss);
        assert!(score(&fit.model, id.view()).unwrap().iter().all(|&g| g > 0.0));
        assert!(score(&fit.model, ood.view()).unwrap().iter().all(|&g| g < 0.0));
        let checkpoints: Vec<f64> = fit.history.iter().step_by(10).map(|e| e.zero_one).collect();
        for w in checkpoints.windows(2) {
            assert!(w[1] <= w[0], "{checkpoints:?}");
        }
    }

    #[test]
    fn two_point_detector_straddles_zero() {
        let backbone = Network::new(&[2, 8, 2], 4).unwrap();
        let id = array![[2.0, 0.0]];
        let ood = array![[0.0, 2.0]];
        let mut cfg = quick_config(2);
        cfg.head.epochs = 500;
        cfg.head.initial_lr = 0.05;
        let fit = train_detector(id.view(), ood.view(), &backbone, &cfg).unwrap();
        let s = score(&fit.model, ndarray::concatenate![Axis(0), id, ood].view()).unwrap();
        assert!(s[0] > 0.0 && s[1] < 0.0, "{s:?}");
    }

    #[test]
    fn empty_candidates_rejected() {
        let backbone = Network::new(&[2, 3, 2], 0).unwrap();
        let err = train_detector(
            array![[1.0, 2.0]].view(),
            Array2::<f64>::zeros((0, 2)).view(),
            &backbone,
            &DetectorConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_config());
    }
}

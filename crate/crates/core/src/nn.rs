//! Dense feedforward networks with hand-derived backpropagation.
//!
//! Hidden layers use ReLU followed by inverted dropout; the output layer is
//! affine. Weights are stored `(fan_in, fan_out)` so a batch forward is
//! `X · W + b` with one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Binary label for detector training: sample came from the ID distribution.
pub const ID_LABEL: usize = 1;
/// Binary label for detector training: sample is (candidate) OOD.
pub const OOD_LABEL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks are sampled from the network's own stream.
    Train,
    /// Dropout disabled.
    Eval,
}

/// SGD-with-momentum hyperparameters shared by every training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.01,
            momentum: 0.9,
            epochs: 100,
            dropout_rate: 0.3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Inputs plus integer labels for one optimization step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Input("batch must contain at least one row".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "batch has {} rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Weights and bias of one dense layer. Also used for gradients and
/// momentum buffers, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Gradients of the mean batch loss, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }

    /// Flattened in the same order as [`Network::parameters_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediate activations from [`Network::forward`], consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer (post-activation, post-dropout for hidden layers).
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Scaled dropout mask of each hidden layer, `None` when dropout was off.
    masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs.first().map_or(0, |a| a.nrows())
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layer_dims: Vec<usize>,
    layers: Vec<LayerParams>,
    velocity: Vec<LayerParams>,
    dropout_rate: f64,
    momentum: f64,
    seed: u64,
    rng: ChaCha8Rng,
    /// Bumped on every parameter update so stale caches are caught.
    version: u64,
}

/// Builds a network with `N(0, 1/fan_in)` weights, zero biases and zero
/// momentum buffers. Dropout and momentum default to zero.
pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<Network> {
    Network::new(layer_dims, seed)
}

impl Network {
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "layer_dims needs at least input and output sizes, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive, got {layer_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        let mut velocity = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt())
                .expect("positive standard deviation");
            let weights = Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(&mut rng));
            layers.push(LayerParams {
                weights,
                bias: Array1::zeros(fan_out),
            });
            velocity.push(LayerParams::zeros(fan_in, fan_out));
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            velocity,
            dropout_rate: 0.0,
            momentum: 0.0,
            seed,
            rng,
            version: 0,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {rate}"
            )));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        self.momentum = momentum;
        Ok(self)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    /// Width of the representation fed to the output layer.
    pub fn penultimate_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Direct parameter access. Any cache taken before the call goes stale.
    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.version += 1;
        &mut self.layers
    }

    pub fn momentum_buffers(&self) -> &[LayerParams] {
        &self.velocity
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights (row-major) before bias.
    pub fn parameters_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                values.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = values[offset];
                offset += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
            && self.velocity.iter().all(LayerParams::is_finite)
    }

    fn check_input(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        Ok(())
    }

    /// Computes logits and the cache needed by [`Network::backward`].
    pub fn forward(
        &mut self,
        inputs: ArrayView2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&inputs)?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        let use_dropout = mode == Mode::Train && self.dropout_rate > 0.0;

        let mut cache = ForwardCache {
            version: self.version,
            layer_inputs: Vec::with_capacity(self.layers.len()),
            hidden_pre: Vec::with_capacity(last),
            masks: Vec::with_capacity(last),
        };
        let mut activ = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = activ.dot(&layer.weights) + &layer.bias;
            cache.layer_inputs.push(activ);
            if l == last {
                return Ok((z, cache));
            }
            let mut h = z.mapv(|v| v.max(0.0));
            let mask = if use_dropout {
                let rate = self.dropout_rate;
                let rng = &mut self.rng;
                let mask = Array2::from_shape_fn(h.dim(), |_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        1.0 / keep
                    }
                });
                h *= &mask;
                Some(mask)
            } else {
                None
            };
            cache.hidden_pre.push(z);
            cache.masks.push(mask);
            activ = h;
        }
        unreachable!("network has at least one layer")
    }

    /// Eval-mode logits without building a cache.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let last = self.layers.len() - 1;
        let mut activ = inputs.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = activ.dot(&layer.weights) + &layer.bias;
            if l == last {
                return Ok(z);
            }
            activ = z.mapv(|v| v.max(0.0));
        }
        unreachable!("network has at least one layer")
    }

    /// Eval-mode activations of the last hidden layer (post-ReLU). For a
    /// network without hidden layers this is the input itself.
    pub fn penultimate(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let mut activ = inputs.to_owned();
        for layer in &self.layers[..self.layers.len() - 1] {
            activ = (activ.dot(&layer.weights) + &layer.bias).mapv(|v| v.max(0.0));
        }
        Ok(activ)
    }

    /// Exact gradients of the mean batch loss. `loss_grad` must already be
    /// `d(mean loss)/d(logits)`, i.e. include the `1/|B|` factors.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: ArrayView2<f64>) -> Result<Gradients> {
        if cache.version != self.version || cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::Usage(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        let batch = cache.batch_size();
        if loss_grad.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "loss gradient is {:?}, expected ({batch}, {})",
                loss_grad.dim(),
                self.output_dim()
            )));
        }
        let mut grads: Vec<LayerParams> = Vec::with_capacity(self.layers.len());
        let mut delta = loss_grad.to_owned();
        for l in (0..self.layers.len()).rev() {
            let weights = cache.layer_inputs[l].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights.t());
                if let Some(mask) = &cache.masks[l - 1] {
                    upstream *= mask;
                }
                Zip::from(&mut upstream)
                    .and(&cache.hidden_pre[l - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
                delta = upstream;
            }
            grads.push(LayerParams { weights, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Momentum SGD: `buf = momentum * buf + grad; param -= lr * buf`.
    /// Refuses non-finite gradients without touching any state.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, p)| !g.same_shape(p))
        {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::numerical("non-finite gradient, step refused"));
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Input(format!("learning rate must be >= 0, got {lr}")));
        }
        let momentum = self.momentum;
        for ((param, buf), grad) in self.layers.iter_mut().zip(&mut self.velocity).zip(&grads.layers) {
            Zip::from(&mut buf.weights)
                .and(&grad.weights)
                .for_each(|b, &g| *b = momentum * *b + g);
            Zip::from(&mut buf.bias)
                .and(&grad.bias)
                .for_each(|b, &g| *b = momentum * *b + g);
            param.weights.scaled_add(-lr, &buf.weights);
            param.bias.scaled_add(-lr, &buf.bias);
        }
        self.version += 1;
        if !self.all_finite() {
            return Err(Error::numerical("parameters became non-finite after update"));
        }
        Ok(())
    }
}

fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.weights.iter().copied());
        out.extend(layer.bias.iter().copied());
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

fn check_labels(labels: &[usize], classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Input(format!(
            "label {bad} at row {i} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `-log softmax(logits_i)[label_i]` for each row.
pub fn ce_loss_per_sample(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(labels, logits.ncols(), logits.nrows())?;
    Ok(logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            // Guard the -0.0 / tiny negative rounding at saturation.
            (lse - row[y]).max(0.0)
        })
        .collect())
}

/// Per-sample CE losses plus the per-sample gradient `softmax - onehot`
/// (unscaled; the caller applies batch normalization).
pub fn ce_loss_with_grad(
    logits: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(Vec<f64>, Array2<f64>)> {
    let losses = ce_loss_per_sample(logits, labels)?;
    let mut grad = softmax_rows(logits);
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    Ok((losses, grad))
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_binary(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != ID_LABEL && y != OOD_LABEL) {
        return Err(Error::Input(format!("binary label must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Logistic surrogate of the 0/1 detector loss. Score `g > 0` means ID:
/// ID samples pay `ln(1 + e^-g)`, OOD samples pay `ln(1 + e^g)`.
pub fn sigmoid_binary_loss(scores: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    check_binary(scores, labels)?;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&g, &y)| if y == ID_LABEL { softplus(-g) } else { softplus(g) })
        .collect())
}

/// Per-sample derivative of [`sigmoid_binary_loss`] with respect to the score.
pub fn sigmoid_binary_grad(scores: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    check_binary(scores, labels)?;
    Ok(scores
        .iter()
        .zip(labels)
        .map(|(&g, &y)| if y == ID_LABEL { sigmoid(g) - 1.0 } else { sigmoid(g) })
        .collect())
}

/// `initial_lr * (1 + cos(pi * epoch / total_epochs)) / 2`.
pub fn cosine_lr(initial_lr: f64, epoch: usize, total_epochs: usize) -> Result<f64> {
    if epoch >= total_epochs {
        return Err(Error::Input(format!(
            "epoch {epoch} outside [0, {total_epochs})"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(initial_lr * (1.0 + phase.cos()) / 2.0)
}

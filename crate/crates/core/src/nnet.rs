//! Small multilayer perceptron with an exposed penultimate feature layer.
//!
//! Hidden layers use rectified-linear activations; a linear classifier head
//! maps penultimate features to class logits. Training is mini-batch SGD
//! with classical momentum on mean softmax cross-entropy. Runs always
//! complete `max_epochs`; the checkpoint with the lowest validation loss is
//! retained alongside the final-epoch model.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Layer sizes of the MLP. `hidden_widths` may be empty, in which case the
/// penultimate features are the raw inputs and the model is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_widths: vec![64, 64],
            num_classes: 2,
        }
    }
}

impl Architecture {
    /// Width of the penultimate feature layer.
    pub fn feature_dim(&self) -> usize {
        self.hidden_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        if self.hidden_widths.iter().any(|&w| w < 1) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) per layer, classifier last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.num_classes));
        dims
    }
}

/// One dense layer: `weights` is out x in, `bias` has length out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(other: &Layer) -> Layer {
        Layer {
            weights: Array2::zeros(other.weights.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }
}

/// All model parameters: hidden layers plus the linear classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub hidden: Vec<Layer>,
    pub classifier: Layer,
}

impl ModelState {
    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map(|l| l.weights.ncols())
            .unwrap_or_else(|| self.classifier.weights.ncols())
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.weights.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.weights.nrows()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            hidden_widths: self.hidden.iter().map(|l| l.weights.nrows()).collect(),
            num_classes: self.num_classes(),
        }
    }

    /// Penultimate features and logits for a batch of inputs.
    pub fn forward(&self, inputs: &Array2<f64>) -> Result<ForwardPass> {
        let cache = self.forward_cached(inputs)?;
        let features = match cache.activations.last() {
            Some(a) => a.clone(),
            None => inputs.clone(),
        };
        Ok(ForwardPass {
            features,
            logits: cache.logits,
        })
    }

    fn forward_cached(&self, inputs: &Array2<f64>) -> Result<ForwardCache> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input width {} does not match model input_dim {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input".into()));
        }
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let prev = activations.last().unwrap_or(inputs);
            let mut z = prev.dot(&layer.weights.t());
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z);
        }
        let features = activations.last().unwrap_or(inputs);
        let mut logits = features.dot(&self.classifier.weights.t());
        logits += &self.classifier.bias;
        Ok(ForwardCache {
            activations,
            logits,
        })
    }

    /// Mean softmax cross-entropy and exact gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        inputs: &Array2<f64>,
        labels: &[u8],
    ) -> Result<(f64, Gradients)> {
        let m = inputs.nrows();
        if m == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        if labels.len() != m {
            return Err(Error::Contract(format!(
                "{m} rows but {} labels",
                labels.len()
            )));
        }
        let k = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| (y as usize) >= k) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {k} classes"
            )));
        }

        let cache = self.forward_cached(inputs)?;
        let (loss, mut dlogits) = cross_entropy_with_grad(&cache.logits, labels);
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        dlogits /= m as f64;

        let features = cache.activations.last().unwrap_or(inputs);
        let d_classifier = Layer {
            weights: dlogits.t().dot(features),
            bias: dlogits.sum_axis(Axis(0)),
        };

        let mut d_hidden: Vec<Layer> = self
            .hidden
            .iter()
            .map(Layer::zeros_like)
            .collect();
        let mut upstream = dlogits.dot(&self.classifier.weights);
        for l in (0..self.hidden.len()).rev() {
            // ReLU gate: the cached activation is zero exactly where the
            // pre-activation was clamped.
            let act = &cache.activations[l];
            let mut dz = upstream;
            dz.zip_mut_with(act, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            let layer_input = if l == 0 {
                inputs
            } else {
                &cache.activations[l - 1]
            };
            d_hidden[l] = Layer {
                weights: dz.t().dot(layer_input),
                bias: dz.sum_axis(Axis(0)),
            };
            upstream = dz.dot(&self.hidden[l].weights);
        }

        Ok((
            loss,
            Gradients {
                hidden: d_hidden,
                classifier: d_classifier,
            },
        ))
    }

    /// Predicted labels (argmax of logits, ties to the lower class index)
    /// and softmax probabilities of class 1.
    pub fn predict(&self, inputs: &Array2<f64>) -> Result<(Vec<u8>, Vec<f64>)> {
        let pass = self.forward(inputs)?;
        let mut labels = Vec::with_capacity(inputs.nrows());
        let mut scores = Vec::with_capacity(inputs.nrows());
        for row in pass.logits.axis_iter(Axis(0)) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            labels.push(best as u8);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            scores.push((row[1] - max).exp() / denom);
        }
        Ok((labels, scores))
    }
}

struct ForwardCache {
    activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

/// Output of [`ModelState::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// m x p penultimate activations.
    pub features: Array2<f64>,
    /// m x K classifier outputs.
    pub logits: Array2<f64>,
}

/// Parameter gradients shaped like a [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<Layer>,
    pub classifier: Layer,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Self {
            hidden: model.hidden.iter().map(Layer::zeros_like).collect(),
            classifier: Layer::zeros_like(&model.classifier),
        }
    }
}

/// Penultimate features with the labels and groups they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<u8>,
}

impl FeatureBatch {
    pub fn new(features: Array2<f64>, labels: Vec<u8>, groups: Vec<u8>) -> Result<Self> {
        let m = features.nrows();
        if labels.len() != m || groups.len() != m {
            return Err(Error::Contract(format!(
                "{m} feature rows but {} labels / {} groups",
                labels.len(),
                groups.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite features".into()));
        }
        Ok(Self {
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 200,
            weight_decay: 0.0,
            early_stop_patience: 10,
            early_stop_min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.early_stop_patience < 1 {
            return Err(Error::Config("early_stop_patience must be >= 1".into()));
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return Err(Error::Config("early_stop_min_delta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Draw weights from N(0, 2/fan_in) and zero the biases.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<ModelState> {
    arch.validate()?;
    let mut rng = rng_from_seed(seed);
    let normal = StandardNormal;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in arch.layer_dims() {
        let sd = (2.0 / fan_in as f64).sqrt();
        let mut weights = Array2::zeros((fan_out, fan_in));
        for v in weights.iter_mut() {
            let z: f64 = normal.sample(&mut rng);
            *v = sd * z;
        }
        layers.push(Layer {
            weights,
            bias: Array1::zeros(fan_out),
        });
    }
    let classifier = layers.pop().expect("layer_dims is never empty");
    Ok(ModelState {
        hidden: layers,
        classifier,
    })
}

/// Classical momentum update with L2 weight decay folded into the gradient:
/// v <- momentum * v + (g + wd * theta); theta <- theta - lr * v.
pub fn sgd_step(
    model: &mut ModelState,
    grads: &Gradients,
    hyper: &TrainHyper,
    velocity: &mut Gradients,
) {
    let update = |theta: &mut f64, g: f64, v: &mut f64| {
        let g_eff = g + hyper.weight_decay * *theta;
        *v = hyper.momentum * *v + g_eff;
        *theta -= hyper.learning_rate * *v;
    };
    for ((layer, grad), vel) in model
        .hidden
        .iter_mut()
        .zip(&grads.hidden)
        .chain(std::iter::once((&mut model.classifier, &grads.classifier)))
        .zip(
            velocity
                .hidden
                .iter_mut()
                .chain(std::iter::once(&mut velocity.classifier)),
        )
    {
        for ((t, &g), v) in layer
            .weights
            .iter_mut()
            .zip(grad.weights.iter())
            .zip(vel.weights.iter_mut())
        {
            update(t, g, v);
        }
        for ((t, &g), v) in layer
            .bias
            .iter_mut()
            .zip(grad.bias.iter())
            .zip(vel.bias.iter_mut())
        {
            update(t, g, v);
        }
    }
}

/// Per-epoch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Snapshot passed to the per-epoch callback after each epoch's updates.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub model: &'a ModelState,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Penultimate features of the full training set (post-update).
    pub train_features: &'a Array2<f64>,
    pub train_logits: &'a Array2<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model after the last completed epoch.
    pub final_state: ModelState,
    /// Best-validation-loss checkpoint at the moment early stopping fired
    /// (or overall, when it never fired).
    pub early_stopped_state: ModelState,
    pub early_stopped_epoch: usize,
    /// Epoch at which the patience window elapsed, if it did; training
    /// continues to `max_epochs` regardless, this only freezes which
    /// checkpoint counts as early-stopped.
    pub stopped_at: Option<usize>,
    pub history: Vec<EpochMetrics>,
    /// Set when training aborted on non-finite loss; `history` covers the
    /// epochs completed before the failure.
    pub divergence: Option<String>,
}

/// Train for `hyper.max_epochs` epochs of seeded-shuffle mini-batch SGD,
/// invoking `on_epoch` after every epoch.
pub fn train(
    model: ModelState,
    train_inputs: &Array2<f64>,
    train_labels: &[u8],
    val_inputs: &Array2<f64>,
    val_labels: &[u8],
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(EpochView<'_>),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    if train_inputs.nrows() == 0 || val_inputs.nrows() == 0 {
        return Err(Error::Contract("train and val sets must be nonempty".into()));
    }
    if train_labels.len() != train_inputs.nrows() || val_labels.len() != val_inputs.nrows() {
        return Err(Error::Contract("label lengths do not match inputs".into()));
    }

    let mut model = model;
    let mut velocity = Gradients::zeros_like(&model);
    let mut rng = rng_from_seed(hyper.seed);
    let mut indices: Vec<usize> = (0..train_inputs.nrows()).collect();

    let mut history = Vec::with_capacity(hyper.max_epochs);
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut epochs_without_improvement = 0usize;
    let mut stopped_at = None;
    let mut divergence = None;

    'epochs: for epoch in 1..=hyper.max_epochs {
        indices.shuffle(&mut rng);
        for (batch_idx, batch) in indices.chunks(hyper.batch_size).enumerate() {
            let x = train_inputs.select(Axis(0), batch);
            let y: Vec<u8> = batch.iter().map(|&i| train_labels[i]).collect();
            match model.loss_and_gradients(&x, &y) {
                Ok((_, grads)) => sgd_step(&mut model, &grads, hyper, &mut velocity),
                Err(Error::Numeric(msg)) => {
                    divergence = Some(format!("epoch {epoch}, batch {batch_idx}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let train_pass = model.forward(train_inputs)?;
        let train_loss = mean_cross_entropy(&train_pass.logits, train_labels);
        let val_pass = model.forward(val_inputs)?;
        let val_loss = mean_cross_entropy(&val_pass.logits, val_labels);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            divergence = Some(format!("epoch {epoch}: non-finite evaluation loss"));
            break 'epochs;
        }

        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
        });
        // Classical early-stopping bookkeeping: the selected checkpoint
        // freezes once validation loss stalls for `patience` epochs, even
        // though training itself always runs to max_epochs.
        if stopped_at.is_none() {
            let improved = match &best {
                None => true,
                Some((b, _, _)) => val_loss < b - hyper.early_stop_min_delta,
            };
            if improved {
                best = Some((val_loss, epoch, model.clone()));
                epochs_without_improvement = 0;
            } else {
                epochs_without_improvement += 1;
                if epochs_without_improvement >= hyper.early_stop_patience {
                    stopped_at = Some(epoch);
                }
            }
        }
        on_epoch(EpochView {
            epoch,
            model: &model,
            train_loss,
            val_loss,
            train_features: &train_pass.features,
            train_logits: &train_pass.logits,
        });
    }

    let (early_state, early_epoch) = match best {
        Some((_, epoch, state)) => (state, epoch),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome {
        final_state: model,
        early_stopped_state: early_state,
        early_stopped_epoch: early_epoch,
        stopped_at,
        history,
        divergence,
    })
}

/// Mean softmax cross-entropy of logits against labels.
pub fn mean_cross_entropy(logits: &Array2<f64>, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y as usize];
    }
    total / labels.len() as f64
}

/// Loss plus d(loss-sum)/d(logits); caller divides by the batch size.
fn cross_entropy_with_grad(logits: &Array2<f64>, labels: &[u8]) -> (f64, Array2<f64>) {
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (mut row, &y) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        total += max + denom.ln() - row[y as usize];
        for v in row.iter_mut() {
            *v = (*v - max).exp() / denom;
        }
        row[y as usize] -= 1.0;
    }
    (total / labels.len() as f64, grad)
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    state: ModelState,
}

/// Write a model as versioned JSON.
pub fn save_model(state: &ModelState, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(
        std::io::BufWriter::new(file),
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            state: state.clone(),
        },
    )?;
    Ok(())
}

/// Read a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<ModelState> {
    let file = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt.state)
}

//! A small fully connected network trained with gradient descent, one row
//! per step by default.
//!
//! Every layer is affine followed by a sigmoid; the single output unit is the
//! bot probability and training minimizes mean binary cross-entropy. Weights
//! are stored row-major as `fan_in x fan_out`, so `weights[i * fan_out + j]`
//! connects input `i` to unit `j`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::NUM_FEATURES;
use crate::ingest::Class;
use crate::metrics::{self, EvalReport};
use crate::normalize::Sample;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss became non-finite at epoch {epoch} (learning rate too large?)")]
    NonFiniteLoss { epoch: usize },
    #[error("no learning rates to sweep")]
    EmptySweep,
    #[error("model schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MlpError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Widths of the hidden layers, input side first.
    pub hidden_layout: Vec<usize>,
    pub learning_rate: f64,
    /// Training epochs.
    pub passes: usize,
    pub seed: u64,
    /// Rows per gradient step; `None` (`"full"` on disk) uses the whole
    /// training set. Defaults to 1: per-sample updates, reshuffled each pass.
    #[serde(with = "batch_size_repr")]
    pub batch_size: Option<usize>,
    /// Scores at or above this are classified as bots.
    pub threshold: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: Loss,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: NUM_FEATURES,
            hidden_layout: vec![25],
            learning_rate: 0.02,
            passes: 200,
            seed: 42,
            batch_size: Some(1),
            threshold: 0.5,
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Sigmoid,
            loss: Loss::BinaryCrossEntropy,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MlpError::InvalidConfig(msg));
        if self.input_dim != NUM_FEATURES {
            return bad(format!("input_dim must be {NUM_FEATURES}, got {}", self.input_dim));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.passes == 0 {
            return bad("passes must be at least 1".into());
        }
        if self.hidden_layout.contains(&0) {
            return bad("hidden layer widths must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    /// Layer widths from input to the single output unit.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_layout.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_layout);
        widths.push(1);
        widths
    }
}

pub(crate) mod batch_size_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(n) => s.serialize_u64(*n as u64),
            None => s.serialize_str("full"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Rows(usize),
        Named(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Rows(n) => Ok(Some(n)),
            Repr::Named(s) if s == "full" => Ok(None),
            Repr::Named(s) => Err(de::Error::custom(format!(
                "batch_size must be a count or \"full\", got {s:?}"
            ))),
        }
    }
}

/// Parses a batch size as written on the command line: a count or `full`.
pub fn parse_batch_size(text: &str) -> Result<Option<usize>, String> {
    if text == "full" {
        return Ok(None);
    }
    text.parse::<usize>()
        .map(Some)
        .map_err(|_| format!("expected a row count or `full`, got `{text}`"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn weight(&self, input: usize, unit: usize) -> f64 {
        self.weights[input * self.fan_out + unit]
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &x) in input.iter().enumerate() {
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += x * w;
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
}

/// Gradient with the same shape as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Per-epoch mean loss and training accuracy, measured on the batches as
/// they were seen (before each update).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy written in terms of the output logit, which stays
/// finite where `ln(p)` would underflow.
fn bce_from_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Uniform Xavier initialization from the config's seed; biases start at 0.
pub fn init_model(config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(init_with_rng(config, &mut rng))
}

fn init_with_rng(config: &MlpConfig, rng: &mut ChaCha8Rng) -> MlpModel {
    let layers = config
        .widths()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, fan_out);
            for weight in &mut layer.weights {
                *weight = rng.random_range(-limit..=limit);
            }
            layer
        })
        .collect();
    MlpModel {
        config: config.clone(),
        layers,
    }
}

impl MlpModel {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(MlpError::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer (input first) plus the output logit.
    fn activations(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let mut logit = 0.0;
        for layer in &self.layers {
            let z = layer.affine(acts.last().expect("nonempty"));
            logit = z[0];
            acts.push(z.into_iter().map(sigmoid).collect());
        }
        (acts, logit)
    }

    /// Bot probability for one normalized feature row.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.activations(x).0.last().expect("output layer")[0])
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let score = self.forward(x)?;
        let class = if score >= self.config.threshold {
            Class::Bot
        } else {
            Class::Human
        };
        Ok(Prediction { class, score })
    }

    /// Mean binary cross-entropy over `batch`.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(MlpError::EmptyBatch);
        }
        let mut total = 0.0;
        for sample in batch {
            self.check_dim(&sample.values)?;
            let (_, logit) = self.activations(&sample.values);
            total += bce_from_logit(logit, sample.target as f64);
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of the mean loss over `batch` with respect to every weight
    /// and bias.
    pub fn grad(&self, batch: &[Sample]) -> Result<Gradients> {
        Ok(self.grad_and_stats(batch)?.0)
    }

    /// Backpropagation. Also returns the batch's summed loss and the number
    /// of samples classified correctly, both taken from the same forward
    /// passes.
    fn grad_and_stats(&self, batch: &[Sample]) -> Result<(Gradients, f64, usize)> {
        if batch.is_empty() {
            return Err(MlpError::EmptyBatch);
        }
        let mut grads = Gradients {
            layers: self.layers.iter().map(|l| Layer::zeros(l.fan_in, l.fan_out)).collect(),
        };
        let scale = 1.0 / batch.len() as f64;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for sample in batch {
            self.check_dim(&sample.values)?;
            let target = sample.target as f64;
            let (acts, logit) = self.activations(&sample.values);
            let p = acts.last().expect("output")[0];
            loss_sum += bce_from_logit(logit, target);
            if (p >= self.config.threshold) == (sample.target == 1) {
                correct += 1;
            }

            // dL/dz at the output for sigmoid + cross-entropy
            let mut delta = vec![(p - target) * scale];
            for (k, layer) in self.layers.iter().enumerate().rev() {
                let input = &acts[k];
                let g = &mut grads.layers[k];
                for (i, &a) in input.iter().enumerate() {
                    let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (gw, d) in row.iter_mut().zip(&delta) {
                        *gw += a * d;
                    }
                }
                for (gb, d) in g.bias.iter_mut().zip(&delta) {
                    *gb += d;
                }
                if k == 0 {
                    break;
                }
                delta = (0..layer.fan_in)
                    .map(|i| {
                        let back: f64 = (0..layer.fan_out).map(|j| layer.weight(i, j) * delta[j]).sum();
                        back * input[i] * (1.0 - input[i])
                    })
                    .collect();
            }
        }
        Ok((grads, loss_sum, correct))
    }

    fn apply(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * gw;
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let widths = self.config.widths();
        if self.layers.len() + 1 != widths.len() {
            return Err(MlpError::SchemaMismatch(format!(
                "expected {} layers, found {}",
                widths.len() - 1,
                self.layers.len()
            )));
        }
        for (k, (layer, w)) in self.layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.fan_in != w[0]
                || layer.fan_out != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.bias.len() != w[1]
            {
                return Err(MlpError::SchemaMismatch(format!("layer {k} has the wrong shape")));
            }
        }
        if !self.is_finite() {
            return Err(MlpError::SchemaMismatch("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: Class,
    pub score: f64,
}

fn validate_samples(config: &MlpConfig, rows: &[Sample]) -> Result<()> {
    if rows.is_empty() {
        return Err(MlpError::EmptyBatch);
    }
    for (index, row) in rows.iter().enumerate() {
        if row.values.len() != config.input_dim {
            return Err(MlpError::DimensionMismatch {
                expected: config.input_dim,
                found: row.values.len(),
            });
        }
        if row.target > 1 {
            return Err(MlpError::InvalidSample {
                index,
                reason: format!("target {} is not 0 or 1", row.target),
            });
        }
        if let Some(v) = row.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MlpError::InvalidSample {
                index,
                reason: format!("value {v} outside [0, 1]"),
            });
        }
    }
    Ok(())
}

/// Trains a fresh model for `config.passes` epochs. Row order is fixed for
/// full-batch training and reshuffled from the seed each epoch otherwise, so
/// the result is a pure function of `(config, rows)`.
pub fn train(config: &MlpConfig, rows: &[Sample]) -> Result<(MlpModel, TrainingTrace)> {
    config.validate()?;
    validate_samples(config, rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_with_rng(config, &mut rng);
    let batch_size = config.batch_size.unwrap_or(rows.len()).min(rows.len());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut trace = TrainingTrace::default();
    let mut batch = Vec::with_capacity(batch_size);

    for epoch in 0..config.passes {
        if batch_size < rows.len() {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| rows[i].clone()));
            let (grads, batch_loss, batch_correct) = model.grad_and_stats(&batch)?;
            loss_sum += batch_loss;
            correct += batch_correct;
            model.apply(&grads, config.learning_rate);
        }
        let mean_loss = loss_sum / rows.len() as f64;
        if !mean_loss.is_finite() || !model.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        trace.loss.push(mean_loss);
        trace.accuracy.push(correct as f64 / rows.len() as f64);
    }
    Ok((model, trace))
}

/// Predicts every sample and scores the predictions against the targets.
pub fn evaluate_model(model: &MlpModel, samples: &[Sample]) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    for sample in samples {
        predicted.push(model.predict(&sample.values)?.class);
        truth.push(
            Class::from_target(sample.target).ok_or_else(|| MlpError::InvalidSample {
                index: truth.len(),
                reason: format!("target {} is not 0 or 1", sample.target),
            })?,
        );
    }
    let matrix = metrics::confusion(&predicted, &truth)?;
    Ok(metrics::evaluate(&matrix)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub learning_rate: f64,
    /// Accuracy on the evaluation rows; 0 when training diverged.
    pub accuracy: f64,
    pub diverged: bool,
}

/// Trains one model per learning rate (same seed and data) and reports each
/// model's accuracy on `eval_rows`, in the order the rates were given.
/// Rates are trained in parallel.
pub fn lr_sweep(
    base: &MlpConfig,
    rates: &[f64],
    train_rows: &[Sample],
    eval_rows: &[Sample],
) -> Result<Vec<SweepPoint>> {
    if rates.is_empty() {
        return Err(MlpError::EmptySweep);
    }
    rates
        .par_iter()
        .map(|&rate| {
            let config = MlpConfig {
                learning_rate: rate,
                ..base.clone()
            };
            match train(&config, train_rows) {
                Ok((model, _)) => Ok(SweepPoint {
                    learning_rate: rate,
                    accuracy: evaluate_model(&model, eval_rows)?.accuracy,
                    diverged: false,
                }),
                Err(MlpError::NonFiniteLoss { .. }) => Ok(SweepPoint {
                    learning_rate: rate,
                    accuracy: 0.0,
                    diverged: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema_version: u32,
    config: MlpConfig,
    layers: Vec<Layer>,
}

pub fn model_to_json(model: &MlpModel) -> String {
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        config: model.config.clone(),
        layers: model.layers.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
}

pub fn model_from_json(bytes: &[u8]) -> Result<MlpModel> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| MlpError::SchemaMismatch(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
        other => {
            return Err(MlpError::SchemaMismatch(format!(
                "expected schema_version {MODEL_SCHEMA_VERSION}, found {other:?}"
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| MlpError::SchemaMismatch(e.to_string()))?;
    file.config.validate()?;
    let model = MlpModel {
        config: file.config,
        layers: file.layers,
    };
    model.check_shapes()?;
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = std::fs::read(path).map_err(|source| MlpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_json(&bytes)
}

//! Multilayer perceptrons with hand-derived backpropagation and plain SGD.
//!
//! Hidden layers use ReLU, the output layer is linear and produces logits.
//! Weights of layer `l` are stored as a `fan_in × fan_out` matrix so the
//! forward pass is `A_{l+1} = relu(A_l · W_l + b_l)`.
//!
//! # Checkpoint format
//!
//! All integers and floats are little-endian.
//!
//! | bytes            | content                                         |
//! |------------------|-------------------------------------------------|
//! | 4                | magic `DTSM`                                    |
//! | 4                | format version, `u32` (currently 1)             |
//! | 4                | number of entries in `layer_sizes`, `u32`       |
//! | 4 × count        | layer sizes, `u32` each, input first            |
//! | 8 × #parameters  | `f64` parameters                                |
//!
//! Parameters are written layer by layer; for each layer the weight matrix
//! comes first in row-major order (`fan_in` rows of `fan_out` values),
//! followed by the `fan_out` biases. [`Mlp::parameters`] uses the same order.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, shape, DtsError, Result};
use crate::numerics::{argmax, cross_entropy, cross_entropy_grad, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DTSM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre_activations: Vec<Matrix>,
}

/// Parameter gradients, shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    /// Flattened in checkpoint order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.weights == other.weights
            && self.biases == other.biases
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(invalid(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(invalid(format!("layer sizes must be >= 1, got {layer_sizes:?}")));
    }
    Ok(())
}

impl Mlp {
    /// He-initialised weights (`N(0, 2/fan_in)`) and zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = layer_sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
                Matrix::from_raw(fan_in, fan_out, data)
            })
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            cache: None,
        })
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut m = Self::new(layer_sizes, 0)?;
        m.set_parameters(&vec![0.0; m.num_parameters()])?;
        Ok(m)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum()
    }

    /// Flattened parameters in checkpoint order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrites all parameters from a flat vector in checkpoint order.
    /// Drops any cached forward pass.
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(shape(format!(
                "{} values for {} parameters",
                params.len(),
                self.num_parameters()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let nb = b.len();
            b.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.cache = None;
        Ok(())
    }

    fn run(&self, inputs: &Matrix, keep: bool) -> Result<(Matrix, Option<ForwardCache>)> {
        if inputs.cols() != self.input_dim() {
            return Err(shape(format!(
                "input width {} for a model expecting {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let last = self.weights.len() - 1;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.weights.len()),
            pre_activations: Vec::with_capacity(last),
        };
        let mut act = inputs.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = act.matmul(w)?;
            z.add_row_vector(b)?;
            if keep {
                cache.inputs.push(act);
            }
            if l == last {
                return Ok((z, keep.then_some(cache)));
            }
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = v.max(0.0);
            }
            if keep {
                cache.pre_activations.push(z);
            }
            act = a;
        }
        unreachable!("a model always has an output layer")
    }

    /// Logits for `inputs`, caching the activations needed by [`Mlp::backward`].
    pub fn forward(&mut self, inputs: &Matrix) -> Result<Matrix> {
        let (logits, cache) = self.run(inputs, true)?;
        self.cache = cache;
        Ok(logits)
    }

    /// Logits without touching the cache.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        self.run(inputs, false).map(|(z, _)| z)
    }

    /// Backpropagates `upstream = ∂L/∂logits` through the cached forward pass.
    pub fn backward(&self, upstream: &Matrix) -> Result<Gradients> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| DtsError::State("backward called without a cached forward pass".into()))?;
        let batch = cache.inputs[0].rows();
        if upstream.shape() != (batch, self.num_classes()) {
            return Err(shape(format!(
                "upstream gradient {}x{} for a cached batch of {batch}x{}",
                upstream.rows(),
                upstream.cols(),
                self.num_classes()
            )));
        }
        let layers = self.weights.len();
        let mut weights = vec![Matrix::zeros(0, 0); layers];
        let mut biases = vec![Vec::new(); layers];
        let mut delta = upstream.clone();
        for l in (0..layers).rev() {
            weights[l] = cache.inputs[l].t_matmul(&delta)?;
            biases[l] = delta.column_sums();
            if l > 0 {
                let mut next = delta.matmul_t(&self.weights[l])?;
                for (g, &z) in next
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre_activations[l - 1].as_slice())
                {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(Gradients { weights, biases })
    }

    /// `θ ← θ − lr · ∇θ`
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.weights.len() != self.weights.len() {
            return Err(shape("gradient layer count does not match the model"));
        }
        for (l, (w, gw)) in self.weights.iter_mut().zip(&grads.weights).enumerate() {
            w.expect_same_shape(gw)?;
            if grads.biases[l].len() != self.biases[l].len() {
                return Err(shape(format!("bias gradient length mismatch in layer {l}")));
            }
        }
        for (w, gw) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *p -= lr * g;
            }
        }
        for (b, gb) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, g) in b.iter_mut().zip(gb) {
                *p -= lr * g;
            }
        }
        if !self.weights.iter().all(Matrix::all_finite)
            || !self.biases.iter().flatten().all(|v| v.is_finite())
        {
            return Err(invalid("SGD step produced non-finite parameters"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.layer_sizes.len() + 8 * self.num_parameters());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in self.parameters() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| DtsError::Checkpoint(msg);
        let mut cursor = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(bad(format!("truncated: needed {n} more bytes")));
            }
            let (head, tail) = cursor.split_at(n);
            cursor = tail;
            Ok(head)
        };
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));

        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("missing DTSM magic bytes".into()));
        }
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u32_at(take(4)?) as usize;
        let sizes = (0..count)
            .map(|_| take(4).map(|b| u32_at(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::zeros(&sizes).map_err(|e| bad(e.to_string()))?;
        let params = (0..model.num_parameters())
            .map(|_| take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect::<Result<Vec<_>>>()?;
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        model.set_parameters(&params).map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Builds a model; see [`Mlp::new`].
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Mlp> {
    Mlp::new(layer_sizes, seed)
}

fn default_decay() -> f64 {
    0.1
}

/// Mini-batch SGD with milestone learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Zero-based epochs at whose start the learning rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the batch order.
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid(format!(
                "decay factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid(format!(
                "milestones must be sorted, got {:?}",
                self.milestones
            )));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.decay_factor.powi(passed as i32)
    }
}

/// Mini-batch index lists for one epoch. The order depends only on
/// `(seed, epoch)`: each epoch draws from its own ChaCha stream.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// One row of supervised-training telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Row-weighted mean of the pre-update batch cross-entropies.
    pub mean_ce: f64,
    /// Accuracy on the full training set after the epoch.
    pub train_accuracy: f64,
}

/// Fraction of rows whose argmax logit is the label (ties go to the lowest class).
pub fn accuracy(model: &Mlp, dataset: &Dataset) -> Result<f64> {
    let logits = model.predict(dataset.features())?;
    let correct = logits
        .row_iter()
        .zip(dataset.labels().as_slice())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Shuffled mini-batch SGD on cross-entropy.
pub fn train_supervised(model: &mut Mlp, dataset: &Dataset, config: &SgdConfig) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if model.input_dim() != dataset.dim() || model.num_classes() != dataset.num_classes() {
        return Err(invalid(format!(
            "model {:?} does not fit data of width {} with {} classes",
            model.layer_sizes(),
            dataset.dim(),
            dataset.num_classes()
        )));
    }
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        for batch in epoch_batches(dataset.len(), config.batch_size, config.seed, epoch) {
            let (x, y) = dataset.subset(&batch);
            let logits = model.forward(&x)?;
            loss_sum += cross_entropy(&logits, &y)? * batch.len() as f64;
            let grads = model.backward(&cross_entropy_grad(&logits, &y)?)?;
            model.sgd_step(&grads, lr)?;
        }
        records.push(EpochRecord {
            epoch,
            lr,
            mean_ce: loss_sum / dataset.len() as f64,
            train_accuracy: accuracy(model, dataset)?,
        });
    }
    Ok(records)
}

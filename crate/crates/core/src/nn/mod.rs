//! Minimal deterministic neural-network engine.
//!
//! Provides forward inference, exact analytic backpropagation to both
//! parameters and inputs (the attacks need input gradients), and plain SGD
//! updates. Training and inference are single-threaded by contract so that
//! identical seeds give bit-identical parameters.

mod io;
mod layers;
mod loss;

pub use io::{load_model, save_model, MODEL_MAGIC};
pub use layers::{Layer, LayerGrads};
pub use loss::softmax_cross_entropy;

use crate::rng::Prng;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {index} ({kind}): input shape {input:?} does not compose")]
    ShapeMismatch {
        index: usize,
        kind: String,
        input: Vec<usize>,
    },
    #[error("model output shape {output:?} does not end in {num_classes} classes")]
    BadOutputShape {
        output: Vec<usize>,
        num_classes: usize,
    },
    #[error("non-finite value in {context}")]
    NumericOverflow { context: String },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("batch of {images} images carries {labels} labels")]
    BatchCountMismatch { images: usize, labels: usize },
    #[error("image value {value} at flat index {index} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("gradient shape mismatch at layer {index}: expected {expected:?}, got {actual:?}")]
    GradShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("negative learning rate {0}")]
    NegativeLearningRate(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A batch of images with class labels. Images are `[n, c, h, w]` with
/// values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    images: Tensor,
    labels: Vec<u8>,
}

impl Batch {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self, NnError> {
        let n = *images.shape().first().unwrap_or(&0);
        if n != labels.len() {
            return Err(NnError::BatchCountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(index) = images
            .data()
            .iter()
            .position(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(NnError::PixelOutOfRange {
                index,
                value: images.data()[index],
            });
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loss value plus every gradient produced by one backward pass.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub param_grads: ParamGrads,
    /// Gradient of the loss with respect to the input images; same shape as
    /// the batch images.
    pub input_grads: Tensor,
}

/// Per-layer parameter gradients, aligned with the model's layer list.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    entries: Vec<Option<LayerGrads>>,
}

impl ParamGrads {
    pub fn entries(&self) -> &[Option<LayerGrads>] {
        &self.entries
    }
}

/// An ordered stack of layers ending in `num_classes` logits.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    layers: Vec<Layer>,
    num_classes: usize,
    input_shape: Vec<usize>,
}

impl NetworkModel {
    /// Builds a model and verifies that consecutive layer shapes compose
    /// from `input_shape` (per sample, e.g. `[1, 28, 28]`) down to
    /// `[num_classes]` logits.
    pub fn new(
        layers: Vec<Layer>,
        num_classes: usize,
        input_shape: Vec<usize>,
    ) -> Result<Self, NnError> {
        let model = Self {
            layers,
            num_classes,
            input_shape,
        };
        let mut shape: Vec<usize> = std::iter::once(1)
            .chain(model.input_shape.iter().copied())
            .collect();
        for (index, layer) in model.layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .ok_or_else(|| NnError::ShapeMismatch {
                    index,
                    kind: layer.kind_name().to_string(),
                    input: shape.clone(),
                })?;
        }
        if shape != [1, model.num_classes] {
            return Err(NnError::BadOutputShape {
                output: shape,
                num_classes: model.num_classes,
            });
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Runs every layer, returning all intermediate activations:
    /// `trace[0]` is the input, `trace[len]` the logits.
    fn forward_trace(&self, images: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(images.clone());
        for (index, layer) in self.layers.iter().enumerate() {
            let current = trace.last().expect("trace never empty");
            layer
                .output_shape(current.shape())
                .ok_or_else(|| NnError::ShapeMismatch {
                    index,
                    kind: layer.kind_name().to_string(),
                    input: current.shape().to_vec(),
                })?;
            let next = layer.forward(current);
            trace.push(next);
        }
        Ok(trace)
    }

    /// Forward pass producing `[n, num_classes]` logits.
    pub fn forward(&self, batch: &Batch) -> Result<Tensor, NnError> {
        let trace = self.forward_trace(batch.images())?;
        let logits = trace.into_iter().last().expect("trace never empty");
        logits
            .check_finite()
            .map_err(|_| NnError::NumericOverflow {
                context: "logits".to_string(),
            })?;
        Ok(logits)
    }

    /// Mean softmax cross-entropy plus exact gradients with respect to every
    /// parameter and to the input images.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<LossGrads, NnError> {
        for &label in batch.labels() {
            if label as usize >= self.num_classes {
                return Err(NnError::LabelOutOfRange {
                    label: label as usize,
                    num_classes: self.num_classes,
                });
            }
        }
        let trace = self.forward_trace(batch.images())?;
        let logits = trace.last().expect("trace never empty");
        let (loss, mut grad) = softmax_cross_entropy(logits, batch.labels());
        if !loss.is_finite() {
            return Err(NnError::NumericOverflow {
                context: "loss".to_string(),
            });
        }
        let mut entries = vec![None; self.layers.len()];
        for (index, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace[index];
            let (gin, gparams) = layer.backward(input, &grad);
            entries[index] = gparams;
            grad = gin;
        }
        grad.check_finite().map_err(|_| NnError::NumericOverflow {
            context: "input gradients".to_string(),
        })?;
        Ok(LossGrads {
            loss,
            param_grads: ParamGrads { entries },
            input_grads: grad,
        })
    }
}

/// Returns the model with every parameter moved to `p - lr * g`.
pub fn sgd_step(
    mut model: NetworkModel,
    grads: &ParamGrads,
    lr: f64,
) -> Result<NetworkModel, NnError> {
    if !(lr >= 0.0) {
        return Err(NnError::NegativeLearningRate(lr));
    }
    for (index, (layer, entry)) in model
        .layers
        .iter_mut()
        .zip(grads.entries.iter())
        .enumerate()
    {
        let (weights, bias) = match layer {
            Layer::Conv2d { weights, bias, .. } | Layer::Dense { weights, bias } => (weights, bias),
            _ => continue,
        };
        let g = entry.as_ref().ok_or_else(|| NnError::GradShapeMismatch {
            index,
            expected: weights.shape().to_vec(),
            actual: vec![],
        })?;
        if g.weights.shape() != weights.shape() || g.bias.shape() != bias.shape() {
            return Err(NnError::GradShapeMismatch {
                index,
                expected: weights.shape().to_vec(),
                actual: g.weights.shape().to_vec(),
            });
        }
        for (p, &gv) in weights.data_mut().iter_mut().zip(g.weights.data()) {
            *p -= lr * gv;
        }
        for (p, &gv) in bias.data_mut().iter_mut().zip(g.bias.data()) {
            *p -= lr * gv;
        }
    }
    Ok(model)
}

/// Fraction of samples whose argmax logit equals the label. Ties break
/// toward the lowest class index.
pub fn evaluate_accuracy(model: &NetworkModel, batches: &[Batch]) -> Result<f64, NnError> {
    let total: usize = batches.iter().map(Batch::len).sum();
    if total == 0 {
        return Err(NnError::EmptyDataset);
    }
    let mut correct = 0usize;
    for batch in batches {
        let logits = model.forward(batch)?;
        let classes = model.num_classes;
        for (b, &label) in batch.labels().iter().enumerate() {
            let row = &logits.data()[b * classes..(b + 1) * classes];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Built-in architectures sized for CPU desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ArchPreset {
    /// Flatten -> Dense(784, 128) -> ReLU -> Dense(128, 10).
    Mlp,
    /// Conv2D(1->8, 3x3) -> ReLU -> MaxPool(2) -> Flatten -> Dense(1352, 64)
    /// -> ReLU -> Dense(64, 10).
    CnnSmall,
}

impl ArchPreset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "mlp" => Some(Self::Mlp),
            "cnn-small" => Some(Self::CnnSmall),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mlp => "mlp",
            Self::CnnSmall => "cnn-small",
        }
    }

    /// Builds the preset with He-style scaled uniform init drawn from `rng`.
    pub fn build(&self, rng: &mut Prng) -> NetworkModel {
        let layers = match self {
            Self::Mlp => vec![
                Layer::Flatten,
                dense_init(784, 128, rng),
                Layer::Relu,
                dense_init(128, 10, rng),
            ],
            Self::CnnSmall => vec![
                conv_init(1, 8, 3, 1, rng),
                Layer::Relu,
                Layer::MaxPool2d { window: 2 },
                Layer::Flatten,
                dense_init(8 * 13 * 13, 64, rng),
                Layer::Relu,
                dense_init(64, 10, rng),
            ],
        };
        NetworkModel::new(layers, 10, vec![1, 28, 28]).expect("presets compose")
    }
}

/// Dense layer with He-uniform weights (`limit = sqrt(6 / fan_in)`) and zero bias.
pub fn dense_init(in_dim: usize, out_dim: usize, rng: &mut Prng) -> Layer {
    let limit = (6.0 / in_dim as f64).sqrt();
    let data = (0..in_dim * out_dim)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Layer::Dense {
        weights: Tensor::new(vec![in_dim, out_dim], data).expect("dense init shape"),
        bias: Tensor::zeros(vec![out_dim]),
    }
}

/// Convolution layer with He-uniform weights over `fan_in = in_ch * k * k`.
pub fn conv_init(in_ch: usize, out_ch: usize, k: usize, stride: usize, rng: &mut Prng) -> Layer {
    let fan_in = in_ch * k * k;
    let limit = (6.0 / fan_in as f64).sqrt();
    let data = (0..out_ch * fan_in)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Layer::Conv2d {
        weights: Tensor::new(vec![out_ch, in_ch, k, k], data).expect("conv init shape"),
        bias: Tensor::zeros(vec![out_ch]),
        stride,
    }
}

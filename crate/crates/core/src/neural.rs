//! Fully connected network with exact backpropagation and plain SGD.
//!
//! The same [`MlpModel`] type serves as the softmax classifier baseline and
//! as the shared branch of the triplet network. Embeddings are always the
//! affine output of layer [`EMBEDDING_LAYER`] (FC4) before its activation.
//!
//! Batched tensors are row-major: one sample per row. Weight matrices have
//! shape `(outputs, inputs)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelMap, NormalizationStats};
use crate::{Error, Result};

/// Zero-based index of the embedding layer (FC4).
pub const EMBEDDING_LAYER: usize = 3;

pub const MODEL_FORMAT: &str = "triplet-icp/model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(outputs: usize, activation: Activation) -> Self {
        LayerSpec { outputs, activation }
    }
}

/// FC1-FC3 128 ReLU, FC4 16 ReLU, FC5 `num_classes` softmax.
pub fn classifier_layers(num_classes: usize) -> Vec<LayerSpec> {
    let mut layers = embedder_layers(&[128, 128, 128, 16]);
    layers[EMBEDDING_LAYER].activation = Activation::Relu;
    layers.push(LayerSpec::new(num_classes, Activation::Softmax));
    layers
}

/// Hidden ReLU layers with a linear final (embedding) layer.
pub fn embedder_layers(widths: &[usize]) -> Vec<LayerSpec> {
    let last = widths.len().saturating_sub(1);
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let act = if i == last { Activation::None } else { Activation::Relu };
            LayerSpec::new(w, act)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn affine(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }
}

fn activate(activation: Activation, pre: &Array2<f64>) -> Array2<f64> {
    match activation {
        Activation::Relu => pre.mapv(|z| z.max(0.0)),
        Activation::None => pre.clone(),
        Activation::Softmax => {
            let mut out = pre.clone();
            for mut row in out.rows_mut() {
                softmax_in_place(row.as_slice_mut().expect("row-major"));
            }
            out
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Cached per-layer values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Array2<f64>,
    /// Affine outputs, one per evaluated layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activation outputs, one per evaluated layer.
    pub post: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().unwrap_or(&self.input)
    }

    /// The cached values of a subset of the batch rows.
    pub fn select_rows(&self, rows: &[usize]) -> Activations {
        let pick = |a: &Array2<f64>| a.select(Axis(0), rows);
        Activations {
            input: pick(&self.input),
            pre: self.pre.iter().map(pick).collect(),
            post: self.post.iter().map(pick).collect(),
        }
    }
}

/// Parameter gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub labels: LabelMap,
    /// Statistics applied to raw inputs before the first layer, if any.
    pub normalization: Option<NormalizationStats>,
    /// Free-form provenance (training configuration, split seed, data hash).
    pub metadata: BTreeMap<String, String>,
}

/// He-initialised weights (zero-mean Gaussian, std `sqrt(2 / inputs)`) and
/// zero biases. Softmax output layers start at zero so the initial
/// prediction is uniform.
pub fn init_model(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<MlpModel> {
    if input_dim == 0 || specs.is_empty() || specs.iter().any(|s| s.outputs == 0) {
        return Err(Error::InvalidArgument("layer sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = input_dim;
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let weights = if spec.activation == Activation::Softmax {
            Array2::zeros((spec.outputs, inputs))
        } else {
            let normal =
                Normal::new(0.0, (2.0 / inputs as f64).sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Array2::from_shape_simple_fn((spec.outputs, inputs), || normal.sample(&mut rng))
        };
        layers.push(Layer {
            weights,
            bias: Array1::zeros(spec.outputs),
            activation: spec.activation,
        });
        inputs = spec.outputs;
    }
    MlpModel::new(layers)
}

impl MlpModel {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let model = MlpModel {
            layers,
            labels: LabelMap::default(),
            normalization: None,
            metadata: BTreeMap::new(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Model(format!("layer {i}: bias length does not match outputs")));
            }
            if i > 0 && layer.inputs() != self.layers[i - 1].outputs() {
                return Err(Error::Model(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.inputs(),
                    i - 1,
                    self.layers[i - 1].outputs()
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Model(format!("softmax on hidden layer {i}")));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Model(format!("layer {i} has non-finite parameters")));
            }
        }
        if let Some(stats) = &self.normalization {
            if stats.dim() != self.input_dim() {
                return Err(Error::Model("normalization width does not match inputs".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn embedding_dim(&self) -> Result<usize> {
        self.check_embedder()?;
        Ok(self.layers[EMBEDDING_LAYER].outputs())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Size of the stored weights and biases as `f64`s.
    pub fn parameter_bytes(&self) -> usize {
        self.num_parameters() * std::mem::size_of::<f64>()
    }

    pub fn is_classifier(&self) -> bool {
        self.layers.last().map(|l| l.activation) == Some(Activation::Softmax)
    }

    fn check_embedder(&self) -> Result<()> {
        if self.layers.len() <= EMBEDDING_LAYER {
            return Err(Error::Model(format!(
                "embedding needs at least {} layers, model has {}",
                EMBEDDING_LAYER + 1,
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Forward pass through layers `0..=last`, caching pre-activations.
    pub fn forward_to(&self, x: ArrayView2<f64>, last: usize) -> Result<Activations> {
        self.check_batch(&x)?;
        if last >= self.layers.len() {
            return Err(Error::InvalidArgument(format!("layer {last} out of range")));
        }
        let mut pre = Vec::with_capacity(last + 1);
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(last + 1);
        for layer in &self.layers[..=last] {
            let z = match post.last() {
                Some(h) => layer.affine(&h.view()),
                None => layer.affine(&x),
            };
            post.push(activate(layer.activation, &z));
            pre.push(z);
        }
        Ok(Activations {
            input: x.to_owned(),
            pre,
            post,
        })
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Activations> {
        self.forward_to(x, self.layers.len() - 1)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Activations> {
        self.forward_batch(row_view(x))
    }

    /// FC4 affine output, one embedding per input row.
    pub fn embed_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_embedder()?;
        let mut acts = self.forward_to(x, EMBEDDING_LAYER)?;
        Ok(acts.pre.pop().expect("at least one layer"))
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_batch(row_view(x))?.into_raw_vec_and_offset().0)
    }

    /// Class probabilities from the softmax output layer.
    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.classify_batch(row_view(x))?.into_raw_vec_and_offset().0)
    }

    pub fn classify_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if !self.is_classifier() {
            return Err(Error::Model("model does not end in a softmax layer".into()));
        }
        let mut acts = self.forward_batch(x)?;
        Ok(acts.post.pop().expect("at least one layer"))
    }

    /// Reverse-mode gradients given `upstream`, the gradient of a scalar
    /// objective with respect to the pre-activation output of layer `layer`
    /// (one row per sample of the cached batch). Layers above `layer` get
    /// zero gradients. ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, acts: &Activations, layer: usize, upstream: ArrayView2<f64>) -> Result<Gradients> {
        if layer >= acts.pre.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} was not evaluated in the forward pass"
            )));
        }
        if upstream.dim() != acts.pre[layer].dim() {
            return Err(Error::InvalidArgument(format!(
                "upstream gradient shape {:?} does not match layer output {:?}",
                upstream.dim(),
                acts.pre[layer].dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_owned();
        for l in (0..=layer).rev() {
            let input = if l == 0 { &acts.input } else { &acts.post[l - 1] };
            grads.weights[l] = delta.t().dot(input);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let mut d_input = delta.dot(&self.layers[l].weights);
            match self.layers[l - 1].activation {
                Activation::Relu => {
                    ndarray::Zip::from(&mut d_input)
                        .and(&acts.pre[l - 1])
                        .for_each(|g, &z| {
                            if z <= 0.0 {
                                *g = 0.0;
                            }
                        });
                }
                Activation::None => {}
                Activation::Softmax => return Err(Error::Model("cannot backpropagate through hidden softmax".into())),
            }
            delta = d_input;
        }
        Ok(grads)
    }

    /// `w <- w - learning_rate * grad` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(Error::InvalidArgument("gradient layer count mismatch".into()));
        }
        for ((layer, gw), gb) in self.layers.iter().zip(&grads.weights).zip(&grads.biases) {
            if gw.dim() != layer.weights.dim() || gb.len() != layer.bias.len() {
                return Err(Error::InvalidArgument("gradient shape mismatch".into()));
            }
        }
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            layer.weights.scaled_add(-learning_rate, gw);
            layer.bias.scaled_add(-learning_rate, gb);
        }
        Ok(())
    }

    /// Applies the stored normalization (if any) to a raw input row.
    pub fn prepare_input(&self, raw: &[f64]) -> Result<Vec<f64>> {
        match &self.normalization {
            Some(stats) => stats.applied(raw),
            None => {
                if raw.len() != self.input_dim() {
                    return Err(Error::Dimension {
                        expected: self.input_dim(),
                        actual: raw.len(),
                    });
                }
                Ok(raw.to_vec())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            input_dim: self.input_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            labels: self.labels.clone(),
            normalization: self.normalization.clone(),
            metadata: self.metadata.clone(),
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Artifact(format!("not a model file (format {:?})", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            if l.weights.len() != l.outputs || l.weights.iter().any(|r| r.len() != l.inputs) {
                return Err(Error::Artifact(format!("layer {i}: weight matrix shape is corrupt")));
            }
            let flat: Vec<f64> = l.weights.into_iter().flatten().collect();
            let weights =
                Array2::from_shape_vec((l.outputs, l.inputs), flat).map_err(|e| Error::Artifact(e.to_string()))?;
            layers.push(Layer {
                weights,
                bias: Array1::from(l.bias),
                activation: l.activation,
            });
        }
        let mut model = MlpModel::new(layers).map_err(|e| Error::Artifact(e.to_string()))?;
        if model.input_dim() != file.input_dim {
            return Err(Error::Artifact("input dimension does not match first layer".into()));
        }
        model.labels = file.labels;
        model.normalization = file.normalization;
        model.metadata = file.metadata;
        model.validate().map_err(|e| Error::Artifact(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    MlpModel::load(path)
}

/// Copies a flat row of samples into a batch of one row.
pub fn row_view(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice")
}

/// Stacks equal-length rows into a matrix.
pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Array2<f64>> {
    let mut flat = Vec::new();
    let mut width = None;
    let mut n = 0;
    for row in rows {
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Dimension {
                    expected: w,
                    actual: row.len(),
                })
            }
            _ => {}
        }
        flat.extend_from_slice(row);
        n += 1;
    }
    Array2::from_shape_vec((n, width.unwrap_or(0)), flat).map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    input_dim: usize,
    layers: Vec<LayerFile>,
    labels: LabelMap,
    normalization: Option<NormalizationStats>,
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

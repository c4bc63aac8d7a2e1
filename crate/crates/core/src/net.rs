//! Fully connected ReLU networks with a scalar linear readout.
//!
//! The analyzed class is the two-layer network
//! `N(x) = sum_j v_j * relu(w_j . x + b_j)`. Deeper networks (one or more
//! extra hidden layers) are supported for training experiments only; the
//! certification and univariate tooling rejects them.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fill_inputs, InputDistribution};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Value used for the ReLU derivative at an exactly-zero pre-activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReluSubgradient(f64);

impl ReluSubgradient {
    pub fn new(at_zero: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&at_zero) {
            return Err(Error::InvalidArgument(format!(
                "relu subgradient at zero must lie in [0, 1], got {at_zero}"
            )));
        }
        Ok(Self(at_zero))
    }

    pub fn at_zero(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else if z < 0.0 {
            0.0
        } else {
            self.0
        }
    }
}

impl Default for ReluSubgradient {
    fn default() -> Self {
        Self(0.0)
    }
}

/// One hidden layer: `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>) -> Self {
        Self { weights, biases }
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            weights: &self.weights * c,
            biases: &self.biases * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    output_weights: Array1<f64>,
    output_weights_trainable: bool,
    bias_trainable: bool,
}

/// Gradient of the scalar network output, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
    pub output_weights: Array1<f64>,
}

impl Network {
    /// Two-layer network `sum_j v_j relu(w_j . x + b_j)`; rows of
    /// `hidden_weights` are the `w_j`.
    pub fn two_layer(
        hidden_weights: Array2<f64>,
        biases: Array1<f64>,
        output_weights: Array1<f64>,
    ) -> Result<Self> {
        Self::from_layers(vec![Layer::new(hidden_weights, biases)], output_weights)
    }

    /// Two-layer network without bias terms (biases fixed at zero and
    /// excluded from the trainable parameters).
    pub fn bias_free(hidden_weights: Array2<f64>, output_weights: Array1<f64>) -> Result<Self> {
        let n = hidden_weights.nrows();
        Self::two_layer(hidden_weights, Array1::zeros(n), output_weights)?
            .with_bias_trainable(false)
    }

    pub fn from_layers(layers: Vec<Layer>, output_weights: Array1<f64>) -> Result<Self> {
        let net = Self {
            layers,
            output_weights,
            output_weights_trainable: true,
            bias_trainable: true,
        };
        net.validate()?;
        Ok(net)
    }

    /// Freeze the output weights. They must all be `+1` or `-1`.
    pub fn with_fixed_output_weights(mut self) -> Result<Self> {
        self.output_weights_trainable = false;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bias_trainable(mut self, trainable: bool) -> Result<Self> {
        self.bias_trainable = trainable;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork(
                "at least one hidden layer required".into(),
            ));
        }
        let mut prev = self.layers[0].input_dim();
        if prev == 0 {
            return Err(Error::InvalidNetwork(
                "input dimension must be positive".into(),
            ));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.input_dim() != prev {
                return Err(Error::InvalidNetwork(format!(
                    "layer {l} expects input width {}, previous layer has width {prev}",
                    layer.input_dim()
                )));
            }
            if layer.biases.len() != layer.width() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {l} has {} biases for {} neurons",
                    layer.biases.len(),
                    layer.width()
                )));
            }
            if layer
                .weights
                .iter()
                .chain(layer.biases.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidNetwork(format!(
                    "layer {l} has non-finite entries"
                )));
            }
            if !self.bias_trainable && layer.biases.iter().any(|&b| b != 0.0) {
                return Err(Error::InvalidNetwork(
                    "bias-free network must have all biases equal to zero".into(),
                ));
            }
            prev = layer.width();
        }
        if self.output_weights.len() != prev {
            return Err(Error::InvalidNetwork(format!(
                "{} output weights for last hidden width {prev}",
                self.output_weights.len()
            )));
        }
        if self.output_weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidNetwork("non-finite output weights".into()));
        }
        if !self.output_weights_trainable
            && self.output_weights.iter().any(|&v| v != 1.0 && v != -1.0)
        {
            return Err(Error::InvalidNetwork(
                "fixed output weights must all be +1 or -1".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Width of the last hidden layer (the `n` of the two-layer model).
    pub fn width(&self) -> usize {
        self.output_weights.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::width).collect()
    }

    /// Number of weight layers, counting the readout: 2 for the analyzed class.
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_weights(&self) -> &Array1<f64> {
        &self.output_weights
    }

    pub fn output_weights_trainable(&self) -> bool {
        self.output_weights_trainable
    }

    pub fn bias_trainable(&self) -> bool {
        self.bias_trainable
    }

    /// First-layer weights (rows `w_j`).
    pub fn hidden_weights(&self) -> &Array2<f64> {
        &self.layers[0].weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.layers[0].biases
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn require_two_layer(&self) -> Result<()> {
        if self.depth() != 2 {
            return Err(Error::UnsupportedDepth(self.depth()));
        }
        Ok(())
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: ArrayView1<f64>) -> f64 {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = layer.weights.dot(&a);
            z += &layer.biases;
            z.mapv_inplace(relu);
            a = z;
        }
        self.output_weights.dot(&a)
    }

    /// Outputs for every row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let mut a = inputs.to_owned();
        for layer in &self.layers {
            let mut z = a.dot(&layer.weights.t());
            z += &layer.biases;
            z.mapv_inplace(relu);
            a = z;
        }
        Ok(a.dot(&self.output_weights))
    }

    /// Exact gradient of `N(x)` with respect to every parameter (including
    /// frozen ones; callers mask with the trainable flags).
    pub fn forward_grad(&self, x: ArrayView1<f64>, subgrad: ReluSubgradient) -> Result<Gradient> {
        self.check_input(x)?;
        let mut activations = vec![x.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.weights.dot(activations.last().unwrap()) + &layer.biases;
            activations.push(z.mapv(relu));
            pre.push(z);
        }
        let output_grad = activations.last().unwrap().clone();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut upstream = self.output_weights.clone();
        for l in (0..self.layers.len()).rev() {
            let delta = &upstream * &pre[l].mapv(|z| subgrad.derivative(z));
            let input = &activations[l];
            let w_grad = delta
                .view()
                .insert_axis(Axis(1))
                .dot(&input.view().insert_axis(Axis(0)));
            if l > 0 {
                upstream = self.layers[l].weights.t().dot(&delta);
            }
            layer_grads.push(Layer::new(w_grad, delta));
        }
        layer_grads.reverse();
        Ok(Gradient {
            layers: layer_grads,
            output_weights: output_grad,
        })
    }

    /// Squared Euclidean norm of all parameters.
    pub fn param_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weights
                    .iter()
                    .chain(l.biases.iter())
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            + self.output_weights.dot(&self.output_weights)
    }

    /// Squared norm of the trainable parameters only; this is the objective
    /// of the margin problem when some parameters are frozen.
    pub fn trainable_norm_sq(&self) -> f64 {
        self.to_trainable_vec().iter().map(|v| v * v).sum()
    }

    /// Trainable parameters flattened: per layer weights (row-major) then
    /// biases, then output weights.
    pub fn to_trainable_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            if self.bias_trainable {
                out.extend(layer.biases.iter());
            }
        }
        if self.output_weights_trainable {
            out.extend(self.output_weights.iter());
        }
        out
    }

    /// Flatten a gradient with the same trainable mask as
    /// [`Network::to_trainable_vec`].
    pub fn flatten_trainable(&self, grad: &Gradient) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &grad.layers {
            out.extend(layer.weights.iter());
            if self.bias_trainable {
                out.extend(layer.biases.iter());
            }
        }
        if self.output_weights_trainable {
            out.extend(grad.output_weights.iter());
        }
        out
    }

    /// Homogeneity degree of the output in the trainable parameters.
    pub fn homogeneity_degree(&self) -> Result<u32> {
        self.require_two_layer()?;
        Ok(if self.output_weights_trainable { 2 } else { 1 })
    }

    /// Multiply every trainable parameter by `c`.
    pub fn scale_trainable(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.layers = self.layers.iter().map(|l| l.scaled(c)).collect();
        if !self.bias_trainable {
            for l in &mut out.layers {
                l.biases.fill(0.0);
            }
        }
        if self.output_weights_trainable {
            out.output_weights = &self.output_weights * c;
        }
        out
    }

    /// Rescale so the smallest margin `min_i y_i N(x_i)` equals one, using
    /// positive homogeneity of the two-layer model.
    pub fn rescale_to_unit_margin(&self, inputs: ArrayView2<f64>, labels: &[f64]) -> Result<Self> {
        let degree = self.homogeneity_degree()?;
        let outputs = self.forward_batch(inputs)?;
        let (index, margin) = min_margin(&outputs, labels);
        if !(margin > 0.0) {
            return Err(Error::NotInterpolating { index, margin });
        }
        let c = if degree == 2 {
            margin.sqrt().recip()
        } else {
            margin.recip()
        };
        Ok(self.scale_trainable(c))
    }

    /// `sum_j v_j relu(b_j)`, the output's constant component at the origin.
    pub fn bias_sum(&self) -> Result<f64> {
        self.require_two_layer()?;
        Ok(self
            .output_weights
            .iter()
            .zip(self.biases().iter())
            .map(|(v, b)| v * relu(*b))
            .sum())
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            schema_version: NETWORK_SCHEMA_VERSION,
            d: self.input_dim(),
            depth: self.depth(),
            widths: self.widths(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
                    biases: l.biases.to_vec(),
                })
                .collect(),
            output_weights: self.output_weights.to_vec(),
            output_weights_trainable: self.output_weights_trainable,
            bias_trainable: self.bias_trainable,
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        if file.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(Error::InvalidNetwork(format!(
                "unsupported schema version {}",
                file.schema_version
            )));
        }
        if file.layers.len() + 1 != file.depth || file.widths.len() != file.layers.len() {
            return Err(Error::InvalidNetwork("depth/widths/layers disagree".into()));
        }
        let mut prev = file.d;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (lf, &w) in file.layers.into_iter().zip(&file.widths) {
            if lf.weights.len() != w || lf.weights.iter().any(|r| r.len() != prev) {
                return Err(Error::InvalidNetwork(
                    "weight matrix shape disagrees with widths".into(),
                ));
            }
            let flat: Vec<f64> = lf.weights.into_iter().flatten().collect();
            let weights = Array2::from_shape_vec((w, prev), flat)
                .map_err(|e| Error::InvalidNetwork(e.to_string()))?;
            layers.push(Layer::new(weights, Array1::from(lf.biases)));
            prev = w;
        }
        let net = Self {
            layers,
            output_weights: Array1::from(file.output_weights),
            output_weights_trainable: file.output_weights_trainable,
            bias_trainable: file.bias_trainable,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk network document. Floats are written in shortest round-trip form
/// so a load reproduces the parameters bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub schema_version: u32,
    pub d: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerFile>,
    pub output_weights: Vec<f64>,
    pub output_weights_trainable: bool,
    #[serde(default = "default_true")]
    pub bias_trainable: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerFile {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Index and value of `min_i y_i * outputs_i`.
pub fn min_margin(outputs: &Array1<f64>, labels: &[f64]) -> (usize, f64) {
    outputs
        .iter()
        .zip(labels)
        .map(|(o, y)| o * y)
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, m)| if m < acc.1 { (i, m) } else { acc },
        )
}

/// Monte Carlo estimate of a probability with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub point_estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ErrorEstimate {
    pub fn from_counts(hits: usize, n_samples: usize) -> Self {
        let p = hits as f64 / n_samples as f64;
        Self {
            point_estimate: p,
            std_error: (p * (1.0 - p) / n_samples as f64).sqrt(),
            n_samples,
        }
    }
}

/// Number of independent substreams a Monte Carlo budget is split into.
/// Fixed so the estimate does not depend on the thread pool size.
pub const MC_LANES: usize = 16;
const MC_CHUNK: usize = 2048;

/// Estimate `Pr[event(x)]` for `x` drawn from `dist`, where `event` sees a
/// chunk of inputs (rows) and returns how many satisfy it.
pub fn monte_carlo_count<F>(
    d: usize,
    dist: InputDistribution,
    n_samples: usize,
    seed: u64,
    count_chunk: F,
) -> ErrorEstimate
where
    F: Fn(ArrayView2<f64>) -> usize + Sync,
{
    let hits: usize = (0..MC_LANES)
        .into_par_iter()
        .map(|lane| {
            let quota = n_samples / MC_LANES + usize::from(lane < n_samples % MC_LANES);
            let mut rng = derived_rng(seed, &[0x4d43, lane as u64]);
            let mut remaining = quota;
            let mut hits = 0;
            let mut buf = Array2::<f64>::zeros((MC_CHUNK.min(quota.max(1)), d));
            while remaining > 0 {
                let rows = remaining.min(MC_CHUNK);
                let mut chunk = buf.slice_mut(ndarray::s![..rows, ..]);
                fill_inputs(&mut rng, dist, &mut chunk);
                hits += count_chunk(chunk.view());
                remaining -= rows;
            }
            hits
        })
        .sum();
    ErrorEstimate::from_counts(hits, n_samples)
}

/// Monte Carlo estimate of the clean error `Pr[N(x) <= 0]`: uniform on the
/// unit sphere for `d >= 2`, uniform on `[0, 1]` for `d = 1`.
pub fn clean_error_mc(net: &Network, n_samples: usize, seed: u64) -> Result<ErrorEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let d = net.input_dim();
    let dist = InputDistribution::for_dim(d);
    Ok(monte_carlo_count(d, dist, n_samples, seed, |xs| {
        net.forward_batch(xs)
            .expect("chunk width matches network")
            .iter()
            .filter(|&&o| o <= 0.0)
            .count()
    }))
}

/// Draw a parameter-sized normal perturbation; used by tests and examples
/// to build random networks.
pub fn random_two_layer<R: Rng>(rng: &mut R, d: usize, n: usize, scale: f64) -> Network {
    use rand_distr::StandardNormal;
    let w = Array2::from_shape_fn((n, d), |_| scale * rng.sample::<f64, _>(StandardNormal));
    let b = Array1::from_shape_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal));
    let v = Array1::from_shape_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal));
    Network::two_layer(w, b, v).expect("finite random parameters")
}

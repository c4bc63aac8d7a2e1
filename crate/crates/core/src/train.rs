//! Plain (stochastic) gradient descent on the logistic or exponential loss.
//!
//! Two-layer networks with `d > m` are trained in a span representation:
//! every gradient of the hidden weights is a combination of the training
//! inputs, so `W = W0 + A X` with `A` an `n x m` coefficient matrix. Forward
//! passes then cost `O(n m^2)` instead of `O(n m d)` per epoch and the
//! iterates are the same as the direct parameterization up to rounding.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{min_margin, relu, Layer, Network, ReluSubgradient};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Exponential,
}

impl Loss {
    /// `l(z)` in a form that does not overflow for large `|z|` (logistic).
    pub fn value(self, z: f64) -> f64 {
        match self {
            Loss::Logistic => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
            Loss::Exponential => (-z).exp(),
        }
    }

    /// `l'(z)`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Loss::Logistic => {
                if z > 0.0 {
                    let e = (-z).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + z.exp())
                }
            }
            Loss::Exponential => -(-z).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    MiniBatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Initial placement of the first-layer biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    Zero,
    /// `b_j = -w_j u_j` with `u_j ~ Unif[0, 1]`, so for d = 1 every kink
    /// starts inside the data interval.
    SpreadKinks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanMode {
    /// Use the span representation for two-layer nets whenever `d > m`.
    Auto,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: Batch,
    pub reduction: Reduction,
    pub width: usize,
    pub depth: usize,
    pub init_scale: f64,
    /// Scale of the initial output weights when they are trainable; `None`
    /// means `1 / sqrt(width)`.
    pub output_init_scale: Option<f64>,
    pub bias_init: BiasInit,
    pub output_weights_trainable: bool,
    pub bias_trainable: bool,
    pub subgradient: ReluSubgradient,
    pub span_mode: SpanMode,
    pub checkpoint_every: Option<usize>,
    /// End the run at the first epoch with zero training errors.
    pub stop_at_interpolation: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Logistic,
            learning_rate: 0.1,
            epochs: 20_000,
            batch: Batch::Full,
            reduction: Reduction::Mean,
            width: 100,
            depth: 2,
            init_scale: 1.0,
            output_init_scale: None,
            bias_init: BiasInit::Zero,
            output_weights_trainable: true,
            bias_trainable: true,
            subgradient: ReluSubgradient::default(),
            span_mode: SpanMode::Auto,
            checkpoint_every: None,
            stop_at_interpolation: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.width < 2 {
            return bad("width must be at least 2".into());
        }
        if !(2..=3).contains(&self.depth) {
            return bad(format!("depth must be 2 or 3, got {}", self.depth));
        }
        if !self.output_weights_trainable && !self.width.is_multiple_of(2) {
            return bad("fixed balanced output weights need an even width".into());
        }
        if let Batch::MiniBatch(0) = self.batch {
            return bad("minibatch size must be positive".into());
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be finite and non-negative".into());
        }
        if let Some(0) = self.checkpoint_every {
            return bad("checkpoint interval must be positive".into());
        }
        Ok(())
    }

    /// Initial network for inputs of dimension `d`.
    pub fn init_network(&self, d: usize) -> Result<Network> {
        self.validate()?;
        let mut rng = derived_rng(self.seed, &[0x11]);
        let n = self.width;
        let w_scale = self.init_scale / (d as f64).sqrt();
        let w = Array2::from_shape_fn((n, d), |_| w_scale * rng.sample::<f64, _>(StandardNormal));
        let b = match self.bias_init {
            BiasInit::Zero => Array1::zeros(n),
            BiasInit::SpreadKinks => Array1::from_shape_fn(n, |j| -w[[j, 0]] * rng.random::<f64>()),
        };
        let b = if self.bias_trainable {
            b
        } else {
            Array1::zeros(n)
        };
        let mut layers = vec![Layer::new(w, b)];
        if self.depth == 3 {
            let s = self.init_scale / (n as f64).sqrt();
            let w2 = Array2::from_shape_fn((n, n), |_| s * rng.sample::<f64, _>(StandardNormal));
            layers.push(Layer::new(w2, Array1::zeros(n)));
        }
        let v = if self.output_weights_trainable {
            let s = self.output_init_scale.unwrap_or(1.0 / (n as f64).sqrt());
            Array1::from_shape_fn(n, |_| s * rng.sample::<f64, _>(StandardNormal))
        } else {
            Array1::from_shape_fn(n, |j| if j < n / 2 { 1.0 } else { -1.0 })
        };
        let mut net = Network::from_layers(layers, v)?;
        if !self.bias_trainable {
            net = net.with_bias_trainable(false)?;
        }
        if !self.output_weights_trainable {
            net = net.with_fixed_output_weights()?;
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub train_errors: usize,
    /// Summed over samples, whatever the training reduction.
    pub loss: f64,
    pub min_margin: f64,
    /// `min_margin / ||theta||^k` with `k` the homogeneity degree in the
    /// trainable parameters (2 for the default two-layer model).
    pub norm_margin: f64,
    pub norm_sq: f64,
    pub bias_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub network: Network,
    pub interpolation_epoch: Option<usize>,
    pub checkpoints: Vec<(usize, Network)>,
    pub status: TrainStatus,
}

impl TrainTrace {
    pub fn final_record(&self) -> &TraceRecord {
        self.records
            .last()
            .expect("trace always holds the initial record")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        self.write_csv_to(&mut f)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "train_errors",
            "loss",
            "min_margin",
            "norm_margin",
            "norm_sq",
            "bias_sum",
        ])?;
        for r in &self.records {
            w.write_record(&[
                r.epoch.to_string(),
                r.train_errors.to_string(),
                r.loss.to_string(),
                r.min_margin.to_string(),
                r.norm_margin.to_string(),
                r.norm_sq.to_string(),
                r.bias_sum.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Epochs at which a trace record is kept: every epoch up to 100, then every
/// 100th, plus the last.
pub fn is_log_epoch(epoch: usize, last: usize) -> bool {
    epoch <= 100 || epoch.is_multiple_of(100) || epoch == last
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interpolation {
    pub flag: bool,
    pub worst_index: usize,
    pub worst_margin: f64,
}

pub fn interpolates(net: &Network, ds: &Dataset) -> Result<Interpolation> {
    let out = net.forward_batch(ds.inputs())?;
    let (worst_index, worst_margin) = min_margin(&out, ds.labels());
    Ok(Interpolation {
        flag: worst_margin > 0.0,
        worst_index,
        worst_margin,
    })
}

/// Train from the configured initialization.
pub fn train(config: &TrainConfig, ds: &Dataset) -> Result<TrainTrace> {
    let net = config.init_network(ds.d())?;
    train_from(config, ds, net)
}

/// Train starting from a given network (its trainable flags must match the
/// configuration).
pub fn train_from(config: &TrainConfig, ds: &Dataset, init: Network) -> Result<TrainTrace> {
    config.validate()?;
    if init.input_dim() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: init.input_dim(),
            got: ds.d(),
        });
    }
    if init.output_weights_trainable() != config.output_weights_trainable
        || init.bias_trainable() != config.bias_trainable
    {
        return Err(Error::InvalidArgument(
            "initial network trainable flags disagree with the configuration".into(),
        ));
    }
    let use_span = config.span_mode == SpanMode::Auto && init.depth() == 2 && ds.d() > ds.m();
    let mut state = if use_span {
        Params::span(&init, ds)
    } else {
        Params::direct(&init)
    };
    Trainer {
        config,
        ds,
        template: init,
    }
    .run(&mut state)
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    ds: &'a Dataset,
    template: Network,
}

/// Output of one batched forward pass.
struct Forward {
    /// Pre-activations per hidden layer, `rows x width`.
    pre: Vec<Array2<f64>>,
    outputs: Array1<f64>,
}

enum Params {
    Direct {
        layers: Vec<Layer>,
        v: Array1<f64>,
    },
    Span {
        w0: Array2<f64>,
        /// `X W0^T`, `m x n`.
        p0: Array2<f64>,
        gram: Array2<f64>,
        /// Span coefficients, `n x m`.
        coef: Array2<f64>,
        b: Array1<f64>,
        v: Array1<f64>,
        inputs: Array2<f64>,
    },
}

impl Params {
    fn direct(net: &Network) -> Self {
        Params::Direct {
            layers: net.layers().to_vec(),
            v: net.output_weights().clone(),
        }
    }

    fn span(net: &Network, ds: &Dataset) -> Self {
        let x = ds.inputs().to_owned();
        let w0 = net.hidden_weights().clone();
        Params::Span {
            p0: x.dot(&w0.t()),
            gram: x.dot(&x.t()),
            coef: Array2::zeros((net.width(), ds.m())),
            b: net.biases().clone(),
            v: net.output_weights().clone(),
            w0,
            inputs: x,
        }
    }

    fn output_weights(&self) -> &Array1<f64> {
        match self {
            Params::Direct { v, .. } | Params::Span { v, .. } => v,
        }
    }

    /// Forward pass on the rows `rows` of the training set (all rows when
    /// `None`).
    fn forward(&self, ds: &Dataset, rows: Option<&[usize]>) -> Forward {
        match self {
            Params::Direct { layers, v } => {
                let mut a = match rows {
                    None => ds.inputs().to_owned(),
                    Some(r) => ds.inputs().select(Axis(0), r),
                };
                let mut pre = Vec::with_capacity(layers.len());
                for layer in layers {
                    let mut z = a.dot(&layer.weights.t());
                    z += &layer.biases;
                    a = z.mapv(relu);
                    pre.push(z);
                }
                Forward {
                    outputs: a.dot(v),
                    pre,
                }
            }
            Params::Span {
                p0,
                gram,
                coef,
                b,
                v,
                ..
            } => {
                let mut z = match rows {
                    None => p0 + &gram.dot(&coef.t()),
                    Some(r) => p0.select(Axis(0), r) + &gram.select(Axis(0), r).dot(&coef.t()),
                };
                z += b;
                let outputs = z.mapv(relu).dot(v);
                Forward {
                    pre: vec![z],
                    outputs,
                }
            }
        }
    }

    /// One descent step given `dL/dN` per batch row.
    fn step(
        &mut self,
        ds: &Dataset,
        rows: Option<&[usize]>,
        fwd: &Forward,
        dout: &Array1<f64>,
        cfg: &TrainConfig,
    ) -> bool {
        let lr = cfg.learning_rate;
        let sg = cfg.subgradient;
        match self {
            Params::Direct { layers, v } => {
                let input = match rows {
                    None => ds.inputs().to_owned(),
                    Some(r) => ds.inputs().select(Axis(0), r),
                };
                let acts: Vec<Array2<f64>> = fwd.pre.iter().map(|z| z.mapv(relu)).collect();
                let dv = acts.last().unwrap().t().dot(dout);
                let mut delta = outer_masked(dout, v, fwd.pre.last().unwrap(), sg);
                let mut grads = Vec::with_capacity(layers.len());
                for l in (0..layers.len()).rev() {
                    let a_prev = if l == 0 { &input } else { &acts[l - 1] };
                    let dw = delta.t().dot(a_prev);
                    let db = delta.sum_axis(Axis(0));
                    if l > 0 {
                        let mut up = delta.dot(&layers[l].weights);
                        Zip::from(&mut up)
                            .and(&fwd.pre[l - 1])
                            .for_each(|u, &z| *u *= sg.derivative(z));
                        delta = up;
                    }
                    grads.push((dw, db));
                }
                grads.reverse();
                let finite = dv.iter().all(|g| g.is_finite())
                    && grads
                        .iter()
                        .all(|(w, b)| w.iter().chain(b.iter()).all(|g| g.is_finite()));
                if !finite {
                    return false;
                }
                for (layer, (dw, db)) in layers.iter_mut().zip(grads) {
                    layer.weights.scaled_add(-lr, &dw);
                    if cfg.bias_trainable {
                        layer.biases.scaled_add(-lr, &db);
                    }
                }
                if cfg.output_weights_trainable {
                    v.scaled_add(-lr, &dv);
                }
                true
            }
            Params::Span { coef, b, v, .. } => {
                let z = &fwd.pre[0];
                let dv = z.mapv(relu).t().dot(dout);
                let delta = outer_masked(dout, v, z, sg);
                let db = delta.sum_axis(Axis(0));
                if !(dv.iter().chain(db.iter()).all(|g| g.is_finite())
                    && delta.iter().all(|g| g.is_finite()))
                {
                    return false;
                }
                match rows {
                    None => coef.scaled_add(-lr, &delta.t()),
                    Some(r) => {
                        for (k, &i) in r.iter().enumerate() {
                            coef.column_mut(i).scaled_add(-lr, &delta.row(k));
                        }
                    }
                }
                if cfg.bias_trainable {
                    b.scaled_add(-lr, &db);
                }
                if cfg.output_weights_trainable {
                    v.scaled_add(-lr, &dv);
                }
                true
            }
        }
    }

    fn hidden_norm_sq(&self) -> f64 {
        match self {
            Params::Direct { layers, .. } => layers
                .iter()
                .map(|l| {
                    l.weights
                        .iter()
                        .chain(l.biases.iter())
                        .map(|x| x * x)
                        .sum::<f64>()
                })
                .sum(),
            Params::Span {
                w0,
                p0,
                gram,
                coef,
                b,
                ..
            } => {
                let w0_sq: f64 = w0.iter().map(|x| x * x).sum();
                let cross: f64 = Zip::from(coef)
                    .and(&p0.t())
                    .fold(0.0, |acc, &a, &p| acc + a * p);
                let quad: f64 = Zip::from(&coef.dot(gram))
                    .and(coef)
                    .fold(0.0, |acc, &ag, &a| acc + ag * a);
                (w0_sq + 2.0 * cross + quad).max(0.0) + b.dot(b)
            }
        }
    }

    fn bias_sum(&self) -> f64 {
        match self {
            Params::Direct { layers, v } if layers.len() == 1 => v
                .iter()
                .zip(layers[0].biases.iter())
                .map(|(v, b)| v * relu(*b))
                .sum(),
            Params::Direct { .. } => f64::NAN,
            Params::Span { b, v, .. } => v.iter().zip(b.iter()).map(|(v, b)| v * relu(*b)).sum(),
        }
    }

    fn to_network(&self, template: &Network) -> Result<Network> {
        let (layers, v) = match self {
            Params::Direct { layers, v } => (layers.clone(), v.clone()),
            Params::Span {
                w0,
                coef,
                b,
                v,
                inputs,
                ..
            } => (
                vec![Layer::new(w0 + &coef.dot(inputs), b.clone())],
                v.clone(),
            ),
        };
        let mut net = Network::from_layers(layers, v)?;
        if !template.bias_trainable() {
            net = net.with_bias_trainable(false)?;
        }
        if !template.output_weights_trainable() {
            net = net.with_fixed_output_weights()?;
        }
        Ok(net)
    }
}

/// `delta_ij = dout_i * v_j * relu'(z_ij)`.
fn outer_masked(
    dout: &Array1<f64>,
    v: &Array1<f64>,
    z: &Array2<f64>,
    sg: ReluSubgradient,
) -> Array2<f64> {
    let mut delta = Array2::zeros(z.raw_dim());
    Zip::from(delta.rows_mut())
        .and(z.rows())
        .and(dout)
        .for_each(|mut drow, zrow, &g| {
            Zip::from(&mut drow)
                .and(&zrow)
                .and(v)
                .for_each(|d, &zz, &vj| *d = g * vj * sg.derivative(zz));
        });
    delta
}

impl Trainer<'_> {
    fn record(&self, state: &Params, epoch: usize, fwd: &Forward) -> TraceRecord {
        let labels = self.ds.labels();
        let loss_fn = self.config.loss;
        let mut loss = 0.0;
        let mut errors = 0;
        for (&o, &y) in fwd.outputs.iter().zip(labels) {
            let z = o * y;
            loss += loss_fn.value(z);
            if z <= 0.0 {
                errors += 1;
            }
        }
        let (_, margin) = min_margin(&fwd.outputs, labels);
        let v = state.output_weights();
        let hidden = state.hidden_norm_sq();
        let norm_sq = hidden + v.dot(v);
        let trainable_sq = if self.config.output_weights_trainable {
            norm_sq
        } else {
            hidden
        };
        let degree =
            self.template.depth() as i32 - i32::from(!self.config.output_weights_trainable);
        TraceRecord {
            epoch,
            train_errors: errors,
            loss,
            min_margin: margin,
            norm_margin: margin / trainable_sq.sqrt().powi(degree),
            norm_sq,
            bias_sum: state.bias_sum(),
        }
    }

    fn dloss(&self, outputs: &Array1<f64>, rows: Option<&[usize]>) -> Array1<f64> {
        let labels = self.ds.labels();
        let count = rows.map_or(labels.len(), <[usize]>::len);
        let scale = match self.config.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / count as f64,
        };
        let label = |k: usize| match rows {
            None => labels[k],
            Some(r) => labels[r[k]],
        };
        Array1::from_shape_fn(outputs.len(), |k| {
            let y = label(k);
            scale * y * self.config.loss.derivative(y * outputs[k])
        })
    }

    fn run(&self, state: &mut Params) -> Result<TrainTrace> {
        let cfg = self.config;
        let m = self.ds.m();
        let mut records = Vec::new();
        let mut checkpoints = Vec::new();
        let mut interpolation_epoch = None;
        let mut status = TrainStatus::Completed;
        let mut order: Vec<usize> = (0..m).collect();
        let mut shuffle_rng = derived_rng(cfg.seed, &[0x5f]);

        for epoch in 0..=cfg.epochs {
            let fwd = state.forward(self.ds, None);
            let all_correct = fwd
                .outputs
                .iter()
                .zip(self.ds.labels())
                .all(|(o, y)| o * y > 0.0);
            if all_correct && interpolation_epoch.is_none() {
                interpolation_epoch = Some(epoch);
            }
            let finite = fwd.outputs.iter().all(|o| o.is_finite());
            if is_log_epoch(epoch, cfg.epochs) || !finite {
                records.push(self.record(state, epoch, &fwd));
            }
            if let Some(every) = cfg.checkpoint_every {
                if epoch % every == 0 || epoch == cfg.epochs {
                    checkpoints.push((epoch, state.to_network(&self.template)?));
                }
            }
            if !finite {
                status = TrainStatus::Diverged {
                    epoch,
                    reason: "non-finite network output".into(),
                };
                break;
            }
            if epoch == cfg.epochs || (cfg.stop_at_interpolation && all_correct) {
                if epoch != cfg.epochs && !is_log_epoch(epoch, cfg.epochs) {
                    records.push(self.record(state, epoch, &fwd));
                }
                break;
            }
            let ok = match cfg.batch {
                Batch::Full => {
                    let dout = self.dloss(&fwd.outputs, None);
                    state.step(self.ds, None, &fwd, &dout, cfg)
                }
                Batch::MiniBatch(size) => {
                    order.shuffle(&mut shuffle_rng);
                    let mut ok = true;
                    for chunk in order.chunks(size) {
                        let bf = state.forward(self.ds, Some(chunk));
                        let dout = self.dloss(&bf.outputs, Some(chunk));
                        if !state.step(self.ds, Some(chunk), &bf, &dout, cfg) {
                            ok = false;
                            break;
                        }
                    }
                    ok
                }
            };
            if !ok {
                records.push(self.record(state, epoch, &fwd));
                status = TrainStatus::Diverged {
                    epoch,
                    reason: "non-finite gradient; update skipped".into(),
                };
                break;
            }
        }
        Ok(TrainTrace {
            network: state.to_network(&self.template)?,
            records,
            interpolation_epoch,
            checkpoints,
            status,
        })
    }
}

/// Loss of a network on a dataset, summed over samples.
pub fn empirical_loss(net: &Network, ds: &Dataset, loss: Loss) -> Result<f64> {
    let out = net.forward_batch(ds.inputs())?;
    Ok(out
        .iter()
        .zip(ds.labels())
        .map(|(o, y)| loss.value(o * y))
        .sum())
}

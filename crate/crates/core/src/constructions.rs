//! Hand-built networks: a feasible point of the max-margin problem for
//! nearly orthogonal data, and a bias-free KKT point on exactly orthogonal
//! data whose clean error stays near 1/2.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, InputDistribution};
use crate::error::{Error, Result};
use crate::kkt::{recover_duals, KktReport, CONSTRUCTION_MARGIN_TOL};
use crate::net::{clean_error_mc, monte_carlo_count, ErrorEstimate, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionResult {
    pub net: Network,
    /// `y_i N(x_i)` per sample.
    pub per_sample_margins: Vec<f64>,
    pub min_margin: f64,
    pub norm_sq: f64,
    pub claimed_bound: f64,
    pub bound_satisfied: bool,
    pub bias_sum: f64,
}

fn margins(net: &Network, ds: &Dataset) -> Result<Vec<f64>> {
    let out = net.forward_batch(ds.inputs())?;
    Ok(out.iter().zip(ds.labels()).map(|(o, y)| o * y).collect())
}

/// Width-`n` network with margin about 2 on nearly orthogonal data: the
/// first half of the neurons carry a positive bias and fire away from the
/// negative samples, the second half fire on them. With `K = |I_-|` and
/// `c = sqrt(4 / (n sqrt K))`:
/// `w_j = -c s, v_j = 2 sqrt(sqrt K / n), b_j = c` for `j <= n/2` and
/// `w_j = c s, v_j = -2 sqrt(sqrt K / n), b_j = 0` otherwise, where
/// `s = sum_{i in I_-} x_i`. The reported bound is `9 sqrt K`.
pub fn build_feasible_highdim(ds: &Dataset, n: usize) -> Result<ConstructionResult> {
    let neg = ds.negative_indices();
    if neg.is_empty() {
        return Err(Error::InvalidArgument(
            "construction needs at least one negative label".into(),
        ));
    }
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "width must be positive and even, got {n}"
        )));
    }
    if ds.d() < 2 {
        return Err(Error::InvalidArgument("construction needs d >= 2".into()));
    }
    let k = neg.len() as f64;
    let c = (4.0 / (n as f64 * k.sqrt())).sqrt();
    let v_mag = 2.0 * (k.sqrt() / n as f64).sqrt();
    let s = ds.inputs().select(Axis(0), &neg).sum_axis(Axis(0));
    let half = n / 2;
    let mut w = Array2::zeros((n, ds.d()));
    let mut b = Array1::zeros(n);
    let mut v = Array1::zeros(n);
    for j in 0..n {
        let sign = if j < half { -1.0 } else { 1.0 };
        w.row_mut(j).assign(&(sign * c * &s));
        if j < half {
            b[j] = c;
            v[j] = v_mag;
        } else {
            v[j] = -v_mag;
        }
    }
    let net = Network::two_layer(w, b, v)?;
    let per_sample_margins = margins(&net, ds)?;
    let min_margin = per_sample_margins
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let norm_sq = net.param_norm_sq();
    let claimed_bound = 9.0 * k.sqrt();
    Ok(ConstructionResult {
        bias_sum: net.bias_sum()?,
        bound_satisfied: norm_sq <= claimed_bound * (1.0 + 1e-9),
        net,
        per_sample_margins,
        min_margin,
        norm_sq,
        claimed_bound,
    })
}

/// Which parameterization of the orthogonal KKT construction to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthogonalVariant {
    /// Output weights fixed at +-1; only hidden weights are trained. Every
    /// sample has dual 1.
    FixedOutputs,
    /// Output weights trainable; the positive neuron is rebalanced to
    /// `w = |I_+|^{-1/4} sum x_i`, `v = |I_+|^{1/4}` (same function). Duals
    /// are 1 on `I_-` and `|I_+|^{-1/2}` on `I_+`.
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalKktResult {
    pub net: Network,
    pub per_sample_margins: Vec<f64>,
    pub kkt: KktReport,
    pub mc_error: ErrorEstimate,
    /// `1/2 - 2^{-|I_-|}`.
    pub lower_bound: f64,
}

/// Bias-free network with one neuron `w_i = x_i, v_i = -1` per negative
/// sample and one positive neuron along `sum_{i in I_+} x_i`. Inputs must be
/// unit norm and pairwise orthogonal (to 1e-10).
pub fn build_orthogonal_kkt(
    ds: &Dataset,
    variant: OrthogonalVariant,
    mc_samples: usize,
    seed: u64,
) -> Result<OrthogonalKktResult> {
    let x = ds.inputs();
    let gram = x.dot(&x.t());
    for i in 0..ds.m() {
        for j in 0..ds.m() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[[i, j]] - target).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "inputs must be orthonormal; <x_{i}, x_{j}> = {}",
                    gram[[i, j]]
                )));
            }
        }
    }
    let neg = ds.negative_indices();
    let pos = ds.positive_indices();
    if neg.is_empty() {
        return Err(Error::InvalidArgument(
            "construction needs at least one negative label".into(),
        ));
    }
    if pos.is_empty() {
        return Err(Error::InvalidArgument(
            "construction needs at least one positive label".into(),
        ));
    }
    let k = neg.len();
    let mut w = Array2::zeros((k + 1, ds.d()));
    let mut v = Array1::zeros(k + 1);
    for (r, &i) in neg.iter().enumerate() {
        w.row_mut(r).assign(&x.row(i));
        v[r] = -1.0;
    }
    let s = x.select(Axis(0), &pos).sum_axis(Axis(0));
    let scale = match variant {
        OrthogonalVariant::FixedOutputs => 1.0,
        OrthogonalVariant::Balanced => (pos.len() as f64).powf(0.25),
    };
    w.row_mut(k).assign(&(&s / scale));
    v[k] = scale;
    let net = Network::bias_free(w, v)?;
    let net = match variant {
        OrthogonalVariant::FixedOutputs => net.with_fixed_output_weights()?,
        OrthogonalVariant::Balanced => net,
    };
    let per_sample_margins = margins(&net, ds)?;
    let kkt = recover_duals(&net, ds, CONSTRUCTION_MARGIN_TOL)?;
    let mc_error = clean_error_mc(&net, mc_samples, seed)?;
    Ok(OrthogonalKktResult {
        net,
        per_sample_margins,
        kkt,
        mc_error,
        lower_bound: 0.5 - 0.5f64.powi(k as i32),
    })
}

/// Monte Carlo estimate of `Pr[w_j . x < 0 for all j with v_j >= 0]` on the
/// sphere. On that event a bias-free net is `<= 0`, so this lower-bounds
/// the clean error.
pub fn negative_orthant_mass(net: &Network, n_samples: usize, seed: u64) -> Result<ErrorEstimate> {
    net.require_two_layer()?;
    if net.biases().iter().any(|&b| b != 0.0) {
        return Err(Error::InvalidArgument(
            "negative orthant mass is defined for bias-free nets".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let positive: Vec<usize> = (0..net.width())
        .filter(|&j| net.output_weights()[j] >= 0.0)
        .collect();
    let w_pos = net.hidden_weights().select(Axis(0), &positive);
    let d = net.input_dim();
    Ok(monte_carlo_count(
        d,
        InputDistribution::Sphere,
        n_samples,
        seed,
        |xs| {
            if positive.is_empty() {
                return xs.nrows();
            }
            let proj = xs.dot(&w_pos.t());
            proj.rows()
                .into_iter()
                .filter(|r| r.iter().all(|&p| p < 0.0))
                .count()
        },
    ))
}

/// `m` orthonormal inputs: the first `m` standard basis vectors of `R^d`.
pub fn orthonormal_dataset(d: usize, labels: Vec<f64>) -> Result<Dataset> {
    let m = labels.len();
    if m > d {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {m} orthonormal vectors in R^{d}"
        )));
    }
    let mut x = Array2::zeros((m, d));
    for i in 0..m {
        x[[i, i]] = 1.0;
    }
    Dataset::from_parts(x, labels)
}

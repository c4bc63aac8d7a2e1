//! Distance of a two-layer network from a KKT point of the max-margin
//! problem `min ||theta||^2 / 2  s.t.  y_i N(x_i) >= 1`.
//!
//! Duals are recovered by nonnegative least squares on the samples whose
//! margin is within `margin_tol` of 1, so complementary slackness holds by
//! construction and the residual measures stationarity alone. The normal
//! equations are assembled from activation patterns and the input Gram
//! matrix, which keeps the cost at `O(m^2 (n + d))` instead of forming the
//! `m x |theta|` Jacobian.

use ndarray::{Array1, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{min_margin, relu, Network, ReluSubgradient};
use crate::nnls::{self, NnlsOptions};

pub const TRAINED_MARGIN_TOL: f64 = 1e-3;
pub const CONSTRUCTION_MARGIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// One dual per sample; zero outside the support set.
    pub duals: Vec<f64>,
    pub stationarity_rel_residual: f64,
    pub min_margin: f64,
    /// Smallest dual over the support set (0 when the support is empty).
    pub dual_min: f64,
    /// `max_i lambda_i |y_i N(x_i) - 1|`.
    pub comp_slack_violation: f64,
    pub support_set: Vec<usize>,
    pub margin_tol: f64,
    pub iterations: usize,
    pub iteration_budget: usize,
    pub converged: bool,
}

/// Per-sample activation data of a two-layer net on the training inputs.
struct Patterns {
    /// `relu(w_j . x_i + b_j)`, `m x n`.
    act: Array2<f64>,
    /// `relu'(w_j . x_i + b_j)`, `m x n`.
    slope: Array2<f64>,
    outputs: Array1<f64>,
}

/// Pre-activations this small relative to `|w_j| |x_i| + |b_j|` are taken
/// to sit exactly on the kink. Constructions that place samples on a kink
/// otherwise get a roundoff-dependent subgradient.
pub const KINK_REL_TOL: f64 = 64.0 * f64::EPSILON;

fn patterns(net: &Network, ds: &Dataset, sg: ReluSubgradient) -> Patterns {
    let x = ds.inputs();
    let w = net.hidden_weights();
    let b = net.biases();
    let mut pre = x.dot(&w.t());
    pre += b;
    let x_norm: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let w_norm: Vec<f64> = w.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    for ((i, j), z) in pre.indexed_iter_mut() {
        if z.abs() <= KINK_REL_TOL * (w_norm[j] * x_norm[i] + b[j].abs()) {
            *z = 0.0;
        }
    }
    let act = pre.mapv(relu);
    let outputs = act.dot(net.output_weights());
    Patterns {
        slope: pre.mapv(|z| sg.derivative(z)),
        act,
        outputs,
    }
}

/// Gram matrix of the signed sample gradients `y_i grad N(x_i)` restricted
/// to `rows`, and their inner products with `theta`.
fn normal_equations(
    net: &Network,
    ds: &Dataset,
    pat: &Patterns,
    rows: &[usize],
) -> (Array2<f64>, Array1<f64>) {
    let v = net.output_weights();
    let x = ds.inputs().select(Axis(0), rows);
    let y: Vec<f64> = rows.iter().map(|&i| ds.labels()[i]).collect();
    let act = pat.act.select(Axis(0), rows);
    let slope = pat.slope.select(Axis(0), rows);

    let mut inner = x.dot(&x.t());
    if net.bias_trainable() {
        inner += 1.0;
    }
    let v_sq = v.mapv(|a| a * a);
    let scaled = &slope * &v_sq;
    let mut q = scaled.dot(&slope.t()) * &inner;
    if net.output_weights_trainable() {
        q += &act.dot(&act.t());
    }
    for (a, &ya) in y.iter().enumerate() {
        for (b, &yb) in y.iter().enumerate() {
            q[[a, b]] *= ya * yb;
        }
    }

    // <grad N(x_i), theta> = sum_j v_j s_ij (w_j . x_i + [b] b_j) + [v] sum_j v_j a_ij
    let w_dot_x = x.dot(&net.hidden_weights().t());
    let mut c = Array1::zeros(rows.len());
    for (a, &ya) in y.iter().enumerate() {
        let mut g = 0.0;
        for j in 0..v.len() {
            let mut lin = w_dot_x[[a, j]];
            if net.bias_trainable() {
                lin += net.biases()[j];
            }
            g += v[j] * slope[[a, j]] * lin;
            if net.output_weights_trainable() {
                g += v[j] * act[[a, j]];
            }
        }
        c[a] = ya * g;
    }
    (q, c)
}

/// `theta - sum_i lambda_i y_i grad N(x_i)` in the trainable-parameter
/// layout of [`Network::to_trainable_vec`].
pub fn stationarity_residual(
    net: &Network,
    ds: &Dataset,
    duals: &[f64],
    sg: ReluSubgradient,
) -> Result<Vec<f64>> {
    net.require_two_layer()?;
    check_dims(net, ds, duals)?;
    let pat = patterns(net, ds, sg);
    Ok(residual_from_patterns(net, ds, &pat, duals))
}

fn residual_from_patterns(net: &Network, ds: &Dataset, pat: &Patterns, duals: &[f64]) -> Vec<f64> {
    let v = net.output_weights();
    let coeff = Array1::from_shape_fn(ds.m(), |i| duals[i] * ds.labels()[i]);
    // m_ij = lambda_i y_i s_ij
    let mut weighted = pat.slope.clone();
    Zip::from(weighted.rows_mut())
        .and(&coeff)
        .for_each(|mut row, &c| row *= c);
    let mut grad_w = weighted.t().dot(&ds.inputs());
    Zip::from(grad_w.rows_mut())
        .and(v)
        .for_each(|mut row, &vj| row *= vj);
    let grad_b = weighted.sum_axis(Axis(0)) * v;
    let grad_v = pat.act.t().dot(&coeff);

    let mut out = Vec::with_capacity(net.to_trainable_vec().len());
    out.extend((net.hidden_weights() - &grad_w).iter());
    if net.bias_trainable() {
        out.extend((net.biases() - &grad_b).iter());
    }
    if net.output_weights_trainable() {
        out.extend((v - &grad_v).iter());
    }
    out
}

fn check_dims(net: &Network, ds: &Dataset, duals: &[f64]) -> Result<()> {
    if net.input_dim() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: ds.d(),
        });
    }
    if duals.len() != ds.m() {
        return Err(Error::DimensionMismatch {
            expected: ds.m(),
            got: duals.len(),
        });
    }
    Ok(())
}

/// Recover duals for a network already rescaled to unit minimum margin.
pub fn recover_duals(net: &Network, ds: &Dataset, margin_tol: f64) -> Result<KktReport> {
    recover_duals_with(
        net,
        ds,
        margin_tol,
        ReluSubgradient::default(),
        NnlsOptions::default(),
    )
}

pub fn recover_duals_with(
    net: &Network,
    ds: &Dataset,
    margin_tol: f64,
    sg: ReluSubgradient,
    opts: NnlsOptions,
) -> Result<KktReport> {
    net.require_two_layer()?;
    if net.input_dim() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: ds.d(),
        });
    }
    if !(margin_tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin_tol must be >= 0, got {margin_tol}"
        )));
    }
    let pat = patterns(net, ds, sg);
    let (worst, margin) = min_margin(&pat.outputs, ds.labels());
    if !(margin > 0.0) {
        return Err(Error::NotInterpolating {
            index: worst,
            margin,
        });
    }
    if margin < 1.0 - margin_tol {
        return Err(Error::InvalidArgument(format!(
            "minimum margin {margin} is below 1 - margin_tol; rescale to unit margin first"
        )));
    }
    let margins: Vec<f64> = pat
        .outputs
        .iter()
        .zip(ds.labels())
        .map(|(o, y)| o * y)
        .collect();
    let support: Vec<usize> = (0..ds.m())
        .filter(|&i| margins[i] <= 1.0 + margin_tol)
        .collect();

    let (q, c) = normal_equations(net, ds, &pat, &support);
    if !support.is_empty() && q.iter().all(|&e| e == 0.0) {
        return Err(Error::Degenerate(
            "all sample gradients on the support vanish".into(),
        ));
    }
    let sol = nnls::solve(&q, &c, opts);

    let mut duals = vec![0.0; ds.m()];
    for (k, &i) in support.iter().enumerate() {
        duals[i] = sol.x[k];
    }
    let residual = residual_from_patterns(net, ds, &pat, &duals);
    let res_norm = residual.iter().map(|r| r * r).sum::<f64>().sqrt();
    let theta_norm = net.trainable_norm_sq().sqrt();
    let dual_min = support
        .iter()
        .map(|&i| duals[i])
        .fold(f64::INFINITY, f64::min);
    let comp_slack_violation = (0..ds.m())
        .map(|i| duals[i] * (margins[i] - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(KktReport {
        duals,
        stationarity_rel_residual: if theta_norm > 0.0 {
            res_norm / theta_norm
        } else {
            res_norm
        },
        min_margin: margin,
        dual_min: if dual_min.is_finite() { dual_min } else { 0.0 },
        comp_slack_violation,
        support_set: support,
        margin_tol,
        iterations: sol.iterations,
        iteration_budget: opts.max_iter,
        converged: sol.converged,
    })
}

/// Certify every interpolating checkpoint after unit-margin rescaling;
/// checkpoints that misclassify a training point are skipped.
pub fn kkt_distance_along_training(
    checkpoints: &[(usize, Network)],
    ds: &Dataset,
    margin_tol: f64,
) -> Result<Vec<(usize, KktReport)>> {
    let mut out = Vec::new();
    for (epoch, net) in checkpoints {
        let outputs = net.forward_batch(ds.inputs())?;
        if !(min_margin(&outputs, ds.labels()).1 > 0.0) {
            continue;
        }
        let unit = net.rescale_to_unit_margin(ds.inputs(), ds.labels())?;
        out.push((*epoch, recover_duals(&unit, ds, margin_tol)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPositivity {
    pub all_bias_nonneg: bool,
    /// `sum_{v_j = +1} b_j - sum_{v_j = -1} b_j`.
    pub bias_gap: f64,
}

pub fn bias_positivity_check(net: &Network) -> Result<BiasPositivity> {
    net.require_two_layer()?;
    if net.output_weights_trainable() {
        return Err(Error::InvalidArgument(
            "bias positivity is defined for fixed +-1 output weights".into(),
        ));
    }
    let b = net.biases();
    let bias_gap = net
        .output_weights()
        .iter()
        .zip(b.iter())
        .map(|(v, b)| v.signum() * b)
        .sum();
    Ok(BiasPositivity {
        all_bias_nonneg: b.iter().all(|&b| b >= 0.0),
        bias_gap,
    })
}

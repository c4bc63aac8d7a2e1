//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use relu_overfit::data::Dataset;
use relu_overfit::net::Network;
use relu_overfit::rng::derived_rng;

/// A KKT point with known multipliers.
pub struct Planted {
    pub net: Network,
    pub ds: Dataset,
    pub duals: Vec<f64>,
}

/// Plant a KKT point of the margin problem for fixed +-1 output weights.
///
/// Inputs are `e_i + beta y_i e_0` plus small noise, so a neuron with
/// `v_j = s` is active exactly on the samples labelled `s`. For that pattern
/// stationarity gives `w_j = v_j sum_i lambda_i y_i s_ij x_i` (and the same
/// sum without `x_i` for biases), and unit margins are a linear system in
/// `lambda`, solved here with a dense LU. Returns `None` when a draw breaks
/// the pattern or a multiplier is not positive.
pub fn plant_kkt(seed: u64, with_bias: bool) -> Option<Planted> {
    let mut rng = derived_rng(seed, &[0x91a7]);
    let m = rng.random_range(4..=16);
    let n_pos = rng.random_range(1..=4);
    let n_neg = rng.random_range(1..=4);
    let extra = rng.random_range(0..=6);
    let d = m + 1 + extra;
    let beta = rng.random_range(1.2..2.0);
    let noise = rng.random_range(0.0..0.05);
    let mut labels: Vec<f64> = (0..m)
        .map(|_| if rng.random::<f64>() < 0.4 { -1.0 } else { 1.0 })
        .collect();
    labels[0] = 1.0;
    labels[1] = -1.0;
    let mut x = Array2::<f64>::zeros((m, d));
    for i in 0..m {
        x[[i, 0]] = beta * labels[i];
        x[[i, i + 1]] = 1.0;
        for k in 0..d {
            x[[i, k]] += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let n = n_pos + n_neg;
    let v: Vec<f64> = (0..n).map(|j| if j < n_pos { 1.0 } else { -1.0 }).collect();
    let active = |i: usize, j: usize| labels[i] * v[j] > 0.0;

    // unit margins: sum_k lambda_k y_i y_k (#shared neurons) (x_i.x_k [+ 1]) = 1
    let q = DMatrix::from_fn(m, m, |i, k| {
        let shared = (0..n).filter(|&j| active(i, j) && active(k, j)).count() as f64;
        let dot: f64 =
            (0..d).map(|c| x[[i, c]] * x[[k, c]]).sum::<f64>() + if with_bias { 1.0 } else { 0.0 };
        labels[i] * labels[k] * shared * dot
    });
    let lambda = q.lu().solve(&DVector::from_element(m, 1.0))?;
    if lambda.iter().any(|&l| !(l > 1e-6)) {
        return None;
    }
    let mut w = Array2::<f64>::zeros((n, d));
    let mut b = Array1::<f64>::zeros(n);
    for j in 0..n {
        for i in (0..m).filter(|&i| active(i, j)) {
            let coef = v[j] * lambda[i] * labels[i];
            for c in 0..d {
                w[[j, c]] += coef * x[[i, c]];
            }
            if with_bias {
                b[j] += coef;
            }
        }
    }
    // the pattern must hold with room to spare
    for i in 0..m {
        for j in 0..n {
            let pre: f64 = (0..d).map(|c| w[[j, c]] * x[[i, c]]).sum::<f64>() + b[j];
            let scale = lambda.iter().sum::<f64>();
            if active(i, j) != (pre > 0.0) || pre.abs() < 1e-3 * scale {
                return None;
            }
        }
    }
    let net = Network::two_layer(w, b, Array1::from(v))
        .ok()?
        .with_bias_trainable(with_bias)
        .ok()?
        .with_fixed_output_weights()
        .ok()?;
    let ds = Dataset::from_parts(x, labels).ok()?;
    Some(Planted {
        net,
        ds,
        duals: lambda.iter().copied().collect(),
    })
}

/// Random univariate net with kinks spread over roughly `[-0.5, 1.5]`.
pub fn random_1d_net<R: Rng>(rng: &mut R, n: usize) -> Network {
    let w = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let kinks: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
    let b = Array1::from_shape_fn(n, |j| -w[[j, 0]] * kinks[j]);
    let v = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
    let shift = 0.3 * rng.sample::<f64, _>(StandardNormal);
    // a constant unit (w = 0) adds an offset without a kink
    let mut w2 = Array2::zeros((n + 1, 1));
    w2.slice_mut(ndarray::s![..n, ..]).assign(&w);
    let mut b2 = Array1::zeros(n + 1);
    b2.slice_mut(ndarray::s![..n]).assign(&b);
    b2[n] = 1.0;
    let mut v2 = Array1::zeros(n + 1);
    v2.slice_mut(ndarray::s![..n]).assign(&v);
    v2[n] = shift;
    Network::two_layer(w2, b2, v2).unwrap()
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

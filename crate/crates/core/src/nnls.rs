//! Nonnegative least squares in normal-equation form:
//! `min 0.5 x^T Q x - c^T x` subject to `x >= 0`, with `Q` symmetric PSD.
//!
//! Accelerated projected gradient does the bulk of the work; the free set it
//! settles on is then solved exactly with a Cholesky factorization, since
//! first-order methods stall well short of 1e-8 on ill-conditioned `Q`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::data::spectral_norm_psd;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnlsOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub polish: bool,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            rel_tol: 1e-10,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub polished: bool,
}

pub fn objective(q: &Array2<f64>, c: &Array1<f64>, x: &Array1<f64>) -> f64 {
    0.5 * x.dot(&q.dot(x)) - c.dot(x)
}

pub fn solve(q: &Array2<f64>, c: &Array1<f64>, opts: NnlsOptions) -> NnlsSolution {
    let k = c.len();
    assert_eq!(q.dim(), (k, k), "Q must be square and match c");
    let lipschitz = spectral_norm_psd(q, 0x6e6e) * 1.01;
    if k == 0 || lipschitz <= 0.0 || !lipschitz.is_finite() {
        return NnlsSolution {
            x: Array1::zeros(k),
            iterations: 0,
            converged: true,
            polished: false,
        };
    }
    let mut step = 1.0 / lipschitz;

    let mut x = Array1::<f64>::zeros(k);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(q, c, &x);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let grad = q.dot(&y) - c;
        let next = (&y - &(step * &grad)).mapv(|v| v.max(0.0));
        let f_next = objective(q, c, &next);
        if f_next > f_prev {
            // adaptive restart: drop momentum and take a plain step from x
            t = 1.0;
            let grad = q.dot(&x) - c;
            let plain = (&x - &(step * &grad)).mapv(|v| v.max(0.0));
            let f_plain = objective(q, c, &plain);
            if f_plain > f_prev + 1e-15 * f_prev.abs() {
                // the power-iteration estimate of ||Q|| was too small
                step *= 0.5;
                y = x.clone();
                continue;
            }
            let change = norm(&(&plain - &x));
            x = plain;
            y = x.clone();
            f_prev = f_plain;
            if change <= opts.rel_tol * norm(&x) {
                converged = true;
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let diff = &next - &x;
        let change = norm(&diff);
        y = &next + &(((t - 1.0) / t_next) * &diff);
        x = next;
        t = t_next;
        f_prev = f_next;
        if change <= opts.rel_tol * norm(&x) {
            converged = true;
            break;
        }
    }

    let mut polished = false;
    if opts.polish {
        if let Some(p) = polish(q, c, &x) {
            // objective values differ only in roundoff near the optimum, so
            // compare optimality violations instead
            if kkt_violation(q, c, &p) <= kkt_violation(q, c, &x) {
                x = p;
                polished = true;
                converged = true;
            }
        }
    }
    NnlsSolution {
        x,
        iterations,
        converged,
        polished,
    }
}

/// Largest violation of `x >= 0`, `g >= 0`, `x_i g_i = 0` with `g = Qx - c`.
pub fn kkt_violation(q: &Array2<f64>, c: &Array1<f64>, x: &Array1<f64>) -> f64 {
    let g = q.dot(x) - c;
    x.iter()
        .zip(&g)
        .map(|(&xi, &gi)| {
            if xi > 0.0 {
                gi.abs()
            } else {
                (-gi).max(0.0) - xi.min(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Exact solve on the free set suggested by `start`, followed by
/// Lawson-Hanson corrections. Returns `None` when a free-set system is
/// singular or the corrections do not settle.
fn polish(q: &Array2<f64>, c: &Array1<f64>, start: &Array1<f64>) -> Option<Array1<f64>> {
    let k = c.len();
    let scale = start.iter().cloned().fold(0.0, f64::max);
    let mut free: Vec<bool> = start.iter().map(|&v| v > 1e-12 * scale).collect();
    let mut x = start.mapv(|v| if v > 1e-12 * scale { v } else { 0.0 });
    let c_scale = c.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let solve_free = |free: &[bool]| -> Option<Array1<f64>> {
        let idx: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        let mut z = Array1::zeros(k);
        if idx.is_empty() {
            return Some(z);
        }
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| q[[idx[a], idx[b]]]);
        let rhs = DVector::from_fn(idx.len(), |a, _| c[idx[a]]);
        let sol = sub.cholesky()?.solve(&rhs);
        for (a, &i) in idx.iter().enumerate() {
            z[i] = sol[a];
        }
        z.iter().all(|v| v.is_finite()).then_some(z)
    };
    for _ in 0..(3 * k + 10) {
        // inner loop: step from the feasible x toward the free-set optimum,
        // stopping at the first coordinate that hits zero
        let mut settled = false;
        for _ in 0..=k {
            let z = solve_free(&free)?;
            let blocking = (0..k)
                .filter(|&i| free[i] && z[i] <= 0.0)
                .map(|i| (i, x[i] / (x[i] - z[i])))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match blocking {
                None => {
                    x = z;
                    settled = true;
                    break;
                }
                Some((i, alpha)) => {
                    x = &x + &(alpha * (&z - &x));
                    x[i] = 0.0;
                    for j in 0..k {
                        if free[j] && x[j] <= 0.0 {
                            free[j] = false;
                            x[j] = 0.0;
                        }
                    }
                }
            }
        }
        if !settled {
            return None;
        }
        let grad = q.dot(&x) - c;
        let worst = (0..k)
            .filter(|&i| !free[i])
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        match worst {
            Some(i) if grad[i] < -1e-12 * c_scale => free[i] = true,
            _ => return Some(x),
        }
    }
    None
}

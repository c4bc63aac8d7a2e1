//! Exact analysis of two-layer networks on `[0, 1]`.
//!
//! A one-dimensional two-layer ReLU net is a continuous piecewise-linear
//! function. Writing it as `a + s x + sum_k delta_k (x - z_k)_+` with the
//! breakpoints `z_k = -b_j / w_j` turns every question about it (clean error,
//! slope changes, behaviour between samples) into arithmetic on the pieces.
//! Crossing `z_j` from left to right changes the slope by `v_j |w_j|`: a
//! neuron with `w_j > 0` switches on, one with `w_j < 0` switches off.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{min_margin, relu, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    /// Strictly increasing kink locations (coincident kinks merged).
    pub breakpoints: Vec<f64>,
    /// Slope change at each breakpoint.
    pub slope_deltas: Vec<f64>,
    /// Value at `x = 0` of the line followed left of every breakpoint.
    pub base_intercept: f64,
    /// Slope left of every breakpoint.
    pub base_slope: f64,
}

impl PiecewiseLinear {
    pub fn eval(&self, x: f64) -> f64 {
        let mut out = self.base_intercept + self.base_slope * x;
        for (&z, &d) in self.breakpoints.iter().zip(&self.slope_deltas) {
            if x > z {
                out += d * (x - z);
            } else {
                break;
            }
        }
        out
    }

    /// Linear pieces covering `[a, b]` as `(left, right, slope, intercept)`.
    pub fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64, f64, f64)> {
        let mut slope = self.base_slope;
        let mut intercept = self.base_intercept;
        let mut out = Vec::new();
        let mut left = a;
        for (&z, &d) in self.breakpoints.iter().zip(&self.slope_deltas) {
            if z <= a {
                slope += d;
                intercept -= d * z;
                continue;
            }
            if z >= b {
                break;
            }
            out.push((left, z, slope, intercept));
            left = z;
            slope += d;
            intercept -= d * z;
        }
        out.push((left, b, slope, intercept));
        out
    }

    /// Breakpoints strictly inside `(a, b)` with their deltas.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints
            .iter()
            .zip(&self.slope_deltas)
            .filter(move |(z, _)| **z > a && **z < b)
            .map(|(z, d)| (*z, *d))
    }

    pub fn max_abs_slope(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .iter()
            .map(|p| p.2.abs())
            .fold(0.0, f64::max)
    }

    /// Measures of `{N <= 0}` and `{N > 0}` inside `[a, b]`; the two add up to
    /// `b - a` piece by piece.
    pub fn sign_measures(&self, a: f64, b: f64) -> (f64, f64) {
        let mut nonpos = 0.0;
        let mut pos = 0.0;
        for (l, r, s, c) in self.pieces(a, b) {
            let len = r - l;
            let (fl, fr) = (c + s * l, c + s * r);
            let neg = if fl <= 0.0 && fr <= 0.0 {
                len
            } else if fl > 0.0 && fr > 0.0 {
                0.0
            } else {
                // exactly one endpoint is positive; the root lies inside
                let t = (l + len * fl / (fl - fr)).clamp(l, r);
                if fl <= 0.0 {
                    t - l
                } else {
                    r - t
                }
            };
            nonpos += neg;
            pos += len - neg;
        }
        (nonpos, pos)
    }

    /// Largest value on `[a, b]` (attained at an endpoint or a breakpoint).
    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .iter()
            .flat_map(|&(l, r, s, c)| [c + s * l, c + s * r])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_on(&self, a: f64, b: f64) -> f64 {
        self.pieces(a, b)
            .iter()
            .flat_map(|&(l, r, s, c)| [c + s * l, c + s * r])
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn to_piecewise(net: &Network) -> Result<PiecewiseLinear> {
    net.require_two_layer()?;
    if net.input_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "piecewise form needs d = 1, got d = {}",
            net.input_dim()
        )));
    }
    let w = net.hidden_weights().column(0);
    let b = net.biases();
    let v = net.output_weights();
    let mut base_intercept = 0.0;
    let mut base_slope = 0.0;
    let mut kinks: Vec<(f64, f64)> = Vec::new();
    for j in 0..v.len() {
        if w[j] == 0.0 {
            base_intercept += v[j] * relu(b[j]);
            continue;
        }
        if w[j] < 0.0 {
            base_intercept += v[j] * b[j];
            base_slope += v[j] * w[j];
        }
        kinks.push((-b[j] / w[j], v[j] * w[j].abs()));
    }
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut breakpoints: Vec<f64> = Vec::with_capacity(kinks.len());
    let mut slope_deltas: Vec<f64> = Vec::with_capacity(kinks.len());
    for (z, d) in kinks {
        if breakpoints.last() == Some(&z) {
            *slope_deltas.last_mut().unwrap() += d;
        } else {
            breakpoints.push(z);
            slope_deltas.push(d);
        }
    }
    Ok(PiecewiseLinear {
        breakpoints,
        slope_deltas,
        base_intercept,
        base_slope,
    })
}

/// `Pr_{x ~ Unif[0,1]}[N(x) <= 0]`, computed exactly piece by piece.
pub fn exact_clean_error_1d(pw: &PiecewiseLinear) -> f64 {
    pw.sign_measures(0.0, 1.0).0
}

/// Breakpoints in the open interval with positive aggregated slope change.
pub fn count_slope_increases(pw: &PiecewiseLinear, a: f64, b: f64) -> Result<usize> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "need a < b, got [{a}, {b}]"
        )));
    }
    Ok(pw.breakpoints_in(a, b).filter(|(_, d)| *d > 0.0).count())
}

fn sorted_samples(ds: &Dataset) -> Result<Vec<(f64, f64)>> {
    if ds.d() != 1 {
        return Err(Error::InvalidArgument(
            "one-dimensional dataset required".into(),
        ));
    }
    let x = ds.inputs();
    let mut s: Vec<(f64, f64)> = (0..ds.m()).map(|i| (x[[i, 0]], ds.labels()[i])).collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRun {
    /// Position of the first sample of the run in sorted order.
    pub start: usize,
    pub len: usize,
    /// Sorted position `l` such that `N < 0` on all of `[x_l, x_{l+1}]`.
    pub witness: Option<usize>,
}

/// For each maximal run of at least five consecutive `-1` labels, look for a
/// segment among its first four on which the network is strictly negative.
pub fn negative_run_witness(pw: &PiecewiseLinear, ds: &Dataset) -> Result<Vec<NegativeRun>> {
    let s = sorted_samples(ds)?;
    let mut runs = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if s[i].1 > 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s[i].1 < 0.0 {
            i += 1;
        }
        let len = i - start;
        if len >= 5 {
            let witness = (start..start + 4).find(|&l| pw.max_on(s[l].0, s[l + 1].0) < 0.0);
            runs.push(NegativeRun {
                start,
                len,
                witness,
            });
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub left: usize,
    pub right: usize,
    pub x_left: f64,
    pub x_right: f64,
    pub y_left: f64,
    pub y_right: f64,
    pub n_left: f64,
    pub n_right: f64,
    pub is_linear: bool,
    /// Measure of `{N <= 0}` inside the segment.
    pub negative_measure: f64,
}

/// A `(+, -, +)` triple: the segment after the negative sample should be a
/// single line from `-1` to `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCheck {
    /// Sorted position of the negative sample.
    pub index: usize,
    pub left_value_deviation: f64,
    pub right_value_deviation: f64,
    pub linear: bool,
    pub pass: bool,
}

/// A `(+, +)` segment: the network should stay nonnegative on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivePairCheck {
    pub left: usize,
    pub min_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segments: Vec<Segment>,
    pub spike_checks: Vec<SpikeCheck>,
    pub positive_pair_checks: Vec<PositivePairCheck>,
    pub value_tol: f64,
    pub linearity_tol: f64,
}

impl SegmentReport {
    pub fn all_pass(&self) -> bool {
        self.spike_checks.iter().all(|c| c.pass) && self.positive_pair_checks.iter().all(|c| c.pass)
    }
}

/// Structural checks on a unit-margin interpolating net. A segment counts as
/// linear when every breakpoint inside it has `|delta| <= linearity_tol`
/// times the largest slope magnitude on `[0, 1]`.
pub fn check_segment_structure(
    net: &Network,
    ds: &Dataset,
    value_tol: f64,
    linearity_tol: f64,
) -> Result<SegmentReport> {
    let pw = to_piecewise(net)?;
    let outputs = net.forward_batch(ds.inputs())?;
    let (worst, margin) = min_margin(&outputs, ds.labels());
    if !(margin > 0.0) {
        return Err(Error::NotInterpolating {
            index: worst,
            margin,
        });
    }
    let s = sorted_samples(ds)?;
    let slope_scale = pw.max_abs_slope(0.0, 1.0);
    let values: Vec<f64> = s.iter().map(|(x, _)| pw.eval(*x)).collect();
    let linear_on = |a: f64, b: f64| {
        pw.breakpoints_in(a, b)
            .all(|(_, d)| d.abs() <= linearity_tol * slope_scale)
    };

    let mut segments = Vec::new();
    let mut positive_pair_checks = Vec::new();
    for l in 0..s.len().saturating_sub(1) {
        let (xl, yl) = s[l];
        let (xr, yr) = s[l + 1];
        segments.push(Segment {
            left: l,
            right: l + 1,
            x_left: xl,
            x_right: xr,
            y_left: yl,
            y_right: yr,
            n_left: values[l],
            n_right: values[l + 1],
            is_linear: linear_on(xl, xr),
            negative_measure: pw.sign_measures(xl, xr).0,
        });
        if yl > 0.0 && yr > 0.0 {
            let min_value = pw.min_on(xl, xr);
            positive_pair_checks.push(PositivePairCheck {
                left: l,
                min_value,
                pass: min_value >= -value_tol,
            });
        }
    }
    let mut spike_checks = Vec::new();
    for i in 1..s.len().saturating_sub(1) {
        if s[i - 1].1 > 0.0 && s[i].1 < 0.0 && s[i + 1].1 > 0.0 {
            let left_value_deviation = (values[i] + 1.0).abs();
            let right_value_deviation = (values[i + 1] - 1.0).abs();
            let linear = linear_on(s[i].0, s[i + 1].0);
            spike_checks.push(SpikeCheck {
                index: i,
                left_value_deviation,
                right_value_deviation,
                linear,
                pass: linear
                    && left_value_deviation <= value_tol
                    && right_value_deviation <= value_tol,
            });
        }
    }
    Ok(SegmentReport {
        segments,
        spike_checks,
        positive_pair_checks,
        value_tol,
        linearity_tol,
    })
}

/// Two-layer net equal to the linear interpolant of `(x_k, t_k)` on
/// `[x_1, x_m]` and constant outside. One neuron per knot with a slope
/// change, each at its own minimal norm, plus one `w = 0` neuron for the
/// constant.
pub fn linear_spline_network(xs: &[f64], targets: &[f64]) -> Result<Network> {
    if xs.len() != targets.len() || xs.is_empty() {
        return Err(Error::InvalidArgument(
            "need matching, nonempty knots and targets".into(),
        ));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "knots must be strictly increasing".into(),
        ));
    }
    let k = xs.len();
    let slopes: Vec<f64> = (0..k.saturating_sub(1))
        .map(|i| (targets[i + 1] - targets[i]) / (xs[i + 1] - xs[i]))
        .collect();
    let mut w = Vec::new();
    let mut b = Vec::new();
    let mut v = Vec::new();
    let t0 = targets[0];
    w.push(0.0);
    b.push(t0.abs().sqrt());
    v.push(t0.signum() * t0.abs().sqrt());
    for i in 0..k {
        let before = if i == 0 { 0.0 } else { slopes[i - 1] };
        let after = if i + 1 == k { 0.0 } else { slopes[i] };
        let delta = after - before;
        if delta == 0.0 {
            continue;
        }
        // v * relu(w (x - x_i)) with v w = delta and v^2 = w^2 (1 + x_i^2)
        let wi = (delta.abs() / (1.0 + xs[i] * xs[i]).sqrt()).sqrt();
        w.push(wi);
        b.push(-wi * xs[i]);
        v.push(delta / wi);
    }
    let n = v.len();
    Network::two_layer(
        ndarray::Array2::from_shape_vec((n, 1), w).expect("shape"),
        ndarray::Array1::from(b),
        ndarray::Array1::from(v),
    )
}

/// The two families of norm-reducing perturbations used to show that local
/// minima of the margin problem are linear between opposite labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Scale `v_{j1}` by `1 - delta`, move its kink left, and grow `v_{j2}`
    /// so nothing changes right of `j2`'s kink. Without `j2`, only `j1` moves.
    ShiftKink,
    /// Scale `v_{j1}` by `1 - delta` and fold the removed part into neuron
    /// `j2`'s weight and bias.
    TransferSlope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub j1: usize,
    pub j2: Option<usize>,
    pub delta: f64,
}

/// New `(w, b, v)` for the neurons `j1` and `j2`.
fn perturbed_neurons(
    w: &[f64],
    b: &[f64],
    v: &[f64],
    p: &Perturbation,
) -> Result<((f64, f64, f64), Option<(f64, f64, f64)>)> {
    let (j1, d) = (p.j1, p.delta);
    let (w1, b1, v1) = (w[j1], b[j1], v[j1]);
    match p.kind {
        PerturbationKind::ShiftKink => {
            if !(d < 1.0) {
                return Err(Error::InvalidArgument(
                    "shift-kink perturbation needs delta < 1".into(),
                ));
            }
            let (shift, second) = match p.j2 {
                Some(j2) => {
                    let (w2, b2, v2) = (w[j2], b[j2], v[j2]);
                    if w2 == 0.0 || v2 == 0.0 {
                        return Err(Error::Degenerate(format!("neuron {j2} has w = 0 or v = 0")));
                    }
                    let grown = (1.0 + d * v1 * w1 / (v2 * w2)) * v2;
                    (w1 * b2 / w2, Some((w2, b2, grown)))
                }
                None => (0.0, None),
            };
            let b1_new = b1 - d / (1.0 - d) * (shift - b1);
            Ok(((w1, b1_new, (1.0 - d) * v1), second))
        }
        PerturbationKind::TransferSlope => {
            let j2 =
                p.j2.ok_or_else(|| Error::InvalidArgument("transfer-slope needs j2".into()))?;
            let (w2, b2, v2) = (w[j2], b[j2], v[j2]);
            if v2 == 0.0 {
                return Err(Error::Degenerate(format!("neuron {j2} has v = 0")));
            }
            Ok((
                (w1, b1, (1.0 - d) * v1),
                Some((w2 + d * v1 * w1 / v2, b2 + d * v1 * b1 / v2, v2)),
            ))
        }
    }
}

fn neuron_params(net: &Network) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        net.hidden_weights().column(0).to_vec(),
        net.biases().to_vec(),
        net.output_weights().to_vec(),
    )
}

fn require_univariate_trainable(net: &Network) -> Result<()> {
    net.require_two_layer()?;
    if net.input_dim() != 1 {
        return Err(Error::InvalidArgument("univariate network required".into()));
    }
    if !net.output_weights_trainable() || !net.bias_trainable() {
        return Err(Error::InvalidArgument(
            "perturbations change output weights and biases; both must be trainable".into(),
        ));
    }
    Ok(())
}

pub fn apply_perturbation(net: &Network, p: &Perturbation) -> Result<Network> {
    require_univariate_trainable(net)?;
    let (mut w, mut b, mut v) = neuron_params(net);
    let n = v.len();
    if p.j1 >= n || p.j2.is_some_and(|j| j >= n || j == p.j1) {
        return Err(Error::InvalidArgument(format!(
            "bad neuron pair ({}, {:?})",
            p.j1, p.j2
        )));
    }
    let (first, second) = perturbed_neurons(&w, &b, &v, p)?;
    (w[p.j1], b[p.j1], v[p.j1]) = first;
    if let (Some(j2), Some(s)) = (p.j2, second) {
        (w[j2], b[j2], v[j2]) = s;
    }
    Network::two_layer(
        ndarray::Array2::from_shape_vec((n, 1), w).expect("shape"),
        ndarray::Array1::from(b),
        ndarray::Array1::from(v),
    )
}

/// Limit of `(||theta||^2 - ||theta_delta||^2) / (2 delta)` as `delta -> 0`.
pub fn norm_expansion_coefficient(
    net: &Network,
    kind: PerturbationKind,
    j1: usize,
    j2: Option<usize>,
) -> Result<f64> {
    require_univariate_trainable(net)?;
    let (w, b, v) = neuron_params(net);
    let (w1, b1, v1) = (w[j1], b[j1], v[j1]);
    match (kind, j2) {
        (PerturbationKind::ShiftKink, Some(j2)) => {
            let (w2, b2, v2) = (w[j2], b[j2], v[j2]);
            Ok(v1 * v1 - v1 * w1 * v2 / w2 - b1 * (b1 - w1 * b2 / w2))
        }
        (PerturbationKind::ShiftKink, None) => Ok(v1 * v1 - b1 * b1),
        (PerturbationKind::TransferSlope, Some(j2)) => {
            let (w2, b2, v2) = (w[j2], b[j2], v[j2]);
            Ok(v1 * v1 - v1 * w1 * w2 / v2 - v1 * b1 * b2 / v2)
        }
        (PerturbationKind::TransferSlope, None) => {
            Err(Error::InvalidArgument("transfer-slope needs j2".into()))
        }
    }
}

/// `2^-k` for `k = 4..=20`.
pub fn default_delta_grid() -> Vec<f64> {
    (4..=20).map(|k| 2f64.powi(-k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub perturbation: Perturbation,
    pub norm_sq_before: f64,
    pub norm_sq_after: f64,
    pub min_margin_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifierResult {
    pub found: Option<Improvement>,
    pub candidates_checked: usize,
    /// Human-readable outcome; absence only means nothing was found on the
    /// grid, not that the network is a local minimum.
    pub note: String,
}

/// Candidate `(kind, j1, j2)` triples in deterministic order.
fn candidates(w: &[f64], b: &[f64], v: &[f64]) -> Vec<(usize, Option<usize>, PerturbationKind)> {
    let n = v.len();
    let vw = |j: usize| v[j] * w[j];
    let kink = |j: usize| -b[j] / w[j];
    let has_kink: Vec<bool> = (0..n).map(|j| w[j] != 0.0).collect();
    let mut order: Vec<usize> = (0..n).filter(|&j| has_kink[j]).collect();
    order.sort_by(|&a, &c| kink(a).total_cmp(&kink(c)).then(a.cmp(&c)));
    let rank: Vec<Option<usize>> = {
        let mut r = vec![None; n];
        for (pos, &j) in order.iter().enumerate() {
            r[j] = Some(pos);
        }
        r
    };
    let mut out = Vec::new();
    for j1 in 0..n {
        let Some(pos) = rank[j1] else { continue };
        let mut next = None;
        if vw(j1) > 0.0 {
            // next neuron to the right (in kink order) with v w < 0
            next = order[pos + 1..].iter().copied().find(|&j| vw(j) < 0.0);
            out.push((j1, next, PerturbationKind::ShiftKink));
            if next.is_some() {
                out.push((j1, next, PerturbationKind::TransferSlope));
            }
        }
        for j2 in 0..n {
            if j2 == j1 || rank[j2].is_none() || v[j2] == 0.0 || Some(j2) == next {
                continue;
            }
            let opposite = vw(j1) * vw(j2) < 0.0;
            let rising_then_falling = vw(j1) > 0.0 && rank[j2] > rank[j1];
            let sink = vw(j1) < 0.0;
            if opposite && (rising_then_falling || sink) {
                out.push((j1, Some(j2), PerturbationKind::TransferSlope));
            }
        }
    }
    out
}

/// Search the perturbation families over `delta_grid` for a feasible
/// (all margins `>= 1`) network with strictly smaller parameter norm.
pub fn local_min_falsifier(
    net: &Network,
    ds: &Dataset,
    delta_grid: &[f64],
) -> Result<FalsifierResult> {
    require_univariate_trainable(net)?;
    if ds.d() != 1 {
        return Err(Error::InvalidArgument(
            "one-dimensional dataset required".into(),
        ));
    }
    let outputs = net.forward_batch(ds.inputs())?;
    let (worst, margin) = min_margin(&outputs, ds.labels());
    if margin < 1.0 - 1e-9 {
        return Err(Error::NotInterpolating {
            index: worst,
            margin,
        });
    }
    let (w, b, v) = neuron_params(net);
    let xs: Vec<f64> = ds.inputs().column(0).to_vec();
    let ys = ds.labels();
    let norm_sq = net.param_norm_sq();
    let contrib = |wj: f64, bj: f64, vj: f64, x: f64| vj * relu(wj * x + bj);
    let sq = |(wj, bj, vj): (f64, f64, f64)| wj * wj + bj * bj + vj * vj;

    let mut checked = 0;
    for (j1, j2, kind) in candidates(&w, &b, &v) {
        for &delta in delta_grid {
            let p = Perturbation {
                kind,
                j1,
                j2,
                delta,
            };
            let Ok((first, second)) = perturbed_neurons(&w, &b, &v, &p) else {
                continue;
            };
            checked += 1;
            let mut new_norm = norm_sq - sq((w[j1], b[j1], v[j1])) + sq(first);
            if let (Some(j), Some(s)) = (j2, second) {
                new_norm += sq(s) - sq((w[j], b[j], v[j]));
            }
            if !(new_norm < norm_sq - 1e-12) {
                continue;
            }
            let mut feasible = true;
            let mut worst_after = f64::INFINITY;
            for (i, &x) in xs.iter().enumerate() {
                let mut out = outputs[i] - contrib(w[j1], b[j1], v[j1], x)
                    + contrib(first.0, first.1, first.2, x);
                if let (Some(j), Some(s)) = (j2, second) {
                    out += contrib(s.0, s.1, s.2, x) - contrib(w[j], b[j], v[j], x);
                }
                let m = ys[i] * out;
                worst_after = worst_after.min(m);
                if m < 1.0 - 1e-12 {
                    feasible = false;
                    break;
                }
            }
            if feasible {
                return Ok(FalsifierResult {
                    found: Some(Improvement {
                        perturbation: p,
                        norm_sq_before: norm_sq,
                        norm_sq_after: new_norm,
                        min_margin_after: worst_after,
                    }),
                    candidates_checked: checked,
                    note: "feasible perturbation with smaller norm found".into(),
                });
            }
        }
    }
    Ok(FalsifierResult {
        found: None,
        candidates_checked: checked,
        note: "no improvement found at grid resolution".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn net1(w: &[f64], b: &[f64], v: &[f64]) -> Network {
        let n = w.len();
        Network::two_layer(
            ndarray::Array2::from_shape_vec((n, 1), w.to_vec()).unwrap(),
            ndarray::Array1::from(b.to_vec()),
            ndarray::Array1::from(v.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn single_neuron_breakpoint() {
        let pw = to_piecewise(&net1(&[1.0], &[0.0], &[1.0])).unwrap();
        assert_eq!(pw.breakpoints, vec![0.0]);
        assert_eq!(pw.slope_deltas, vec![1.0]);
    }

    #[test]
    fn flat_neuron_is_constant() {
        let pw = to_piecewise(&net1(&[0.0], &[1.0], &[1.0])).unwrap();
        assert!(pw.breakpoints.is_empty());
        assert_eq!(pw.eval(0.3), 1.0);
        assert_eq!(pw.eval(-7.0), 1.0);
    }

    #[test]
    fn decreasing_neuron_switches_off() {
        // relu(0.5 - x): slope -1 left of 0.5, flat after; delta +1
        let pw = to_piecewise(&net1(&[-1.0], &[0.5], &[1.0])).unwrap();
        assert_eq!(pw.slope_deltas, vec![1.0]);
        assert_eq!(pw.eval(0.0), 0.5);
        assert_eq!(pw.eval(0.9), 0.0);
    }

    #[test]
    fn rejects_multivariate() {
        let net = Network::two_layer(array![[1.0, 0.0]], array![0.0], array![1.0]).unwrap();
        assert!(to_piecewise(&net).is_err());
    }

    #[test]
    fn exact_error_examples() {
        let pw = to_piecewise(&net1(&[1.0], &[0.0], &[1.0])).unwrap();
        assert_eq!(exact_clean_error_1d(&pw), 0.0);
        let pw = to_piecewise(&net1(&[-1.0, 1.0], &[0.5, -0.5], &[1.0, -1.0])).unwrap();
        assert!((exact_clean_error_1d(&pw) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn slope_increase_counts() {
        let pw = to_piecewise(&net1(&[2.0], &[-1.0], &[0.5])).unwrap();
        assert_eq!(count_slope_increases(&pw, 0.0, 1.0).unwrap(), 1);
        let pw = to_piecewise(&net1(
            &[1.0, 1.0, 1.0],
            &[-0.25, -0.5, -0.75],
            &[1.0, 1.0, 1.0],
        ))
        .unwrap();
        assert_eq!(count_slope_increases(&pw, 0.0, 1.0).unwrap(), 3);
        let pw = to_piecewise(&net1(&[1.0, 1.0], &[-0.5, -0.5], &[1.0, -2.0])).unwrap();
        assert_eq!(pw.breakpoints.len(), 1);
        assert_eq!(count_slope_increases(&pw, 0.0, 1.0).unwrap(), 0);
        assert!(count_slope_increases(&pw, 1.0, 0.0).is_err());
    }

    #[test]
    fn spline_network_interpolates() {
        let xs = [0.1, 0.3, 0.4, 0.8];
        let ts = [1.0, -1.0, 1.0, 1.0];
        let net = linear_spline_network(&xs, &ts).unwrap();
        for (x, t) in xs.iter().zip(ts) {
            assert!((net.forward(array![*x].view()).unwrap() - t).abs() < 1e-12);
        }
        assert!((net.forward(array![0.0].view()).unwrap() - 1.0).abs() < 1e-12);
        assert!((net.forward(array![0.95].view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbation_at_zero_is_identity() {
        let net = net1(&[1.5, -0.7, 2.0], &[-0.3, 0.4, -1.2], &[0.8, -1.1, -0.6]);
        for (kind, j2) in [
            (PerturbationKind::ShiftKink, Some(2)),
            (PerturbationKind::ShiftKink, None),
            (PerturbationKind::TransferSlope, Some(1)),
        ] {
            let p = Perturbation {
                kind,
                j1: 0,
                j2,
                delta: 0.0,
            };
            assert_eq!(apply_perturbation(&net, &p).unwrap(), net);
        }
    }

    #[test]
    fn transfer_slope_norm_is_exactly_quadratic() {
        let net = net1(&[1.5, -0.7], &[-0.3, 0.4], &[0.8, -1.1]);
        let c =
            norm_expansion_coefficient(&net, PerturbationKind::TransferSlope, 0, Some(1)).unwrap();
        let (v1, w1, b1, v2): (f64, f64, f64, f64) = (0.8, 1.5, -0.3, -1.1);
        let second = v1 * v1 + (v1 * w1 / v2).powi(2) + (v1 * b1 / v2).powi(2);
        for delta in [0.1, 0.01] {
            let p = Perturbation {
                kind: PerturbationKind::TransferSlope,
                j1: 0,
                j2: Some(1),
                delta,
            };
            let after = apply_perturbation(&net, &p).unwrap();
            let diff = (net.param_norm_sq() - after.param_norm_sq()) / (2.0 * delta);
            assert!((diff - (c - 0.5 * delta * second)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_neuron_single_sample_has_no_candidates() {
        let net = net1(&[1.0], &[1.0], &[1.0]);
        let ds = Dataset::from_parts(array![[0.5]], vec![1.0]).unwrap();
        let r = local_min_falsifier(&net, &ds, &default_delta_grid()).unwrap();
        assert!(r.found.is_none());
    }
}

//! Noisy-label datasets: inputs uniform on `[0, 1]` (d = 1) or on the unit
//! sphere (d >= 2), labels `+1` flipped to `-1` independently with
//! probability `p`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDistribution {
    Interval1d,
    Sphere,
}

impl InputDistribution {
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            Self::Interval1d
        } else {
            Self::Sphere
        }
    }
}

/// Overwrite every row of `out` with an independent draw from `dist`.
pub fn fill_inputs<R: Rng>(rng: &mut R, dist: InputDistribution, out: &mut ArrayViewMut2<f64>) {
    match dist {
        InputDistribution::Interval1d => {
            for v in out.iter_mut() {
                *v = rng.random::<f64>();
            }
        }
        InputDistribution::Sphere => {
            for mut row in out.rows_mut() {
                loop {
                    for v in row.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let norm = row.dot(&row).sqrt();
                    if norm > 0.0 {
                        row /= norm;
                        break;
                    }
                }
            }
        }
    }
}

pub fn sphere_point<R: Rng>(rng: &mut R, d: usize) -> Array1<f64> {
    let mut out = Array2::zeros((1, d));
    fill_inputs(rng, InputDistribution::Sphere, &mut out.view_mut());
    out.row(0).to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<f64>,
    p: f64,
    seed: u64,
    distribution: InputDistribution,
}

impl Dataset {
    /// Wrap explicit inputs and labels. Labels must be `+1` or `-1`.
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<f64>,
        p: f64,
        seed: u64,
        distribution: InputDistribution,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows(),
                got: labels.len(),
            });
        }
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input".into()));
        }
        check_noise_level(p)?;
        Ok(Self {
            inputs,
            labels,
            p,
            seed,
            distribution,
        })
    }

    /// Convenience for hand-built datasets: distribution inferred from `d`.
    pub fn from_parts(inputs: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        let dist = InputDistribution::for_dim(inputs.ncols());
        Self::new(inputs, labels, 0.0, 0, dist)
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> InputDistribution {
        self.distribution
    }

    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.labels[i] > 0.0).collect()
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.labels[i] < 0.0).collect()
    }

    /// Indices sorted by the (scalar) input; only meaningful for d = 1.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.m()).collect();
        idx.sort_by(|&a, &b| self.inputs[[a, 0]].total_cmp(&self.inputs[[b, 0]]));
        idx
    }

    pub fn to_file(&self) -> DatasetFile {
        DatasetFile {
            schema_version: DATASET_SCHEMA_VERSION,
            d: self.d(),
            m: self.m(),
            p: self.p,
            seed: self.seed,
            distribution: self.distribution,
            inputs: self.inputs.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: self.labels.iter().map(|&y| y as i8).collect(),
        }
    }

    pub fn from_file(file: DatasetFile) -> Result<Self> {
        if file.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported dataset schema version {}",
                file.schema_version
            )));
        }
        if file.inputs.len() != file.m || file.inputs.iter().any(|r| r.len() != file.d) {
            return Err(Error::InvalidArgument(
                "input matrix shape disagrees with d, m".into(),
            ));
        }
        let flat: Vec<f64> = file.inputs.into_iter().flatten().collect();
        let inputs = Array2::from_shape_vec((file.m, file.d), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let labels = file.labels.into_iter().map(f64::from).collect();
        Self::new(inputs, labels, file.p, file.seed, file.distribution)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
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

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub d: usize,
    pub m: usize,
    pub p: f64,
    pub seed: u64,
    pub distribution: InputDistribution,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
}

fn check_noise_level(p: f64) -> Result<()> {
    if !(0.0..0.5).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "noise level must lie in [0, 0.5), got {p}"
        )));
    }
    Ok(())
}

/// Sample `m` points with independent label noise at level `p`.
///
/// Inputs and labels come from separate substreams of `seed`, so the
/// inputs for a given `(d, m, seed)` do not depend on `p`.
pub fn sample_dataset(d: usize, m: usize, p: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument("d and m must be positive".into()));
    }
    check_noise_level(p)?;
    let dist = InputDistribution::for_dim(d);
    let mut inputs = Array2::zeros((m, d));
    fill_inputs(&mut derived_rng(seed, &[0x1]), dist, &mut inputs.view_mut());
    let labels = sample_labels(m, p, &mut derived_rng(seed, &[0x2]));
    Dataset::new(inputs, labels, p, seed, dist)
}

pub(crate) fn sample_labels<R: Rng>(m: usize, p: f64, rng: &mut R) -> Vec<f64> {
    (0..m)
        .map(|_| if rng.random::<f64>() < p { -1.0 } else { 1.0 })
        .collect()
}

/// Thresholds used by [`check_data_properties`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyThresholds {
    pub delta: f64,
    /// Bound on the spectral norm of `X X^T`; the analysis only asks for an
    /// absolute constant.
    pub gram_bound: f64,
}

impl Default for PropertyThresholds {
    fn default() -> Self {
        Self {
            delta: 0.1,
            gram_bound: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPropertyReport {
    pub max_abs_inner: f64,
    pub inner_threshold: f64,
    pub near_orthogonal: bool,
    pub gram_spectral_norm: f64,
    pub gram_bound: f64,
    pub gram_bounded: bool,
    pub neg_count: usize,
    pub neg_count_threshold: f64,
    pub few_negatives: bool,
    pub delta: f64,
}

impl DataPropertyReport {
    pub fn all_pass(&self) -> bool {
        self.near_orthogonal && self.gram_bounded && self.few_negatives
    }
}

/// Inner-product, Gram-norm and negative-count checks for sphere data.
pub fn check_data_properties(
    ds: &Dataset,
    thresholds: PropertyThresholds,
) -> Result<DataPropertyReport> {
    if ds.d() < 2 {
        return Err(Error::InvalidArgument(
            "data properties are defined for sphere data (d >= 2); use spacing_stats for d = 1"
                .into(),
        ));
    }
    if !(thresholds.delta > 0.0 && thresholds.delta < 1.0) {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    let m = ds.m();
    let d = ds.d() as f64;
    let x = ds.inputs();
    let gram = x.dot(&x.t());
    let mut max_abs_inner = 0.0f64;
    for i in 0..m {
        for j in (i + 1)..m {
            max_abs_inner = max_abs_inner.max(gram[[i, j]].abs());
        }
    }
    let inner_threshold = (2.0 * (3.0 * (m * m) as f64 / thresholds.delta).ln() / d).sqrt();
    let gram_spectral_norm = spectral_norm_psd(&gram, ds.seed());
    let neg_count = ds.negative_indices().len();
    let neg_count_threshold = 1.5 * ds.p() * m as f64;
    Ok(DataPropertyReport {
        max_abs_inner,
        inner_threshold,
        near_orthogonal: max_abs_inner <= inner_threshold,
        gram_spectral_norm,
        gram_bound: thresholds.gram_bound,
        gram_bounded: gram_spectral_norm <= thresholds.gram_bound,
        neg_count,
        neg_count_threshold,
        few_negatives: neg_count as f64 <= neg_count_threshold,
        delta: thresholds.delta,
    })
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a seeded random start (at most 200 iterations, stopping
/// at relative change 1e-8).
pub fn spectral_norm_psd(a: &Array2<f64>, seed: u64) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut rng = rng_from_seed(seed ^ 0x5eed_9a11);
    let mut u = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal).abs() + 1e-3);
    u /= u.dot(&u).sqrt();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = a.dot(&u);
        let next = u.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        u = w / norm;
        let converged = (next - lambda).abs() <= 1e-8 * next.abs();
        lambda = next;
        if converged {
            break;
        }
    }
    lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingStats {
    /// All `m + 1` spacings in input order: `x_(1)`, interior gaps, `1 - x_(m)`.
    pub ordered_gaps: Vec<f64>,
    /// Largest of the `m + 1` spacings.
    pub max_gap: f64,
    /// Largest gap between consecutive samples (boundary spacings excluded).
    pub max_interior_gap: f64,
    /// Interior gaps shorter than `1 / (10 (m + 1))`.
    pub small_gap_count: usize,
    /// Same threshold applied to all `m + 1` spacings.
    pub small_gap_count_all: usize,
    pub collision_flag: bool,
}

pub fn spacing_stats(ds: &Dataset) -> Result<SpacingStats> {
    if ds.d() != 1 {
        return Err(Error::InvalidArgument(
            "spacing statistics need d = 1".into(),
        ));
    }
    let mut xs: Vec<f64> = ds.inputs().column(0).to_vec();
    xs.sort_by(f64::total_cmp);
    Ok(spacing_stats_sorted(&xs))
}

pub(crate) fn spacing_stats_sorted(xs: &[f64]) -> SpacingStats {
    let m = xs.len();
    let mut gaps = Vec::with_capacity(m + 1);
    gaps.push(xs[0]);
    gaps.extend(xs.windows(2).map(|w| w[1] - w[0]));
    gaps.push(1.0 - xs[m - 1]);
    let small = 1.0 / (10.0 * (m + 1) as f64);
    let interior = &gaps[1..m];
    SpacingStats {
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        max_interior_gap: interior.iter().copied().fold(0.0, f64::max),
        small_gap_count: interior.iter().filter(|&&g| g < small).count(),
        small_gap_count_all: gaps.iter().filter(|&&g| g < small).count(),
        collision_flag: interior.contains(&0.0),
        ordered_gaps: gaps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_noise_has_no_negatives() {
        let ds = sample_dataset(3, 500, 0.0, 1).unwrap();
        assert!(ds.negative_indices().is_empty());
    }

    #[test]
    fn sphere_points_are_unit_norm() {
        let ds = sample_dataset(3, 200, 0.2, 9).unwrap();
        for row in ds.inputs().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn interval_mean_concentrates() {
        let m = 10_000;
        let ds = sample_dataset(1, m, 0.1, 4).unwrap();
        let mean = ds.inputs().column(0).mean().unwrap();
        assert!((mean - 0.5).abs() <= 3.0 / (12.0 * m as f64).sqrt());
        assert!(ds.inputs().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn invalid_noise_rejected() {
        assert!(sample_dataset(2, 10, 0.5, 0).is_err());
        assert!(sample_dataset(2, 10, -0.1, 0).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_dataset(5, 50, 0.3, 77).unwrap();
        let b = sample_dataset(5, 50, 0.3, 77).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_dataset(5, 50, 0.3, 78).unwrap());
    }

    #[test]
    fn label_noise_frequency() {
        let m = 100_000;
        let p = 0.2;
        let labels = sample_labels(m, p, &mut rng_from_seed(3));
        let freq = labels.iter().filter(|&&y| y < 0.0).count() as f64 / m as f64;
        assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / m as f64).sqrt());
    }

    #[test]
    fn orthonormal_rows_properties() {
        let mut x = Array2::zeros((3, 5));
        for i in 0..3 {
            x[[i, i]] = 1.0;
        }
        let ds = Dataset::from_parts(x, vec![1.0, 1.0, 1.0]).unwrap();
        let rep = check_data_properties(&ds, PropertyThresholds::default()).unwrap();
        assert_eq!(rep.max_abs_inner, 0.0);
        assert!((rep.gram_spectral_norm - 1.0).abs() < 1e-12);
        assert_eq!(rep.neg_count, 0);
        assert!(rep.few_negatives);
    }

    #[test]
    fn properties_reject_1d() {
        let ds = sample_dataset(1, 10, 0.1, 0).unwrap();
        assert!(check_data_properties(&ds, PropertyThresholds::default()).is_err());
    }

    #[test]
    fn equally_spaced_gaps() {
        let ds = Dataset::from_parts(array![[0.5], [0.25], [0.75]], vec![1.0, -1.0, 1.0]).unwrap();
        let s = spacing_stats(&ds).unwrap();
        assert_eq!(s.max_gap, 0.25);
        assert_eq!(s.small_gap_count, 0);
        assert!(!s.collision_flag);
        assert_eq!(s.ordered_gaps, vec![0.25; 4]);
    }

    #[test]
    fn duplicate_point_flags_collision() {
        let ds = Dataset::from_parts(array![[0.3], [0.3], [0.9]], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(spacing_stats(&ds).unwrap().collision_flag);
    }

    #[test]
    fn gaps_sum_to_one() {
        for seed in 0..20 {
            let ds = sample_dataset(1, 1 + seed as usize * 37, 0.1, seed).unwrap();
            let s = spacing_stats(&ds).unwrap();
            assert_eq!(s.ordered_gaps.len(), ds.m() + 1);
            assert!((s.ordered_gaps.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let ds = sample_dataset(4, 7, 0.25, 12).unwrap();
        assert_eq!(Dataset::from_json(&ds.to_json().unwrap()).unwrap(), ds);
    }
}

//! Label-noise sweeps over (d, m, n, depth, p, seed) grids persisted as CSV,
//! and Monte Carlo checks of the concentration lemmas the analysis uses.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_dataset, sample_labels, spacing_stats, spectral_norm_psd, sphere_point};
use crate::error::{Error, Result};
use crate::kkt::{bias_positivity_check, recover_duals, TRAINED_MARGIN_TOL};
use crate::net::{clean_error_mc, Network};
use crate::rng::{derive_seed, derived_rng};
use crate::train::{train, TrainConfig, TrainStatus};
use crate::univariate::{exact_clean_error_1d, to_piecewise};

pub const SWEEP_HEADER: [&str; 16] = [
    "d",
    "m",
    "n",
    "depth",
    "p",
    "seed",
    "train_errors_final",
    "interp_epoch",
    "clean_error",
    "clean_error_stderr",
    "bias_sum",
    "bias_gap",
    "kkt_residual",
    "norm_sq",
    "wall_time_s",
    "status",
];

/// One trained cell. Optional columns are empty when the statistic is not
/// defined for the cell (bias gap needs fixed output weights, KKT residual
/// needs an interpolating depth-2 net, bias sum needs depth 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub depth: usize,
    pub p: f64,
    pub seed: u64,
    pub train_errors_final: Option<usize>,
    pub interp_epoch: Option<usize>,
    pub clean_error: Option<f64>,
    pub clean_error_stderr: Option<f64>,
    pub bias_sum: Option<f64>,
    pub bias_gap: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub norm_sq: Option<f64>,
    pub wall_time_s: f64,
    /// `ok`, `not_interpolating`, `diverged` or `error: <message>`.
    pub status: String,
}

impl SweepRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            d: self.d,
            m: self.m,
            n: self.n,
            depth: self.depth,
            p_bits: self.p.to_bits(),
            seed: self.seed,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.status != "ok" && self.status != "not_interpolating"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub depth: usize,
    pub p_bits: u64,
    pub seed: u64,
}

impl CellKey {
    pub fn p(&self) -> f64 {
        f64::from_bits(self.p_bits)
    }
}

/// Grid and per-cell settings. `train.width`, `train.depth` and `train.seed`
/// are overridden per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub d: Vec<usize>,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub p: Vec<f64>,
    pub depth: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base_seed: u64,
    pub train: TrainConfig,
    /// Monte Carlo budget for the clean error when `d > 1`.
    pub mc_samples: usize,
    pub recover_kkt: bool,
    /// Save each trained network as JSON here when set.
    pub model_dir: Option<PathBuf>,
    pub workers: usize,
}

impl Default for SweepConfig {
    /// Desk-scale version of the dimension sweep: m = 500, width 200,
    /// d in {2, 50, 2000}, 5 seeds. On one core a 20k-epoch cell takes about
    /// 10 s at d = 2, 25 s at d = 50 and 140 s at d = 2000.
    fn default() -> Self {
        Self {
            d: vec![2, 50, 2000],
            m: vec![500],
            n: vec![200],
            p: vec![0.1, 0.2, 0.3, 0.4],
            depth: vec![2],
            seeds: (0..5).collect(),
            base_seed: 0,
            train: TrainConfig::default(),
            mc_samples: 100_000,
            recover_kkt: true,
            model_dir: None,
            workers: 1,
        }
    }
}

impl SweepConfig {
    /// The full grid: width 1000, m in {500, 2000},
    /// p in {0.05, ..., 0.5}, 10 seeds, depth 2 and 3. Hours per cell at the
    /// largest sizes on a single core.
    pub fn full_grid() -> Self {
        Self {
            d: vec![2, 10, 50, 100, 500, 1000, 2000, 5000, 10_000],
            m: vec![500, 2000],
            n: vec![1000],
            p: (1..=10).map(|k| k as f64 * 0.05).collect(),
            depth: vec![2, 3],
            seeds: (0..10).collect(),
            ..Self::default()
        }
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &d in &self.d {
            for &m in &self.m {
                for &n in &self.n {
                    for &depth in &self.depth {
                        for &p in &self.p {
                            for &seed in &self.seeds {
                                out.push(CellKey {
                                    d,
                                    m,
                                    n,
                                    depth,
                                    p_bits: p.to_bits(),
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let empty = [
            ("d", self.d.is_empty()),
            ("m", self.m.is_empty()),
            ("n", self.n.is_empty()),
            ("p", self.p.is_empty()),
            ("depth", self.depth.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidArgument(format!(
                "sweep grid has no values for {name}"
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Inputs depend only on `(d, m, seed)` so every `p` and width sees the same
/// points; training and Monte Carlo streams are keyed by the whole cell.
fn data_seed(base: u64, k: &CellKey) -> u64 {
    derive_seed(base, &[0xda7a, k.d as u64, k.m as u64, k.seed])
}

fn cell_seed(base: u64, k: &CellKey, stream: u64) -> u64 {
    derive_seed(
        base,
        &[
            stream,
            k.d as u64,
            k.m as u64,
            k.n as u64,
            k.depth as u64,
            k.p_bits,
            k.seed,
        ],
    )
}

pub fn model_file_name(k: &CellKey) -> String {
    format!(
        "d{}_m{}_n{}_L{}_p{}_s{}.json",
        k.d,
        k.m,
        k.n,
        k.depth,
        k.p(),
        k.seed
    )
}

/// Clean error of a trained net: exact for depth-2 nets on the interval,
/// Monte Carlo otherwise. Returns `(error, stderr)`.
pub fn clean_error(net: &Network, mc_samples: usize, seed: u64) -> Result<(f64, f64)> {
    if net.input_dim() == 1 && net.depth() == 2 {
        Ok((exact_clean_error_1d(&to_piecewise(net)?), 0.0))
    } else {
        let e = clean_error_mc(net, mc_samples, seed)?;
        Ok((e.point_estimate, e.std_error))
    }
}

pub fn run_cell(cfg: &SweepConfig, key: &CellKey) -> SweepRecord {
    let start = Instant::now();
    let mut rec = SweepRecord {
        d: key.d,
        m: key.m,
        n: key.n,
        depth: key.depth,
        p: key.p(),
        seed: key.seed,
        train_errors_final: None,
        interp_epoch: None,
        clean_error: None,
        clean_error_stderr: None,
        bias_sum: None,
        bias_gap: None,
        kkt_residual: None,
        norm_sq: None,
        wall_time_s: 0.0,
        status: String::new(),
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        fill_cell(cfg, key, &mut rec)
    }));
    rec.status = match outcome {
        Ok(Ok(status)) => status,
        Ok(Err(e)) => format!("error: {e}"),
        Err(_) => "error: panic".into(),
    };
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

fn fill_cell(cfg: &SweepConfig, key: &CellKey, rec: &mut SweepRecord) -> Result<String> {
    let ds = sample_dataset(key.d, key.m, key.p(), data_seed(cfg.base_seed, key))?;
    let tc = TrainConfig {
        width: key.n,
        depth: key.depth,
        seed: cell_seed(cfg.base_seed, key, 0x7a),
        ..cfg.train.clone()
    };
    let trace = train(&tc, &ds)?;
    let net = &trace.network;
    let last = trace.final_record();
    rec.train_errors_final = Some(last.train_errors);
    rec.interp_epoch = trace.interpolation_epoch;
    rec.norm_sq = Some(net.param_norm_sq());
    let (err, se) = clean_error(net, cfg.mc_samples, cell_seed(cfg.base_seed, key, 0x3c))?;
    rec.clean_error = Some(err);
    rec.clean_error_stderr = Some(se);
    if net.depth() == 2 {
        rec.bias_sum = Some(net.bias_sum()?);
        if !net.output_weights_trainable() {
            rec.bias_gap = Some(bias_positivity_check(net)?.bias_gap);
        }
    }
    if let Some(dir) = &cfg.model_dir {
        fs::create_dir_all(dir)?;
        net.save(dir.join(model_file_name(key)))?;
    }
    let interpolating = last.train_errors == 0;
    if cfg.recover_kkt && interpolating && net.depth() == 2 {
        let scaled = net.rescale_to_unit_margin(ds.inputs(), ds.labels())?;
        // a degenerate Q (every unit dead) leaves the residual undefined
        if let Ok(report) = recover_duals(&scaled, &ds, TRAINED_MARGIN_TOL) {
            rec.kkt_residual = Some(report.stationarity_rel_residual);
        }
    }
    Ok(match trace.status {
        TrainStatus::Diverged { .. } => "diverged".into(),
        TrainStatus::Completed if interpolating => "ok".into(),
        TrainStatus::Completed => "not_interpolating".into(),
    })
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != SWEEP_HEADER {
        return Err(Error::InvalidArgument(format!(
            "unexpected sweep CSV header {header:?}; expected {}",
            SWEEP_HEADER.join(",")
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepSummary {
    pub new_rows: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Run every cell of the grid not already present in `out`, appending one
/// row per cell as it finishes. Cells run on `cfg.workers` threads; rows go
/// through a single writer. A failing cell becomes a row with an error
/// status.
pub fn run_sweep(cfg: &SweepConfig, out: impl AsRef<Path>) -> Result<SweepSummary> {
    cfg.validate()?;
    let out = out.as_ref();
    let exists = out.exists() && fs::metadata(out)?.len() > 0;
    let done: HashSet<CellKey> = if exists {
        read_sweep(out)?.iter().map(SweepRecord::key).collect()
    } else {
        HashSet::new()
    };
    let mut seen = HashSet::new();
    let todo: Vec<CellKey> = cfg
        .cells()
        .into_iter()
        .filter(|k| !done.contains(k) && seen.insert(*k))
        .collect();
    let mut summary = SweepSummary {
        skipped: cfg.cells().len() - todo.len(),
        ..Default::default()
    };
    let file = OpenOptions::new().create(true).append(true).open(out)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if !exists {
        writer.write_record(SWEEP_HEADER)?;
        writer.flush()?;
    }
    if todo.is_empty() {
        return Ok(summary);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<SweepRecord>();
    let mut write_err = None;
    std::thread::scope(|s| {
        let todo = &todo;
        let pool = &pool;
        s.spawn(move || {
            pool.install(|| {
                todo.par_iter()
                    .with_max_len(1)
                    .for_each_with(tx, |tx, key| {
                        let _ = tx.send(run_cell(cfg, key));
                    })
            })
        });
        for rec in rx {
            if write_err.is_some() {
                continue;
            }
            summary.new_rows += 1;
            summary.failed += usize::from(rec.is_failure());
            if let Err(e) = writer
                .serialize(&rec)
                .and_then(|_| writer.flush().map_err(csv::Error::from))
            {
                write_err = Some(e);
            }
        }
    });
    match write_err {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// Mean and median clean error over the seeds of each `(d, m, n, depth, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub depth: usize,
    pub p: f64,
    pub runs: usize,
    pub interpolated: usize,
    pub mean_clean_error: f64,
    pub median_clean_error: f64,
}

pub fn summarize(records: &[SweepRecord]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, usize, usize, u64), Vec<&SweepRecord>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((r.d, r.m, r.n, r.depth, r.p.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((d, m, n, depth, p_bits), rs)| {
            let mut errs: Vec<f64> = rs.iter().filter_map(|r| r.clean_error).collect();
            errs.sort_by(f64::total_cmp);
            CellSummary {
                d,
                m,
                n,
                depth,
                p: f64::from_bits(p_bits),
                runs: rs.len(),
                interpolated: rs.iter().filter(|r| r.status == "ok").count(),
                mean_clean_error: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                median_clean_error: median(&errs),
            }
        })
        .collect()
}

/// Median of a sorted slice (NaN when empty).
pub fn median(sorted: &[f64]) -> f64 {
    let k = sorted.len();
    match k {
        0 => f64::NAN,
        _ if k % 2 == 1 => sorted[k / 2],
        _ => 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `Pr[|u.v| >= t] <= 2 exp(-d t^2 / 2)` for independent uniform unit vectors.
    InnerProductTail,
    /// Largest of the `m + 1` spacings of `m` uniform points exceeds
    /// `log(8(m+1)/delta) / (m+1)` with probability at most `delta / 4`.
    SpacingMaxGap,
    /// At least `(m+1)/8` interior gaps shorter than `1/(10(m+1))` with
    /// probability at most `delta / 4`.
    SpacingSmallGaps,
    /// `||X X^T - I|| >= c (sqrt((m+t)/d) + (m+t)/d)` with probability at
    /// most `2 e^{-t}`, for `m` uniform unit rows in `R^d`.
    GramNorm,
    /// More than `3pm/2` noisy labels with probability at most `exp(-pm/5)`.
    NegativeCount,
}

impl LemmaId {
    pub const ALL: [LemmaId; 5] = [
        LemmaId::InnerProductTail,
        LemmaId::SpacingMaxGap,
        LemmaId::SpacingSmallGaps,
        LemmaId::GramNorm,
        LemmaId::NegativeCount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LemmaId::InnerProductTail => "inner_product_tail",
            LemmaId::SpacingMaxGap => "spacing_max_gap",
            LemmaId::SpacingSmallGaps => "spacing_small_gaps",
            LemmaId::GramNorm => "gram_norm",
            LemmaId::NegativeCount => "negative_count",
        }
    }
}

impl std::str::FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = LemmaId::ALL.iter().map(|id| id.as_str()).collect();
                Error::InvalidArgument(format!(
                    "unknown lemma id {s:?}; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// Parameters shared by the verifiers; each lemma reads only the ones it
/// needs and reports those.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LemmaParams {
    pub d: usize,
    pub m: usize,
    pub t: f64,
    pub delta: f64,
    pub p: f64,
    /// Constant in the Gram-norm deviation bound.
    pub c: f64,
}

impl Default for LemmaParams {
    fn default() -> Self {
        Self {
            d: 100,
            m: 1000,
            t: 0.5,
            delta: 0.1,
            p: 0.1,
            c: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub id: LemmaId,
    pub params: BTreeMap<String, f64>,
    pub trials: usize,
    pub seed: u64,
    pub failures: usize,
    pub empirical_failure_rate: f64,
    pub theoretical_bound: f64,
    /// `3 sqrt(bound (1 - bound) / trials)`.
    pub margin_of_error: f64,
    pub consistent: bool,
}

pub const MIN_LEMMA_TRIALS: usize = 100;

/// Monte Carlo failure frequency of a concentration lemma against its bound.
/// Trial `k` uses its own stream derived from `(seed, k)`.
pub fn verify_lemma(
    id: LemmaId,
    params: LemmaParams,
    trials: usize,
    seed: u64,
) -> Result<LemmaVerdict> {
    if trials < MIN_LEMMA_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_LEMMA_TRIALS} trials, got {trials}"
        )));
    }
    let LemmaParams {
        d,
        m,
        t,
        delta,
        p,
        c,
    } = params;
    let need = |ok: bool, msg: &str| {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(msg.into()))
        }
    };
    let mut shown = BTreeMap::new();
    let trial_seed = |k: usize| derive_seed(seed, &[id as u64, k as u64]);
    let (bound, fails): (f64, Box<dyn Fn(usize) -> Result<bool> + Sync>) = match id {
        LemmaId::InnerProductTail => {
            need(
                d >= 2 && t > 0.0,
                "inner_product_tail needs d >= 2 and t > 0",
            )?;
            shown.extend([("d".to_string(), d as f64), ("t".to_string(), t)]);
            (
                2.0 * (-(d as f64) * t * t / 2.0).exp(),
                Box::new(move |k| {
                    let mut rng = derived_rng(trial_seed(k), &[]);
                    let u = sphere_point(&mut rng, d);
                    let v = sphere_point(&mut rng, d);
                    Ok(u.dot(&v).abs() >= t)
                }),
            )
        }
        LemmaId::SpacingMaxGap | LemmaId::SpacingSmallGaps => {
            need(
                m >= 2 && delta > 0.0 && delta < 1.0,
                "spacing lemmas need m >= 2 and delta in (0, 1)",
            )?;
            shown.extend([("m".to_string(), m as f64), ("delta".to_string(), delta)]);
            let m1 = (m + 1) as f64;
            let max_gap = (8.0 * m1 / delta).ln() / m1;
            (
                delta / 4.0,
                Box::new(move |k| {
                    let st = spacing_stats(&sample_dataset(1, m, 0.0, trial_seed(k))?)?;
                    Ok(match id {
                        LemmaId::SpacingMaxGap => st.max_gap > max_gap,
                        _ => st.small_gap_count as f64 >= m1 / 8.0,
                    })
                }),
            )
        }
        LemmaId::GramNorm => {
            need(
                d >= 2 && m >= 1 && t > 0.0 && c > 0.0,
                "gram_norm needs d >= 2, m >= 1, t > 0, c > 0",
            )?;
            shown.extend([
                ("d".to_string(), d as f64),
                ("m".to_string(), m as f64),
                ("t".to_string(), t),
                ("c".to_string(), c),
            ]);
            let r = (m as f64 + t) / d as f64;
            let threshold = c * (r.sqrt() + r);
            (
                2.0 * (-t).exp(),
                Box::new(move |k| {
                    let ds = sample_dataset(d, m, 0.0, trial_seed(k))?;
                    let x = ds.inputs();
                    let g = x.dot(&x.t());
                    Ok(gram_deviation(&g, trial_seed(k)) >= threshold)
                }),
            )
        }
        LemmaId::NegativeCount => {
            need(
                m >= 1 && p > 0.0 && p < 0.5,
                "negative_count needs m >= 1 and p in (0, 0.5)",
            )?;
            shown.extend([("m".to_string(), m as f64), ("p".to_string(), p)]);
            (
                (-p * m as f64 / 5.0).exp(),
                Box::new(move |k| {
                    let labels = sample_labels(m, p, &mut derived_rng(trial_seed(k), &[]));
                    let neg = labels.iter().filter(|&&y| y < 0.0).count();
                    Ok(neg as f64 > 1.5 * p * m as f64)
                }),
            )
        }
    };
    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|k| fails(k))
        .collect::<Result<_>>()?;
    let failures = outcomes.iter().filter(|&&f| f).count();
    let empirical_failure_rate = failures as f64 / trials as f64;
    let b = bound.min(1.0);
    let margin_of_error = 3.0 * (b * (1.0 - b) / trials as f64).sqrt();
    Ok(LemmaVerdict {
        id,
        params: shown,
        trials,
        seed,
        failures,
        empirical_failure_rate,
        theoretical_bound: bound,
        margin_of_error,
        consistent: empirical_failure_rate <= bound + margin_of_error,
    })
}

/// `||G - I||` for a PSD matrix `G`: the larger of `lambda_max - 1` and
/// `1 - lambda_min`, both by power iteration (the second on `s I - G`).
pub fn gram_deviation(g: &ndarray::Array2<f64>, seed: u64) -> f64 {
    let top = spectral_norm_psd(g, seed);
    let s = top * 1.01 + 1e-12;
    let mut flipped = -g;
    flipped.diag_mut().mapv_inplace(|v| v + s);
    let bottom = s - spectral_norm_psd(&flipped, seed);
    (top - 1.0).max(1.0 - bottom)
}

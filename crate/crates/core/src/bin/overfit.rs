use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use relu_overfit::constructions::{
    build_feasible_highdim, build_orthogonal_kkt, orthonormal_dataset, OrthogonalVariant,
};
use relu_overfit::data::{
    check_data_properties, sample_dataset, spacing_stats, Dataset, PropertyThresholds,
};
use relu_overfit::experiments::{run_sweep, verify_lemma, LemmaId, LemmaParams, SweepConfig};
use relu_overfit::kkt::{recover_duals, TRAINED_MARGIN_TOL};
use relu_overfit::net::{clean_error_mc, Network};
use relu_overfit::train::{train, TrainConfig};
use relu_overfit::univariate::{
    check_segment_structure, count_slope_increases, default_delta_grid, exact_clean_error_1d,
    local_min_falsifier, negative_run_witness, to_piecewise,
};
use relu_overfit::Result;

#[derive(Parser)]
#[command(
    name = "overfit",
    about = "Train ReLU nets on noisy labels and inspect how they overfit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a dataset (unit sphere for d >= 2, [0, 1] for d = 1).
    Gen {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also print the data property checks.
        #[arg(long)]
        check: bool,
    },
    /// Train a network and write it plus its trace.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TrainConfig as JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Recover KKT multipliers for a trained two-layer net.
    Kkt {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = TRAINED_MARGIN_TOL)]
        tol: f64,
        /// Use the net as is instead of rescaling to unit minimum margin.
        #[arg(long)]
        no_rescale: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact error and segment structure of a univariate net.
    Analyze1d {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        value_tol: f64,
        #[arg(long, default_value_t = 1e-6)]
        linearity_tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one of the hand-made networks.
    Construct {
        #[arg(long, value_enum)]
        kind: ConstructKind,
        /// Dataset to build on (required for `feasible`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Width of the feasible construction.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Comma-separated +-1 labels for orthonormal inputs.
        #[arg(long, allow_hyphen_values = true)]
        labels: Option<String>,
        /// Ambient dimension for orthonormal inputs.
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) a grid of training runs.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Use the full grid instead of the desk-scale one.
        #[arg(long)]
        full: bool,
    },
    /// Monte Carlo check of a concentration lemma.
    Lemma {
        #[arg(long)]
        id: LemmaId,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstructKind {
    Feasible,
    Orthogonal,
    OrthogonalBalanced,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen {
            d,
            m,
            p,
            seed,
            out,
            check,
        } => {
            let ds = sample_dataset(d, m, p, seed)?;
            ds.save(&out)?;
            eprintln!(
                "wrote {} samples ({} noisy) to {}",
                m,
                ds.negative_indices().len(),
                out.display()
            );
            if check {
                if d == 1 {
                    let mut st = spacing_stats(&ds)?;
                    st.ordered_gaps.clear();
                    emit(&st, None)?;
                } else {
                    emit(
                        &check_data_properties(&ds, PropertyThresholds::default())?,
                        None,
                    )?;
                }
            }
        }
        Cmd::Train {
            data,
            config,
            width,
            epochs,
            lr,
            seed,
            out,
            trace,
        } => {
            let ds = Dataset::load(&data)?;
            let mut cfg: TrainConfig = match config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
                None => TrainConfig::default(),
            };
            cfg.width = width.unwrap_or(cfg.width);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let result = train(&cfg, &ds)?;
            result.network.save(&out)?;
            if let Some(path) = trace {
                result.write_csv(path)?;
            }
            let last = result.final_record();
            eprintln!(
                "epoch {}: {} training errors, min margin {:.4}, interpolated at {:?}, status {:?}",
                last.epoch,
                last.train_errors,
                last.min_margin,
                result.interpolation_epoch,
                result.status
            );
        }
        Cmd::Kkt {
            net,
            data,
            tol,
            no_rescale,
            out,
        } => {
            let mut net = Network::load(net)?;
            let ds = Dataset::load(data)?;
            if !no_rescale {
                net = net.rescale_to_unit_margin(ds.inputs(), ds.labels())?;
            }
            emit(&recover_duals(&net, &ds, tol)?, out.as_deref())?;
        }
        Cmd::Analyze1d {
            net,
            data,
            value_tol,
            linearity_tol,
            out,
        } => {
            let net = Network::load(net)?;
            let ds = Dataset::load(data)?;
            let pw = to_piecewise(&net)?;
            #[derive(Serialize)]
            struct Analysis {
                exact_clean_error: f64,
                slope_increases: usize,
                negative_runs: Vec<relu_overfit::univariate::NegativeRun>,
                /// Only defined for interpolating nets.
                segments: Option<relu_overfit::univariate::SegmentReport>,
                falsifier: Option<relu_overfit::univariate::FalsifierResult>,
            }
            let falsifier = net
                .rescale_to_unit_margin(ds.inputs(), ds.labels())
                .and_then(|scaled| local_min_falsifier(&scaled, &ds, &default_delta_grid()))
                .ok();
            let report = Analysis {
                exact_clean_error: exact_clean_error_1d(&pw),
                slope_increases: count_slope_increases(&pw, 0.0, 1.0)?,
                negative_runs: negative_run_witness(&pw, &ds)?,
                segments: check_segment_structure(&net, &ds, value_tol, linearity_tol).ok(),
                falsifier,
            };
            emit(&report, out.as_deref())?;
        }
        Cmd::Construct {
            kind,
            data,
            n,
            labels,
            d,
            mc_samples,
            seed,
            out,
        } => {
            let ds = match (&data, &labels) {
                (Some(path), _) => Dataset::load(path)?,
                (None, Some(text)) => {
                    let ys = text
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| {
                            relu_overfit::Error::InvalidArgument(format!("bad label list: {e}"))
                        })?;
                    orthonormal_dataset(d.unwrap_or(ys.len()), ys)?
                }
                (None, None) => {
                    return Err(relu_overfit::Error::InvalidArgument(
                        "pass --data or --labels".into(),
                    ));
                }
            };
            #[derive(Serialize)]
            struct Built {
                per_sample_margins: Vec<f64>,
                norm_sq: f64,
                claimed_bound: Option<f64>,
                bias_sum: f64,
                duals: Option<Vec<f64>>,
                stationarity_rel_residual: Option<f64>,
                clean_error: f64,
                clean_error_stderr: f64,
                lower_bound: Option<f64>,
            }
            let (net, built) = match kind {
                ConstructKind::Feasible => {
                    let r = build_feasible_highdim(&ds, n)?;
                    let e = clean_error_mc(&r.net, mc_samples, seed)?;
                    let built = Built {
                        per_sample_margins: r.per_sample_margins,
                        norm_sq: r.norm_sq,
                        claimed_bound: Some(r.claimed_bound),
                        bias_sum: r.bias_sum,
                        duals: None,
                        stationarity_rel_residual: None,
                        clean_error: e.point_estimate,
                        clean_error_stderr: e.std_error,
                        lower_bound: None,
                    };
                    (r.net, built)
                }
                ConstructKind::Orthogonal | ConstructKind::OrthogonalBalanced => {
                    let variant = match kind {
                        ConstructKind::Orthogonal => OrthogonalVariant::FixedOutputs,
                        _ => OrthogonalVariant::Balanced,
                    };
                    let r = build_orthogonal_kkt(&ds, variant, mc_samples, seed)?;
                    let built = Built {
                        per_sample_margins: r.per_sample_margins,
                        norm_sq: r.net.param_norm_sq(),
                        claimed_bound: None,
                        bias_sum: 0.0,
                        duals: Some(r.kkt.duals),
                        stationarity_rel_residual: Some(r.kkt.stationarity_rel_residual),
                        clean_error: r.mc_error.point_estimate,
                        clean_error_stderr: r.mc_error.std_error,
                        lower_bound: Some(r.lower_bound),
                    };
                    (r.net, built)
                }
            };
            emit(&built, None)?;
            if let Some(path) = out {
                net.save(path)?;
            }
        }
        Cmd::Sweep {
            config,
            out,
            workers,
            full,
        } => {
            let mut cfg = match (config, full) {
                (Some(path), _) => SweepConfig::load(path)?,
                (None, true) => SweepConfig::full_grid(),
                (None, false) => SweepConfig::default(),
            };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let s = run_sweep(&cfg, &out)?;
            eprintln!(
                "{} new rows, {} skipped, {} failed",
                s.new_rows, s.skipped, s.failed
            );
        }
        Cmd::Lemma {
            id,
            trials,
            seed,
            d,
            m,
            t,
            delta,
            p,
            c,
            out,
        } => {
            let base = LemmaParams::default();
            let params = LemmaParams {
                d: d.unwrap_or(base.d),
                m: m.unwrap_or(base.m),
                t: t.unwrap_or(base.t),
                delta: delta.unwrap_or(base.delta),
                p: p.unwrap_or(base.p),
                c: c.unwrap_or(base.c),
            };
            emit(&verify_lemma(id, params, trials, seed)?, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

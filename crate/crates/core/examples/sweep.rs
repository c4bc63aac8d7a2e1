//! A small resumable sweep over dimension and noise rate.
//!
//! cargo run --release --example sweep [out.csv]

use relu_overfit::experiments::{read_sweep, run_sweep, summarize, SweepConfig};
use relu_overfit::train::TrainConfig;

fn main() -> relu_overfit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sweep_example.csv"));
    let cfg = SweepConfig {
        d: vec![2, 200],
        m: vec![40],
        n: vec![20],
        p: vec![0.1, 0.3],
        seeds: vec![0, 1],
        mc_samples: 20_000,
        train: TrainConfig {
            epochs: 2000,
            ..TrainConfig::default()
        },
        ..SweepConfig::default()
    };
    let s = run_sweep(&cfg, &out)?;
    println!(
        "{} new rows, {} already present, {} failed",
        s.new_rows, s.skipped, s.failed
    );
    for c in summarize(&read_sweep(&out)?) {
        println!(
            "d = {:>4} p = {:.1}: mean clean error {:.4}, interpolated {}",
            c.d, c.p, c.mean_clean_error, c.interpolated
        );
    }
    println!("rows in {}", out.display());
    Ok(())
}

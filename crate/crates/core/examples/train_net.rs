//! Train a two-layer ReLU net on noisy labels in high dimension and report
//! interpolation and clean error.
//!
//! cargo run --release --example train_net

use relu_overfit::data::sample_dataset;
use relu_overfit::net::clean_error_mc;
use relu_overfit::train::{interpolates, train, TrainConfig};

fn main() -> relu_overfit::Result<()> {
    let ds = sample_dataset(1000, 60, 0.1, 3)?;
    let cfg = TrainConfig {
        width: 40,
        epochs: 3000,
        stop_at_interpolation: true,
        seed: 3,
        ..TrainConfig::default()
    };
    let trace = train(&cfg, &ds)?;
    let last = trace.final_record();
    println!(
        "epoch {}: {} training errors, loss {:.4}, normalized margin {:.3e}",
        last.epoch, last.train_errors, last.loss, last.norm_margin
    );
    println!("interpolates: {}", interpolates(&trace.network, &ds)?.flag);
    let err = clean_error_mc(&trace.network, 50_000, 1)?;
    println!(
        "clean error {:.4} +- {:.4} with {} noisy labels out of {}",
        err.point_estimate,
        err.std_error,
        ds.negative_indices().len(),
        ds.m()
    );
    Ok(())
}

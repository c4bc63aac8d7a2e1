//! Sample a noisy-label dataset and run the structural checks on it.
//!
//! cargo run --example gen_data

use relu_overfit::data::{
    check_data_properties, sample_dataset, spacing_stats, PropertyThresholds,
};

fn main() -> relu_overfit::Result<()> {
    let sphere = sample_dataset(2000, 50, 0.1, 7)?;
    println!(
        "sphere: d = {}, m = {}, {} flipped labels",
        sphere.d(),
        sphere.m(),
        sphere.negative_indices().len()
    );
    let report = check_data_properties(&sphere, PropertyThresholds::default())?;
    println!(
        "  max |<x_i, x_k>| = {:.4} (threshold {:.4}), ||XX^T|| = {:.3}, all checks pass: {}",
        report.max_abs_inner,
        report.inner_threshold,
        report.gram_spectral_norm,
        report.all_pass()
    );

    let line = sample_dataset(1, 200, 0.2, 7)?;
    let gaps = spacing_stats(&line)?;
    println!(
        "interval: largest spacing {:.4}, {} short gaps",
        gaps.max_gap, gaps.small_gap_count
    );

    let path = std::env::temp_dir().join("gen_data_example.json");
    sphere.save(&path)?;
    let back = relu_overfit::data::Dataset::load(&path)?;
    println!(
        "saved to {} and reloaded bit-exact: {}",
        path.display(),
        back == sphere
    );
    Ok(())
}

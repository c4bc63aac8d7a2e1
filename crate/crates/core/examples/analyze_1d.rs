//! Exact clean error and structural diagnostics of a univariate interpolator.
//!
//! cargo run --release --example analyze_1d

use relu_overfit::data::sample_dataset;
use relu_overfit::univariate::{
    check_segment_structure, count_slope_increases, default_delta_grid, exact_clean_error_1d,
    linear_spline_network, local_min_falsifier, negative_run_witness, to_piecewise,
};

fn main() -> relu_overfit::Result<()> {
    let ds = sample_dataset(1, 40, 0.2, 5)?;
    let order = ds.sorted_order();
    let xs: Vec<f64> = order.iter().map(|&i| ds.inputs()[[i, 0]]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| ds.labels()[i]).collect();
    let net = linear_spline_network(&xs, &ys)?;
    let pw = to_piecewise(&net)?;

    println!(
        "exact clean error of the spline: {:.4}",
        exact_clean_error_1d(&pw)
    );
    println!(
        "slope increases on [0, 1]: {}",
        count_slope_increases(&pw, 0.0, 1.0)?
    );
    for run in negative_run_witness(&pw, &ds)? {
        println!(
            "negative run at {} of length {}: witness {:?}",
            run.start, run.len, run.witness
        );
    }
    let report = check_segment_structure(&net, &ds, 1e-9, 1e-9)?;
    println!("segment structure holds: {}", report.all_pass());
    let search = local_min_falsifier(&net, &ds, &default_delta_grid())?;
    match search.found {
        Some(step) => println!(
            "norm can drop from {:.3} to {:.3} via {:?}",
            step.norm_sq_before, step.norm_sq_after, step.perturbation
        ),
        None => println!("{}", search.note),
    }
    Ok(())
}

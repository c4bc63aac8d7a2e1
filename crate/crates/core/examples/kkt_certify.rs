//! Recover KKT multipliers for a trained interpolator and for an exact
//! construction, and compare the stationarity residuals.
//!
//! cargo run --release --example kkt_certify

use relu_overfit::constructions::{build_orthogonal_kkt, orthonormal_dataset, OrthogonalVariant};
use relu_overfit::data::sample_dataset;
use relu_overfit::kkt::{recover_duals, TRAINED_MARGIN_TOL};
use relu_overfit::train::{train, TrainConfig};

fn main() -> relu_overfit::Result<()> {
    let labels = vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0];
    let ds = orthonormal_dataset(8, labels)?;
    let exact = build_orthogonal_kkt(&ds, OrthogonalVariant::FixedOutputs, 20_000, 0)?;
    println!(
        "construction: residual {:.1e}, duals {:?}",
        exact.kkt.stationarity_rel_residual, exact.kkt.duals
    );

    let ds = sample_dataset(500, 30, 0.1, 11)?;
    let cfg = TrainConfig {
        width: 20,
        epochs: 4000,
        seed: 11,
        ..TrainConfig::default()
    };
    let net = train(&cfg, &ds)?.network;
    match net.rescale_to_unit_margin(ds.inputs(), ds.labels()) {
        Ok(unit) => {
            let rep = recover_duals(&unit, &ds, TRAINED_MARGIN_TOL)?;
            println!(
                "trained net: residual {:.3e}, support {} of {}, comp. slackness {:.2e}",
                rep.stationarity_rel_residual,
                rep.support_set.len(),
                ds.m(),
                rep.comp_slack_violation
            );
        }
        Err(e) => println!("trained net does not interpolate: {e}"),
    }
    Ok(())
}

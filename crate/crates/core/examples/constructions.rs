//! Hand-built interpolators: a norm-bounded one for generic high-dimensional
//! data and an exact KKT point on orthogonal data.
//!
//! cargo run --release --example constructions

use relu_overfit::constructions::{
    build_feasible_highdim, build_orthogonal_kkt, negative_orthant_mass, orthonormal_dataset,
    OrthogonalVariant,
};
use relu_overfit::data::sample_dataset;

fn main() -> relu_overfit::Result<()> {
    let ds = sample_dataset(20_000, 20, 0.2, 1)?;
    let r = build_feasible_highdim(&ds, 4)?;
    println!(
        "feasible: min margin {:.3}, norm^2 {:.3}, bias sum {:.3}",
        r.min_margin, r.norm_sq, r.bias_sum
    );

    let ds = orthonormal_dataset(
        12,
        vec![1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0],
    )?;
    for variant in [OrthogonalVariant::FixedOutputs, OrthogonalVariant::Balanced] {
        let r = build_orthogonal_kkt(&ds, variant, 100_000, 2)?;
        println!(
            "{variant:?}: residual {:.1e}, clean error {:.4} (lower bound {:.4})",
            r.kkt.stationarity_rel_residual, r.mc_error.point_estimate, r.lower_bound
        );
        let orthant = negative_orthant_mass(&r.net, 100_000, 3)?;
        println!(
            "  mass where every positive-output neuron is off: {:.4}",
            orthant.point_estimate
        );
    }
    Ok(())
}

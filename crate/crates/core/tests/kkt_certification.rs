mod common;

use relu_overfit::constructions::{build_orthogonal_kkt, orthonormal_dataset, OrthogonalVariant};
use relu_overfit::data::{sample_dataset, Dataset};
use relu_overfit::kkt::{
    bias_positivity_check, kkt_distance_along_training, recover_duals, TRAINED_MARGIN_TOL,
};
use relu_overfit::net::random_two_layer;
use relu_overfit::rng::rng_from_seed;
use relu_overfit::train::{train, TrainConfig};

#[test]
fn orthogonal_construction_with_two_noisy_labels() {
    let ds = orthonormal_dataset(8, vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0]).unwrap();
    let r = build_orthogonal_kkt(&ds, OrthogonalVariant::FixedOutputs, 10_000, 0).unwrap();
    assert_eq!(r.net.width(), 3);
    assert!(r.kkt.stationarity_rel_residual <= 1e-12);
    for l in &r.kkt.duals {
        assert!((l - 1.0).abs() <= 1e-10);
    }
    for m in &r.per_sample_margins {
        assert!((m - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn random_network_is_far_from_stationary() {
    let mut rng = rng_from_seed(77);
    let mut residuals = Vec::new();
    for _ in 0..10 {
        let net = random_two_layer(&mut rng, 30, 12, 1.0);
        let ds = sample_dataset(30, 8, 0.0, 5).unwrap();
        // label each point by the net's own sign so that it interpolates
        let out = net.forward_batch(ds.inputs()).unwrap();
        let labels: Vec<f64> = out.iter().map(|o| o.signum()).collect();
        let ds = Dataset::from_parts(ds.inputs().to_owned(), labels).unwrap();
        let unit = net
            .rescale_to_unit_margin(ds.inputs(), ds.labels())
            .unwrap();
        residuals.push(
            recover_duals(&unit, &ds, TRAINED_MARGIN_TOL)
                .unwrap()
                .stationarity_rel_residual,
        );
    }
    residuals.sort_by(f64::total_cmp);
    assert!(residuals[5] > 0.1, "{residuals:?}");
}

#[test]
fn distance_series_skips_non_interpolating_checkpoints_and_ignores_scale() {
    let ds = orthonormal_dataset(8, vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0]).unwrap();
    let exact = build_orthogonal_kkt(&ds, OrthogonalVariant::Balanced, 1000, 0)
        .unwrap()
        .net;
    let flipped = exact.scale_trainable(-1.0);
    let checkpoints = vec![
        (0, flipped),
        (10, exact.clone()),
        (20, exact.scale_trainable(0.2)),
        (30, exact.scale_trainable(40.0)),
    ];
    let series = kkt_distance_along_training(&checkpoints, &ds, 1e-9).unwrap();
    let epochs: Vec<usize> = series.iter().map(|(e, _)| *e).collect();
    assert_eq!(epochs, vec![10, 20, 30]);
    for (_, rep) in &series {
        assert!(rep.stationarity_rel_residual <= 1e-10);
        assert!((rep.min_margin - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn trained_checkpoints_approach_stationarity() {
    let ds = sample_dataset(200, 10, 0.1, 4).unwrap();
    let cfg = TrainConfig {
        width: 10,
        epochs: 20_000,
        checkpoint_every: Some(2000),
        seed: 4,
        ..TrainConfig::default()
    };
    let trace = train(&cfg, &ds).unwrap();
    let series = kkt_distance_along_training(&trace.checkpoints, &ds, TRAINED_MARGIN_TOL).unwrap();
    assert!(series.len() >= 2);
    let first = series[0].1.stationarity_rel_residual;
    let last = series[series.len() - 1].1.stationarity_rel_residual;
    assert!(last < first, "residual {first} -> {last}");
}

#[test]
fn fixed_output_nets_in_high_dimension_have_positive_bias_gap() {
    let mut positive = 0;
    for seed in 0..10 {
        let ds = sample_dataset(10_000, 50, 0.05, 100 + seed).unwrap();
        let cfg = TrainConfig {
            width: 8,
            epochs: 2000,
            output_weights_trainable: false,
            seed,
            ..TrainConfig::default()
        };
        let net = train(&cfg, &ds).unwrap().network;
        positive += usize::from(bias_positivity_check(&net).unwrap().bias_gap > 0.0);
    }
    assert!(positive >= 8, "bias gap positive in {positive}/10 runs");
}

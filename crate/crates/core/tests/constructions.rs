use ndarray::{array, Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

use relu_overfit::constructions::{
    build_orthogonal_kkt, negative_orthant_mass, orthonormal_dataset, OrthogonalVariant,
};
use relu_overfit::net::Network;
use relu_overfit::rng::rng_from_seed;

#[test]
fn orthant_mass_of_two_orthogonal_positive_neurons() {
    let mut w = Array2::zeros((3, 10));
    w[[0, 0]] = 1.0;
    w[[1, 3]] = 2.0;
    w[[2, 5]] = 1.0;
    let net = Network::bias_free(w.clone(), array![1.0, 0.5, -1.0]).unwrap();
    let est = negative_orthant_mass(&net, 200_000, 1).unwrap();

    // direct oracle: Gaussian directions, both positive neurons off
    let mut rng = rng_from_seed(2);
    let trials = 200_000;
    let hits = (0..trials)
        .filter(|_| {
            let g: Array1<f64> = Array1::from_shape_fn(10, |_| StandardNormal.sample(&mut rng));
            g[0] < 0.0 && g[3] < 0.0
        })
        .count();
    let oracle = hits as f64 / trials as f64;
    assert!((est.point_estimate - 0.25).abs() <= 4.0 * est.std_error);
    assert!((est.point_estimate - oracle).abs() <= 0.01);
}

#[test]
fn orthant_mass_lower_bounds_the_clean_error() {
    let labels = vec![1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
    let ds = orthonormal_dataset(9, labels).unwrap();
    for variant in [OrthogonalVariant::FixedOutputs, OrthogonalVariant::Balanced] {
        let r = build_orthogonal_kkt(&ds, variant, 100_000, 3).unwrap();
        let orthant = negative_orthant_mass(&r.net, 100_000, 4).unwrap();
        let slack = 4.0 * (orthant.std_error + r.mc_error.std_error);
        assert!(orthant.point_estimate <= r.mc_error.point_estimate + slack);
        assert!(r.mc_error.point_estimate >= r.lower_bound - slack);
    }
}

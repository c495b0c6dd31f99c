use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ttmfg::cross::{fit, CrossConfig};
use ttmfg::tt::TensorTrain;

// Sum of two separable cubics: exactly rank 2 in a degree-3 basis.
fn low_rank(x: &[f64]) -> f64 {
    let a: f64 = x.iter().enumerate().map(|(i, &v)| 1.0 + 0.3 * v + 0.1 * (i as f64) * v * v).product();
    let b: f64 = x.iter().map(|&v| 0.5 - v * v * v).product();
    a + b
}

#[test]
fn cross_recovers_a_rank_two_polynomial() {
    let bases = TensorTrain::uniform_bases(4, 3, 1.0).unwrap();
    let out = fit(&low_rank, &bases, &CrossConfig::uniform(4, 2), None).unwrap();
    assert!(out.diagnostics.converged);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = (out.tt.evaluate(&x).unwrap() - low_rank(&x)).abs();
        assert!(err < 1e-10, "error {err:e} at {x:?}");
    }
}

#[test]
fn surplus_rank_still_recovers_the_function() {
    let bases = TensorTrain::uniform_bases(4, 3, 1.0).unwrap();
    let out = fit(&low_rank, &bases, &CrossConfig::uniform(4, 4), None).unwrap();
    let x = [0.2, -0.7, 0.9, -0.1];
    assert!((out.tt.evaluate(&x).unwrap() - low_rank(&x)).abs() < 1e-9);
}

#[test]
fn same_seed_gives_identical_fits() {
    let bases = TensorTrain::uniform_bases(3, 5, 1.0).unwrap();
    let f = |x: &[f64]| (x[0] + 0.5 * x[1] - x[2]).sin();
    let config = CrossConfig::uniform(3, 3);
    let a = fit(&f, &bases, &config, None).unwrap();
    let b = fit(&f, &bases, &config, None).unwrap();
    for (ca, cb) in a.tt.cores().iter().zip(b.tt.cores()) {
        assert_eq!(ca, cb);
    }
}

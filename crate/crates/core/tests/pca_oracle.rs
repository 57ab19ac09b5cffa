mod common;

use common::{jacobi_eigen, oracle_residual, pca_oracle_check, random_window};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usage_anomaly::pca::{fit_components, standardize};

const TOL: f64 = 1e-8;

#[test]
fn jacobi_oracle_diagonalizes() {
    let a = vec![vec![4.0, 1.0, 2.0], vec![1.0, 3.0, 0.5], vec![2.0, 0.5, 5.0]];
    let (values, vectors) = jacobi_eigen(a.clone());
    assert!((values.iter().sum::<f64>() - 12.0).abs() < 1e-12);
    for k in 0..3 {
        for i in 0..3 {
            let av: f64 = (0..3).map(|j| a[i][j] * vectors[j][k]).sum();
            assert!((av - values[k] * vectors[i][k]).abs() < 1e-12);
        }
    }
}

#[test]
fn ten_by_four_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rows, today) = random_window(&mut rng, 10, 4);
    let m = DMatrix::from_fn(10, 4, |i, j| rows[i][j]);
    let basis = fit_components(&standardize(m.as_view()).unwrap()).unwrap();
    let (values, _) = oracle_residual(&rows, &today, 1);
    for (a, b) in basis.eigenvalues.iter().zip(&values) {
        assert!((a - b).abs() < TOL, "{a} vs {b}");
    }
}

#[test]
fn hundred_random_windows_match_oracle() {
    let report = pca_oracle_check(100, 2016);
    assert_eq!(report.windows, 100);
    assert!(report.max_eigenvalue_error < TOL, "{report:?}");
    assert!(report.max_residual_error < TOL, "{report:?}");
}

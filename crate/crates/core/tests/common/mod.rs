//! Independent reference computations shared by integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use usage_anomaly::pca::{fit_components, residual_vector, select_components, standardize, ComponentPolicy};

/// Cyclic Jacobi eigensolver for a symmetric matrix given as rows.
/// Returns eigenvalues in descending order and matching eigenvectors
/// (as columns of the second result, indexed `[row][component]`).
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let norm: f64 = a.iter().flatten().map(|x| x * x).sum();
    for _sweep in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-30 * norm.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p][k], a[q][k]);
                    a[p][k] = c * pk - s * qk;
                    a[q][k] = s * pk + c * qk;
                }
                for row in v.iter_mut() {
                    let (kp, kq) = (row[p], row[q]);
                    row[p] = c * kp - s * kq;
                    row[q] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Standardizes `rows` (w × n) and the extra observation `today` with
/// sample statistics, forms the covariance of the standardized window
/// explicitly, and removes the projection onto the leading `p`
/// eigenvectors. Returns eigenvalues and the residual.
pub fn oracle_residual(rows: &[Vec<f64>], today: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let w = rows.len();
    let n = rows[0].len();
    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    for j in 0..n {
        means[j] = rows.iter().map(|r| r[j]).sum::<f64>() / w as f64;
        let ss: f64 = rows.iter().map(|r| (r[j] - means[j]).powi(2)).sum();
        sds[j] = (ss / (w as f64 - 1.0)).sqrt();
    }
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..n).map(|j| (r[j] - means[j]) / sds[j]).collect())
        .collect();
    let mut cov = vec![vec![0.0; n]; n];
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = z.iter().map(|r| r[i] * r[j]).sum::<f64>() / (w as f64 - 1.0);
        }
    }
    let (values, vectors) = jacobi_eigen(cov);
    let x: Vec<f64> = (0..n).map(|j| (today[j] - means[j]) / sds[j]).collect();
    let mut residual = x.clone();
    for k in 0..p {
        let dot: f64 = (0..n).map(|j| x[j] * vectors[j][k]).sum();
        for j in 0..n {
            residual[j] -= dot * vectors[j][k];
        }
    }
    (values, residual)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReport {
    pub windows: usize,
    pub max_eigenvalue_error: f64,
    pub max_residual_error: f64,
}

/// Random window of `w + 1` correlated rows: `w` to fit and one to test.
pub fn random_window(rng: &mut ChaCha8Rng, w: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let factors = rng.random_range(1..=n);
    let loadings: Vec<Vec<f64>> = (0..factors)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut row = || -> Vec<f64> {
        let f: Vec<f64> = (0..factors).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|j| {
                let signal: f64 = (0..factors).map(|k| f[k] * loadings[k][j]).sum();
                100.0 + 10.0 * signal + rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = (0..w).map(|_| row()).collect();
    let today = row();
    (rows, today)
}

/// Compares the library pipeline with [`oracle_residual`] on `trials`
/// random windows with w ≤ 60 and n ≤ 10.
pub fn pca_oracle_check(trials: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = OracleReport::default();
    for _ in 0..trials {
        let n = rng.random_range(2..=10);
        let w = rng.random_range(n + 2..=60);
        let p = rng.random_range(1..n);
        let (rows, today) = random_window(&mut rng, w, n);

        let m = DMatrix::from_fn(w, n, |i, j| rows[i][j]);
        let std = standardize(m.as_view()).unwrap();
        let basis = select_components(fit_components(&std).unwrap(), ComponentPolicy::Fixed(p)).unwrap();
        let residual = residual_vector(&basis, &std.standardize_row(&today).unwrap()).unwrap();

        let (values, expected) = oracle_residual(&rows, &today, p);
        for (a, b) in basis.eigenvalues.iter().zip(&values) {
            report.max_eigenvalue_error = report.max_eigenvalue_error.max((a - b).abs());
        }
        for (a, b) in residual.iter().zip(&expected) {
            report.max_residual_error = report.max_residual_error.max((a - b).abs());
        }
        report.windows += 1;
    }
    report
}

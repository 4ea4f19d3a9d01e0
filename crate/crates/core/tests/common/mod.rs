#![allow(dead_code)]

use papc::linop::{Matrix, Vector};
use papc::monotone::ProxFunction;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gauss_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric positive definite with eigenvalues in `[0.5, 3]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let q = gauss_matrix(rng, n, n).qr().q();
    let d = Vector::from_fn(n, |_, _| rng.random_range(0.5..3.0));
    &q * Matrix::from_diagonal(&d) * q.transpose()
}

/// Pairs of points at scale `scale`.
pub fn pairs(rng: &mut ChaCha8Rng, n: usize, count: usize, scale: f64) -> Vec<(Vector, Vector)> {
    (0..count)
        .map(|_| (gauss(rng, n) * scale, gauss(rng, n) * scale))
        .collect()
}

/// One instance of every closed-form function kind in dimension `n`.
pub fn random_functions(rng: &mut ChaCha8Rng, n: usize) -> Vec<ProxFunction> {
    let lo = Vector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
    let hi = &lo + Vector::from_fn(n, |_, _| rng.random_range(0.0..3.0));
    let weights = Vector::from_fn(n, |_, _| rng.random_range(0.0..2.0));
    let a = gauss_matrix(rng, n + 1, n);
    let b = gauss(rng, n + 1);
    vec![
        ProxFunction::zero(n),
        ProxFunction::squared_distance(gauss(rng, n)),
        ProxFunction::l1(weights).unwrap(),
        ProxFunction::boxed(lo.clone(), hi.clone()).unwrap(),
        ProxFunction::singleton(gauss(rng, n)),
        ProxFunction::box_support(lo, hi).unwrap(),
        ProxFunction::least_squares(a, b).unwrap(),
    ]
}

/// `λ_max(U^{1/2} L P L' U^{1/2})` by a dense symmetric eigendecomposition.
pub fn dense_lambda_max(u: &Matrix, l: &Matrix, p: &Matrix) -> f64 {
    let eig = u.clone().symmetric_eigen();
    let sqrt = &eig.eigenvectors
        * Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let s = &sqrt * l * p * l.transpose() * &sqrt;
    let s = (&s + s.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.max()
}

pub fn max_abs(v: &Vector) -> f64 {
    v.amax()
}

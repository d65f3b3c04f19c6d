//! Seeded synthetic weight matrices used by tests, benchmarks and the
//! acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// i.i.d. `N(0, std²)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64) -> Matrix {
    let mut rng = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| {
        std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    })
}

/// `A·Bᵀ + E` with `A ∈ R^{rows×rank}`, `B ∈ R^{cols×rank}` standard normal
/// and `E` i.i.d. `N(0, noise_std²)`.
pub fn planted_low_rank(rows: usize, cols: usize, rank: usize, noise_std: f64, seed: u64) -> Matrix {
    let a = gaussian_matrix(rows, rank, 1.0, seed.wrapping_mul(3).wrapping_add(1));
    let b = gaussian_matrix(cols, rank, 1.0, seed.wrapping_mul(3).wrapping_add(2));
    let e = gaussian_matrix(rows, cols, noise_std, seed.wrapping_mul(3).wrapping_add(3));
    let signal = a.matmul(&b.transpose()).expect("conformable");
    Matrix::from_fn(rows, cols, |r, c| signal.get(r, c) + e.get(r, c))
}

/// Random orthogonal matrix from Gram–Schmidt on a Gaussian draw.
pub fn orthogonal_matrix(n: usize, seed: u64) -> Matrix {
    let g = gaussian_matrix(n, n, 1.0, seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for c in 0..n {
        let mut v: Vec<f64> = (0..n).map(|r| g.get(r, c)).collect();
        for _ in 0..2 {
            for q in &cols {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        cols.push(v);
    }
    Matrix::from_fn(n, n, |r, c| cols[c][r])
}

//! Single linear layer trained on a least-squares problem with the
//! momentum-free rank step size `η(t) = ζ·(s(t) − s(t−1))`.
//!
//! Used to check empirically that this schedule keeps the stable rank from
//! decreasing, and to record the per-epoch lower bound on `η` above which
//! monotonicity is guaranteed.

use rand::seq::SliceRandom;

use crate::evbmf::factorize;
use crate::fixtures::{gaussian_matrix, orthogonal_matrix, rng};
use crate::linalg::Matrix;
use crate::metrics::stable_rank;
use crate::rmsgd::{theorem1_lower_bound, vanilla_rank_lr};

/// `targets ≈ inputs · W*` with `W*` of planted rank.
#[derive(Clone, Debug)]
pub struct LeastSquaresProblem {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub true_weights: Matrix,
}

impl LeastSquaresProblem {
    /// `W* = Q₁ · diag(gain) · Q₂ᵀ` restricted to `rank` directions, inputs
    /// standard normal, targets with additive `N(0, noise²)`.
    pub fn planted(samples: usize, d_in: usize, d_out: usize, rank: usize, gain: f64, noise: f64, seed: u64) -> Self {
        let q1 = orthogonal_matrix(d_in, seed.wrapping_add(1));
        let q2 = orthogonal_matrix(d_out, seed.wrapping_add(2));
        let true_weights = Matrix::from_fn(d_in, d_out, |r, c| {
            (0..rank).map(|k| q1.get(r, k) * gain * q2.get(c, k)).sum()
        });
        let inputs = gaussian_matrix(samples, d_in, 1.0, seed.wrapping_add(3));
        let clean = inputs.matmul(&true_weights).expect("conformable");
        let e = gaussian_matrix(samples, d_out, noise, seed.wrapping_add(4));
        let targets = Matrix::from_fn(samples, d_out, |r, c| clean.get(r, c) + e.get(r, c));
        Self {
            inputs,
            targets,
            true_weights,
        }
    }

    /// Mean-squared-error gradient `Xᵀ(XW − Y) / |batch|` over `batch` rows.
    fn batch_gradient(&self, w: &Matrix, batch: &[usize]) -> Matrix {
        let (d_in, d_out) = w.shape();
        let mut g = vec![0.0; d_in * d_out];
        for &i in batch {
            let x = self.inputs.row(i);
            let residual: Vec<f64> = (0..d_out)
                .map(|c| (0..d_in).map(|r| x[r] * w.get(r, c)).sum::<f64>() - self.targets.get(i, c))
                .collect();
            for r in 0..d_in {
                for c in 0..d_out {
                    g[r * d_out + c] += x[r] * residual[c];
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        Matrix::new(d_in, d_out, g.into_iter().map(|v| v * scale).collect()).expect("finite")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VanillaScheduleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step size, also the floor the step size is held at.
    pub eta0: f64,
    pub zeta: f64,
    pub init_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VanillaEpoch {
    pub epoch: usize,
    pub stable_rank: f64,
    pub estimated_rank: usize,
    /// Step size used during this epoch.
    pub lr: f64,
    /// Lower bound on `η` for this epoch's accumulated gradient, `None`
    /// when it is undefined.
    pub lower_bound: Option<f64>,
}

/// Trains `W` from a small random start. The step size for epoch `t+1` is
/// `max(ζ·(s(t) − s(t−1)), η₀)`; the floor is the lower bound `η(t) ≥ η₀`
/// under which the rank rule is stated.
pub fn run_vanilla_schedule(problem: &LeastSquaresProblem, cfg: &VanillaScheduleConfig) -> Vec<VanillaEpoch> {
    let (d_in, d_out) = problem.true_weights.shape();
    let mut w = gaussian_matrix(d_in, d_out, cfg.init_scale, cfg.seed);
    let mut order: Vec<usize> = (0..problem.inputs.rows()).collect();
    let mut shuffle = rng(cfg.seed ^ 0xB47C);
    let mut lr = cfg.eta0;
    let mut prev_s = 0.0;
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = w.clone();
        let mut accumulated = Matrix::zeros(d_in, d_out);
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let g = problem.batch_gradient(&w, batch);
            w = w.sub(&g.scaled(lr)).expect("same shape");
            accumulated = Matrix::from_fn(d_in, d_out, |r, c| accumulated.get(r, c) + g.get(r, c));
        }
        let lower_bound = theorem1_lower_bound(&start.clone().oriented(), &accumulated.oriented()).ok();
        let f = factorize(&w.clone().oriented()).expect("d_in, d_out >= 2");
        let s = stable_rank(&f);
        out.push(VanillaEpoch {
            epoch,
            stable_rank: s,
            estimated_rank: f.estimated_rank,
            lr,
            lower_bound,
        });
        lr = vanilla_rank_lr(prev_s, s, cfg.zeta).max(cfg.eta0);
        prev_s = s;
    }
    out
}

/// Fraction of consecutive-epoch transitions where the stable rank did not
/// decrease.
pub fn non_decreasing_fraction(epochs: &[VanillaEpoch]) -> f64 {
    let transitions = epochs.len().saturating_sub(1);
    if transitions == 0 {
        return 1.0;
    }
    let ok = epochs
        .windows(2)
        .filter(|p| p[1].stable_rank >= p[0].stable_rank)
        .count();
    ok as f64 / transitions as f64
}

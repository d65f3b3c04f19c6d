//! Empirical variational Bayesian matrix factorization (EVBMF).
//!
//! Splits a weight matrix into a low-rank signal part and an isotropic
//! Gaussian noise residual using the global analytic EVBMF solution: the
//! noise variance is the minimizer of the closed-form free energy, every
//! singular value above the resulting threshold is kept, and kept values are
//! shrunk to their posterior mean.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{singular_values, LinalgError, Matrix};

/// Solution of `Ψ(τ) = 0` that fixes the EVBMF rank threshold, scaled by `√α`.
const TAU_BAR_COEFF: f64 = 2.5129;

/// Golden-section stopping tolerance, relative to the bracket position.
const SEARCH_REL_TOL: f64 = 1e-12;

/// Grid samples per bracket before golden-section refinement.
const BRACKET_SAMPLES: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvbmfError {
    #[error("EVBMF needs both dimensions >= 2, got {rows}x{cols}")]
    DegenerateInput { rows: usize, cols: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Low-rank part of a factorized weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedLayer {
    /// Shrunk singular values of the low-rank part, descending and positive.
    pub retained_singular_values: Vec<f64>,
    pub estimated_rank: usize,
    pub noise_variance: f64,
    /// Smaller matrix dimension.
    pub n: usize,
    /// Larger matrix dimension.
    pub m: usize,
}

impl FactorizedLayer {
    pub fn is_empty(&self) -> bool {
        self.estimated_rank == 0
    }
}

/// How the noise variance is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// Minimize the EVBMF free energy (the normal path).
    Estimate,
    /// Use the given variance. `Fixed(0.0)` degenerates to a plain SVD that
    /// keeps every numerically nonzero singular value without shrinkage.
    Fixed(f64),
}

pub fn factorize(m: &Matrix) -> Result<FactorizedLayer, EvbmfError> {
    factorize_with(m, NoiseModel::Estimate)
}

pub fn factorize_with(m: &Matrix, noise: NoiseModel) -> Result<FactorizedLayer, EvbmfError> {
    let (big, small) = oriented_dims(m)?;
    let spectrum = singular_values(m)?;
    Ok(factorize_spectrum(&spectrum, big, small, noise))
}

pub fn estimate_noise_variance(m: &Matrix) -> Result<f64, EvbmfError> {
    let (big, small) = oriented_dims(m)?;
    let spectrum = singular_values(m)?;
    Ok(noise_variance_from_spectrum(&spectrum, big, small))
}

fn oriented_dims(m: &Matrix) -> Result<(usize, usize), EvbmfError> {
    let (rows, cols) = m.shape();
    if rows < 2 || cols < 2 {
        return Err(EvbmfError::DegenerateInput { rows, cols });
    }
    Ok((rows.max(cols), rows.min(cols)))
}

/// Constants of the EVBMF solution for an `m × n` problem (`n <= m`).
#[derive(Clone, Copy, Debug)]
struct Shape {
    m: f64,
    n: f64,
    alpha: f64,
    x_bar: f64,
}

impl Shape {
    fn new(m: usize, n: usize) -> Self {
        let (m, n) = (m as f64, n as f64);
        let alpha = n / m;
        let tau_bar = TAU_BAR_COEFF * alpha.sqrt();
        let x_bar = (1.0 + tau_bar) * (1.0 + alpha / tau_bar);
        Self { m, n, alpha, x_bar }
    }

    fn tau(&self, x: f64) -> f64 {
        let b = x - (1.0 + self.alpha);
        0.5 * (b + (b * b - 4.0 * self.alpha).max(0.0).sqrt())
    }

    /// Free energy as a function of the noise variance, up to an additive
    /// constant that does not depend on it.
    fn free_energy(&self, spectrum: &[f64], sigma2: f64) -> f64 {
        let log_s2 = sigma2.ln();
        spectrum
            .iter()
            .map(|&s| {
                let x = s * s / (self.m * sigma2);
                if x > self.x_bar {
                    let tau = self.tau(x);
                    x - tau + (tau + 1.0).ln() + log_s2 + self.alpha * (tau / self.alpha + 1.0).ln()
                } else {
                    x + log_s2
                }
            })
            .sum()
    }

    fn threshold(&self, sigma2: f64) -> f64 {
        (self.m * sigma2 * self.x_bar).sqrt()
    }

    fn shrink(&self, s: f64, sigma2: f64) -> f64 {
        let s2 = s * s;
        let a = 1.0 - (self.n + self.m) * sigma2 / s2;
        let disc = a * a - 4.0 * self.n * self.m * sigma2 * sigma2 / (s2 * s2);
        0.5 * s * (a + disc.max(0.0).sqrt())
    }
}

/// Factorizes given the descending singular values of an `m × n` matrix.
pub fn factorize_spectrum(spectrum: &[f64], m: usize, n: usize, noise: NoiseModel) -> FactorizedLayer {
    let empty = |noise_variance: f64| FactorizedLayer {
        retained_singular_values: Vec::new(),
        estimated_rank: 0,
        noise_variance,
        n,
        m,
    };
    let scale = spectrum.first().copied().unwrap_or(0.0);
    if scale <= 0.0 {
        let variance = match noise {
            NoiseModel::Fixed(v) => v,
            NoiseModel::Estimate => 0.0,
        };
        return empty(variance);
    }

    let shape = Shape::new(m, n);
    let unit: Vec<f64> = spectrum.iter().map(|s| s / scale).collect();

    if let NoiseModel::Fixed(v) = noise {
        if v == 0.0 {
            let cut = f64::EPSILON * m as f64;
            let kept: Vec<f64> = unit.iter().take_while(|&&s| s > cut).map(|s| s * scale).collect();
            return FactorizedLayer {
                estimated_rank: kept.len(),
                retained_singular_values: kept,
                noise_variance: 0.0,
                n,
                m,
            };
        }
    }

    let sigma2 = match noise {
        NoiseModel::Estimate => search_noise_variance(&shape, &unit),
        NoiseModel::Fixed(v) => v / (scale * scale),
    };

    let threshold = shape.threshold(sigma2);
    let mut rank = unit.iter().take_while(|&&s| s > threshold).count();
    if rank >= n {
        debug!(
            "EVBMF kept all {n} singular values of a {m}x{n} matrix; capping rank at {}",
            n - 1
        );
        rank = n - 1;
    }
    let retained = unit[..rank].iter().map(|&s| shape.shrink(s, sigma2) * scale).collect();
    FactorizedLayer {
        retained_singular_values: retained,
        estimated_rank: rank,
        noise_variance: sigma2 * scale * scale,
        n,
        m,
    }
}

/// Noise variance estimate from the descending singular values.
pub fn noise_variance_from_spectrum(spectrum: &[f64], m: usize, n: usize) -> f64 {
    let scale = spectrum.first().copied().unwrap_or(0.0);
    if scale <= 0.0 {
        return 0.0;
    }
    let shape = Shape::new(m, n);
    let unit: Vec<f64> = spectrum.iter().map(|s| s / scale).collect();
    search_noise_variance(&shape, &unit) * scale * scale
}

/// Search interval for the noise variance: the upper end is the total energy
/// per entry; the lower end comes from the trailing part of the spectrum,
/// which is assumed to be pure noise.
fn search_bounds(shape: &Shape, spectrum: &[f64]) -> (f64, f64) {
    let len = spectrum.len();
    let upper = spectrum.iter().map(|s| s * s).sum::<f64>() / (shape.n * shape.m);
    let tail_start = ((shape.n / (1.0 + shape.alpha)).ceil() as usize)
        .saturating_sub(1)
        .min(len - 1);
    let tail = &spectrum[tail_start..];
    let tail_mean = tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64;
    let lower = (spectrum[tail_start].powi(2) / (shape.m * shape.x_bar)).max(tail_mean / shape.m);
    (lower, upper)
}

fn search_noise_variance(shape: &Shape, spectrum: &[f64]) -> f64 {
    let (lower, upper) = search_bounds(shape, spectrum);
    if upper.partial_cmp(&lower) != Some(std::cmp::Ordering::Greater) {
        return upper.max(lower);
    }

    // The free energy is smooth between the points where some x crosses
    // x_bar; bracket on those kinks.
    let mut knots: Vec<f64> = spectrum
        .iter()
        .map(|s| s * s / (shape.m * shape.x_bar))
        .filter(|&k| k > lower && k < upper)
        .collect();
    knots.push(lower);
    knots.push(upper);
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let f = |v: f64| shape.free_energy(spectrum, v);
    let mut best = (lower, f(lower));
    for pair in knots.windows(2) {
        let (v, fv) = minimize_in_bracket(&f, pair[0], pair[1]);
        if fv < best.1 {
            best = (v, fv);
        }
    }
    best.0
}

/// Grid scan followed by golden-section refinement around the best sample.
fn minimize_in_bracket(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let step = (b - a) / BRACKET_SAMPLES as f64;
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..=BRACKET_SAMPLES {
        let x = a + step * i as f64;
        let fx = f(x);
        if fx < best_f {
            best_f = fx;
            best_i = i;
        }
    }
    let lo = a + step * best_i.saturating_sub(1) as f64;
    let hi = (a + step * (best_i + 1) as f64).min(b);
    let (x, fx) = golden_section(f, lo, hi);
    if fx < best_f {
        (x, fx)
    } else {
        (a + step * best_i as f64, best_f)
    }
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= SEARCH_REL_TOL * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

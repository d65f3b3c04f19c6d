//! Rank-momentum SGD (RMSGD).
//!
//! Plain momentum SGD within an epoch, with one learning rate per layer
//! group. At each epoch boundary every group's rate is revised as
//!
//! ```text
//! η_ℓ(t) = β·η_ℓ(t−1) + ζ·(s_ℓ(t) − s_ℓ(t−1))
//! ```
//!
//! where `s_ℓ` is the stable rank of the layer's low-rank factorization.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{svd, LinalgError, Matrix};

/// Applied learning rates never drop below this.
pub const LR_FLOOR: f64 = 1e-8;

/// Multiple of `η₀` above which the boundedness monitor raises a flag.
pub const BOUNDEDNESS_FACTOR: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmsgdError {
    #[error("invalid hyper-parameter {name} = {value}: {reason}")]
    InvalidConfig {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("parameter {param} has {actual} gradient entries, expected {expected}")]
    ShapeMismatch {
        param: usize,
        expected: usize,
        actual: usize,
    },
    #[error("expected {expected} entries (one per layer group), got {actual}")]
    LayerCountMismatch { expected: usize, actual: usize },
    #[error("lower bound undefined: trace denominator vanishes")]
    DegenerateDenominator,
    #[error("learning-rate history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct RmsgdConfig {
    /// SGD momentum.
    pub alpha: f64,
    /// Learning-rate momentum.
    pub beta: f64,
    /// Gain on the stable-rank delta.
    pub zeta: f64,
    /// Initial learning rate of every group.
    pub eta0: f64,
}

impl Default for RmsgdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.98,
            zeta: 1.0,
            eta0: 0.03,
        }
    }
}

impl RmsgdConfig {
    pub fn validate(&self) -> Result<(), RmsgdError> {
        let bad = |name, value, reason| Err(RmsgdError::InvalidConfig { name, value, reason });
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", self.alpha, "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta", self.beta, "must lie in [0, 1)");
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return bad("zeta", self.zeta, "must be finite and >= 0");
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("eta0", self.eta0, "must be finite and > 0");
        }
        Ok(())
    }
}

/// Parameters that share one layer index and therefore one learning rate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGroup {
    /// 1-based layer index.
    pub layer_index: usize,
    /// Name of the weight tensor that is probed for this group.
    pub weight_ref: String,
    /// Biases and other parameters that follow the weight's rate.
    pub attached_params: Vec<String>,
}

/// Outcome of one epoch-boundary learning-rate revision.
#[derive(Clone, Debug, PartialEq)]
pub struct LrUpdate {
    /// Formula value before the positivity floor.
    pub raw: Vec<f64>,
    /// Rates that will be applied during the next epoch.
    pub applied: Vec<f64>,
    /// Groups whose rate hit the floor.
    pub clamped: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: RmsgdConfig,
    per_layer_lr: Vec<f64>,
    prev_stable_rank: Vec<f64>,
    velocity: Vec<Vec<f64>>,
    param_group: Vec<usize>,
    epoch: usize,
    clamp_count: usize,
    raw_history: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// `params` lists `(group, len)` for every trainable parameter, where
    /// `group` is a 0-based index into `0..num_groups`.
    pub fn new(config: RmsgdConfig, num_groups: usize, params: &[(usize, usize)]) -> Result<Self, RmsgdError> {
        config.validate()?;
        if let Some(&(g, _)) = params.iter().find(|(g, _)| *g >= num_groups) {
            return Err(RmsgdError::LayerCountMismatch {
                expected: num_groups,
                actual: g + 1,
            });
        }
        Ok(Self {
            config,
            per_layer_lr: vec![config.eta0; num_groups],
            prev_stable_rank: vec![0.0; num_groups],
            velocity: params.iter().map(|&(_, len)| vec![0.0; len]).collect(),
            param_group: params.iter().map(|&(g, _)| g).collect(),
            epoch: 0,
            clamp_count: 0,
            raw_history: vec![vec![config.eta0; num_groups]],
        })
    }

    pub fn config(&self) -> &RmsgdConfig {
        &self.config
    }

    pub fn learning_rates(&self) -> &[f64] {
        &self.per_layer_lr
    }

    pub fn prev_stable_ranks(&self) -> &[f64] {
        &self.prev_stable_rank
    }

    pub fn velocity(&self, param: usize) -> &[f64] {
        &self.velocity[param]
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Number of times the positivity floor replaced a formula value.
    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Formula values per epoch, starting with `η₀` at epoch 0.
    pub fn raw_history(&self) -> &[Vec<f64>] {
        &self.raw_history
    }

    /// `v ← α·v − η_ℓ·g; w ← w + v` for every parameter. Gradients are
    /// validated up front so a failed step leaves the state untouched.
    pub fn sgd_step<P, G>(&mut self, params: &mut [P], grads: &[G]) -> Result<(), RmsgdError>
    where
        P: AsMut<[f64]>,
        G: AsRef<[f64]>,
    {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(RmsgdError::LayerCountMismatch {
                expected: self.velocity.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref();
            if g.len() != self.velocity[i].len() {
                return Err(RmsgdError::ShapeMismatch {
                    param: i,
                    expected: self.velocity[i].len(),
                    actual: g.len(),
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(RmsgdError::NonFiniteGradient { param: i });
            }
        }
        let alpha = self.config.alpha;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let p = p.as_mut();
            if p.len() != self.velocity[i].len() {
                return Err(RmsgdError::ShapeMismatch {
                    param: i,
                    expected: self.velocity[i].len(),
                    actual: p.len(),
                });
            }
            let lr = self.per_layer_lr[self.param_group[i]];
            for ((w, v), g) in p.iter_mut().zip(&mut self.velocity[i]).zip(g.as_ref()) {
                *v = alpha * *v - lr * g;
                *w += *v;
            }
        }
        Ok(())
    }

    /// Stage-II revision from this epoch's per-group stable ranks.
    pub fn epoch_lr_update(&mut self, stable_ranks: &[f64]) -> Result<LrUpdate, RmsgdError> {
        if stable_ranks.len() != self.per_layer_lr.len() {
            return Err(RmsgdError::LayerCountMismatch {
                expected: self.per_layer_lr.len(),
                actual: stable_ranks.len(),
            });
        }
        let RmsgdConfig { beta, zeta, .. } = self.config;
        let mut raw = Vec::with_capacity(stable_ranks.len());
        let mut clamped = Vec::new();
        for (g, &s) in stable_ranks.iter().enumerate() {
            let value = beta * self.per_layer_lr[g] + zeta * (s - self.prev_stable_rank[g]);
            raw.push(value);
            if value < LR_FLOOR {
                warn!(
                    "epoch {}: learning rate of group {} fell to {value:e}; clamping to {LR_FLOOR:e}",
                    self.epoch + 1,
                    g
                );
                clamped.push(g);
                self.per_layer_lr[g] = LR_FLOOR;
            } else {
                self.per_layer_lr[g] = value;
            }
            self.prev_stable_rank[g] = s;
        }
        self.clamp_count += clamped.len();
        self.epoch += 1;
        self.raw_history.push(raw.clone());
        Ok(LrUpdate {
            raw,
            applied: self.per_layer_lr.clone(),
            clamped,
        })
    }

    /// Advances the epoch counter without revising rates (fixed-rate SGD).
    pub fn finish_epoch_fixed(&mut self) {
        self.epoch += 1;
        self.raw_history.push(self.per_layer_lr.clone());
    }
}

/// Momentum-free step size `ζ·(s(t) − s(t−1))`.
pub fn vanilla_rank_lr(prev_stable_rank: f64, curr_stable_rank: f64, zeta: f64) -> f64 {
    zeta * (curr_stable_rank - prev_stable_rank)
}

/// Smallest step size for which the quadratic
/// `D(η) = a·η² − b·η` is non-negative, clipped at 0:
///
/// ```text
/// b = 2·(tr(WᵀG) + (‖G‖₂/‖W‖₂)·tr(WᵀW))
/// a = tr(GᵀG) − (‖G‖₂²/‖W‖₂²)·tr(WᵀW)
/// ```
///
/// `G` is the gradient accumulated over one epoch and `‖·‖₂` the spectral
/// norm. Diagnostic only.
pub fn theorem1_lower_bound(w: &Matrix, accumulated_grad: &Matrix) -> Result<f64, RmsgdError> {
    let tr_wg = w.trace_inner(accumulated_grad)?;
    let tr_ww = w.trace_inner(w)?;
    let tr_gg = accumulated_grad.trace_inner(accumulated_grad)?;
    let spec_w = svd(w)?.singular_values[0];
    let spec_g = svd(accumulated_grad)?.singular_values[0];
    if spec_w == 0.0 {
        return Err(RmsgdError::DegenerateDenominator);
    }
    let ratio = spec_g / spec_w;
    let numerator = tr_wg + ratio * tr_ww;
    let denominator = tr_gg - ratio * ratio * tr_ww;
    let scale = tr_gg + ratio * ratio * tr_ww;
    if scale == 0.0 || denominator.abs() <= 1e-12 * scale {
        return Err(RmsgdError::DegenerateDenominator);
    }
    Ok((2.0 * numerator / denominator).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrFlagKind {
    ExceedsBound,
    NonPositive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrFlag {
    pub epoch: usize,
    pub group: usize,
    pub value: f64,
    pub kind: LrFlagKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSummary {
    pub min: f64,
    pub max: f64,
    pub initial: f64,
    pub last: f64,
    /// Epoch at which `max` was first reached.
    pub argmax: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundednessReport {
    pub bound: f64,
    pub flags: Vec<LrFlag>,
    pub per_group: Vec<LrSummary>,
}

impl BoundednessReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn max_lr(&self) -> f64 {
        self.per_group.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Scans a per-epoch, per-group history of raw learning rates for values
/// above `10·η₀` or at/below zero.
pub fn lr_boundedness_monitor(history: &[Vec<f64>], eta0: f64) -> Result<BoundednessReport, RmsgdError> {
    let first = history.first().ok_or(RmsgdError::EmptyHistory)?;
    let groups = first.len();
    if let Some(row) = history.iter().find(|row| row.len() != groups) {
        return Err(RmsgdError::LayerCountMismatch {
            expected: groups,
            actual: row.len(),
        });
    }
    let bound = BOUNDEDNESS_FACTOR * eta0;
    let mut flags = Vec::new();
    for (epoch, row) in history.iter().enumerate() {
        for (group, &value) in row.iter().enumerate() {
            let kind = if value <= 0.0 {
                Some(LrFlagKind::NonPositive)
            } else if value > bound {
                Some(LrFlagKind::ExceedsBound)
            } else {
                None
            };
            if let Some(kind) = kind {
                flags.push(LrFlag {
                    epoch,
                    group,
                    value,
                    kind,
                });
            }
        }
    }
    let per_group = (0..groups)
        .map(|g| {
            let mut summary = LrSummary {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                initial: history[0][g],
                last: history[history.len() - 1][g],
                argmax: 0,
            };
            for (epoch, row) in history.iter().enumerate() {
                summary.min = summary.min.min(row[g]);
                if row[g] > summary.max {
                    summary.max = row[g];
                    summary.argmax = epoch;
                }
            }
            summary
        })
        .collect();
    Ok(BoundednessReport {
        bound,
        flags,
        per_group,
    })
}

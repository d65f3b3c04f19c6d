//! Stable rank, condition and quality of a factorized layer, and the
//! network-level quality aggregate.
//!
//! All metrics are computed on the low-rank part returned by EVBMF, not on
//! the raw weights, so randomly initialized layers measure as empty.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evbmf::{factorize_with, EvbmfError, FactorizedLayer, NoiseModel};
use crate::linalg::{unfold, Matrix, Tensor4D, UnfoldMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("condition is undefined for an empty factorization")]
    EmptyFactorization,
    #[error("network quality needs at least one layer")]
    EmptyNetwork,
    #[error("layer {layer_index} cannot be measured: {source}")]
    UnmeasurableLayer {
        layer_index: usize,
        #[source]
        source: EvbmfError,
    },
}

/// `(1 / (n·σ₁²)) · Σ σᵢ²` over the retained spectrum; 0 when it is empty.
pub fn stable_rank(f: &FactorizedLayer) -> f64 {
    let spectrum = &f.retained_singular_values;
    let Some(&top) = spectrum.first() else {
        return 0.0;
    };
    let energy: f64 = spectrum.iter().map(|s| s * s).sum();
    (energy / (f.n as f64 * top * top)).clamp(0.0, 1.0)
}

/// `1 − σ_min / σ_max` over the retained spectrum.
pub fn condition(f: &FactorizedLayer) -> Result<f64, MetricsError> {
    match (f.retained_singular_values.first(), f.retained_singular_values.last()) {
        (Some(&top), Some(&bottom)) => Ok((1.0 - bottom / top).clamp(0.0, 1.0)),
        _ => Err(MetricsError::EmptyFactorization),
    }
}

/// `arctan(s / κ)`, with `π/2` when `κ = 0 < s` and 0 when `s = 0`.
pub fn layer_quality(stable_rank: f64, condition: f64) -> f64 {
    if stable_rank <= 0.0 {
        0.0
    } else if condition <= 0.0 {
        FRAC_PI_2
    } else {
        (stable_rank / condition).atan()
    }
}

/// `(1/√L) · ‖q‖₂²`.
pub fn network_quality(qualities: &[f64]) -> Result<f64, MetricsError> {
    if qualities.is_empty() {
        return Err(MetricsError::EmptyNetwork);
    }
    let sum_sq: f64 = qualities.iter().map(|q| q * q).sum();
    Ok(sum_sq / (qualities.len() as f64).sqrt())
}

/// Metrics of one layer at one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub layer_index: usize,
    pub estimated_rank: usize,
    pub noise_variance: f64,
    pub stable_rank: f64,
    /// 0 when the factorization is empty.
    pub condition: f64,
    pub quality: f64,
}

impl LayerMetrics {
    pub fn empty(layer_index: usize) -> Self {
        Self {
            layer_index,
            estimated_rank: 0,
            noise_variance: 0.0,
            stable_rank: 0.0,
            condition: 0.0,
            quality: 0.0,
        }
    }

    pub fn from_factorization(f: &FactorizedLayer, layer_index: usize) -> Self {
        if f.is_empty() {
            return Self {
                noise_variance: f.noise_variance,
                ..Self::empty(layer_index)
            };
        }
        let s = stable_rank(f);
        let k = condition(f).expect("non-empty factorization");
        Self {
            layer_index,
            estimated_rank: f.estimated_rank,
            noise_variance: f.noise_variance,
            stable_rank: s,
            condition: k,
            quality: layer_quality(s, k),
        }
    }
}

/// A probe-able weight: a dense matrix or a convolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightTensor {
    Dense(Matrix),
    Conv(Tensor4D),
}

/// Per-mode metrics of a convolution kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeMetrics {
    pub mode: UnfoldMode,
    pub metrics: LayerMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMeasurement {
    /// Dense layers: the single measurement. Kernels: the per-metric mean of
    /// both unfoldings, with the rank rounded up so that it is 0 only when
    /// both unfoldings are empty.
    pub summary: LayerMetrics,
    /// Empty for dense layers.
    pub per_mode: Vec<ModeMetrics>,
}

impl LayerMeasurement {
    /// The rank-0 measurement of `w`, used where a layer cannot be factorized.
    pub fn empty(w: &WeightTensor, layer_index: usize) -> Self {
        let per_mode = match w {
            WeightTensor::Dense(_) => Vec::new(),
            WeightTensor::Conv(_) => UnfoldMode::BOTH
                .iter()
                .map(|&mode| ModeMetrics {
                    mode,
                    metrics: LayerMetrics::empty(layer_index),
                })
                .collect(),
        };
        Self {
            summary: LayerMetrics::empty(layer_index),
            per_mode,
        }
    }

    pub fn summary_label(&self) -> &'static str {
        if self.per_mode.is_empty() {
            "dense"
        } else {
            "avg"
        }
    }
}

pub fn measure_layer(w: &WeightTensor, layer_index: usize) -> Result<LayerMeasurement, MetricsError> {
    measure_layer_with(w, layer_index, NoiseModel::Estimate)
}

/// Like [`measure_layer`] but with an explicit noise model; `Fixed(0.0)`
/// measures the raw spectrum.
pub fn measure_layer_with(
    w: &WeightTensor,
    layer_index: usize,
    noise: NoiseModel,
) -> Result<LayerMeasurement, MetricsError> {
    let measure = |m: &Matrix| {
        factorize_with(m, noise)
            .map(|f| LayerMetrics::from_factorization(&f, layer_index))
            .map_err(|source| MetricsError::UnmeasurableLayer { layer_index, source })
    };
    match w {
        WeightTensor::Dense(m) => Ok(LayerMeasurement {
            summary: measure(&m.clone().oriented())?,
            per_mode: Vec::new(),
        }),
        WeightTensor::Conv(t) => {
            let per_mode = UnfoldMode::BOTH
                .iter()
                .map(|&mode| measure(&unfold(t, mode)).map(|metrics| ModeMetrics { mode, metrics }))
                .collect::<Result<Vec<_>, _>>()?;
            let k = per_mode.len() as f64;
            let mean = |f: fn(&LayerMetrics) -> f64| per_mode.iter().map(|pm| f(&pm.metrics)).sum::<f64>() / k;
            let rank_sum: usize = per_mode.iter().map(|pm| pm.metrics.estimated_rank).sum();
            let summary = LayerMetrics {
                layer_index,
                estimated_rank: rank_sum.div_ceil(per_mode.len()),
                noise_variance: mean(|m| m.noise_variance),
                stable_rank: mean(|m| m.stable_rank),
                condition: mean(|m| m.condition),
                quality: mean(|m| m.quality),
            };
            Ok(LayerMeasurement { summary, per_mode })
        }
    }
}

/// Measures every layer in parallel; layer indices are 1-based positions.
pub fn measure_layers(weights: &[WeightTensor], noise: NoiseModel) -> Vec<Result<LayerMeasurement, MetricsError>> {
    weights
        .par_iter()
        .enumerate()
        .map(|(i, w)| measure_layer_with(w, i + 1, noise))
        .collect()
}

/// Network quality `Q` at one epoch together with its per-layer breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub epoch: usize,
    pub per_layer: Vec<LayerMetrics>,
    pub network_quality: f64,
}

impl QualityReport {
    pub fn new(epoch: usize, per_layer: Vec<LayerMetrics>) -> Result<Self, MetricsError> {
        let qualities: Vec<f64> = per_layer.iter().map(|m| m.quality).collect();
        let network_quality = network_quality(&qualities)?;
        Ok(Self {
            epoch,
            per_layer,
            network_quality,
        })
    }

    pub fn stable_ranks(&self) -> Vec<f64> {
        self.per_layer.iter().map(|m| m.stable_rank).collect()
    }
}

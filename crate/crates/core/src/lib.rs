//! Layer-probing metrics on low-rank factorized weights and a rank-momentum
//! SGD optimizer that adapts per-layer learning rates from them.
//!
//! The pipeline for a single weight tensor is
//! [`unfold`](linalg::unfold) → [`factorize`](evbmf::factorize) →
//! [`stable_rank`](metrics::stable_rank) / [`condition`](metrics::condition) →
//! [`layer_quality`](metrics::layer_quality). [`rmsgd`] consumes the stable
//! ranks once per epoch, and [`trainer`] drives the whole loop on small
//! synthetic problems.

pub mod correlation;
pub mod evbmf;
pub mod fixtures;
pub mod linalg;
pub mod metrics;
pub mod rmsgd;
pub mod trainer;

pub use evbmf::{factorize, factorize_with, EvbmfError, FactorizedLayer, NoiseModel};
pub use linalg::{svd, unfold, LinalgError, Matrix, SvdResult, Tensor4D, UnfoldMode};
pub use metrics::{
    condition, layer_quality, measure_layer, network_quality, stable_rank, LayerMeasurement, LayerMetrics,
    MetricsError, QualityReport, WeightTensor,
};
pub use rmsgd::{OptimizerState, RmsgdConfig, RmsgdError};

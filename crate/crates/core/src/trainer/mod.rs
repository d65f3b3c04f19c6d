//! Deterministic desk-scale training loop.
//!
//! Each epoch runs two stages:
//! 1. momentum SGD over shuffled minibatches with the current per-layer
//!    learning rates, then
//! 2. factorization and measurement of every weight-bearing layer, followed
//!    (for RMSGD) by the learning-rate revision.
//!
//! Metrics are only ever computed at epoch boundaries.

pub mod data;
pub mod gradcheck;
pub mod least_squares;
pub mod network;

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evbmf::NoiseModel;
use crate::fixtures::rng;
use crate::metrics::{measure_layers, LayerMeasurement, MetricsError, QualityReport};
use crate::rmsgd::{OptimizerState, RmsgdConfig, RmsgdError};

pub use data::{make_dataset, Dataset, DatasetError, DatasetSpec};
pub use gradcheck::{gradcheck, gradcheck_network, GradcheckReport};
pub use network::{Init, LayerSpec, Network, NetworkSpec, Param};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("invalid training config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset has {actual:?} inputs but the network expects {expected:?}")]
    InputMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    DivergedTraining { epoch: usize },
    #[error(transparent)]
    Optimizer(#[from] RmsgdError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub enum OptimizerSpec {
    Rmsgd(RmsgdConfig),
    /// Momentum SGD with one fixed learning rate for every layer.
    SgdFixed {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub dataset: DatasetSpec,
    /// Fraction of the dataset held out for testing.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field, reason: &str| {
            Err(TrainError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction", "must lie strictly between 0 and 1");
        }
        match self.optimizer {
            OptimizerSpec::Rmsgd(cfg) => cfg.validate().or_else(|e| match e {
                RmsgdError::InvalidConfig { name, reason, .. } => bad(name, reason),
                other => Err(other.into()),
            }),
            OptimizerSpec::SgdFixed { lr, momentum } => {
                if !(lr > 0.0 && lr.is_finite()) {
                    return bad("lr", "must be finite and > 0");
                }
                if !(0.0..1.0).contains(&momentum) {
                    return bad("momentum", "must lie in [0, 1)");
                }
                Ok(())
            }
        }
    }

    fn optimizer_config(&self) -> RmsgdConfig {
        match self.optimizer {
            OptimizerSpec::Rmsgd(cfg) => cfg,
            OptimizerSpec::SgdFixed { lr, momentum } => RmsgdConfig {
                alpha: momentum,
                eta0: lr,
                ..RmsgdConfig::default()
            },
        }
    }

    pub fn is_rmsgd(&self) -> bool {
        matches!(self.optimizer, OptimizerSpec::Rmsgd(_))
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub quality: QualityReport,
    /// Full per-layer measurement, including per-unfolding values for kernels.
    pub measurements: Vec<LayerMeasurement>,
    /// Rates produced at the end of this epoch (used during the next one).
    pub learning_rates: Vec<f64>,
    /// Formula values before the positivity floor.
    pub raw_learning_rates: Vec<f64>,
    pub clamped: Vec<usize>,
}

impl EpochRecord {
    pub fn generalization_gap(&self) -> f64 {
        self.train_accuracy - self.test_accuracy
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub records: Vec<EpochRecord>,
    pub network: Network,
    /// Probed weight names in layer order.
    pub layer_names: Vec<String>,
    pub eta0: f64,
    pub clamp_count: usize,
}

impl TrainRun {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("at least one epoch")
    }

    /// Per-epoch rates starting with `η₀` at epoch 0.
    pub fn lr_history(&self) -> Vec<Vec<f64>> {
        let groups = self.layer_names.len();
        std::iter::once(vec![self.eta0; groups])
            .chain(self.records.iter().map(|r| r.raw_learning_rates.clone()))
            .collect()
    }
}

pub fn train(spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainRun, TrainError> {
    train_with_hook(spec, cfg, |_, _| {})
}

/// Runs training and calls `hook` after every epoch's Stage-II.
pub fn train_with_hook(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    mut hook: impl FnMut(&EpochRecord, &Network),
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    let mut net = Network::new(spec)?;
    let dataset = make_dataset(&cfg.dataset, spec.seed ^ 0x0DA7_A5E7)?;
    if dataset.is_empty() {
        return Err(TrainError::InvalidConfig {
            field: "dataset",
            reason: "dataset is empty".into(),
        });
    }
    if dataset.input_shape != spec.input_shape {
        return Err(TrainError::InputMismatch {
            expected: spec.input_shape.clone(),
            actual: dataset.input_shape.clone(),
        });
    }
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= net.num_classes()) {
        return Err(TrainError::InvalidSpec(format!(
            "label {bad} exceeds the {}-way head",
            net.num_classes()
        )));
    }
    let (train_set, test_set) = dataset.split(cfg.test_fraction, spec.seed ^ 0x0005_B117);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::InvalidConfig {
            field: "test_fraction",
            reason: format!("leaves an empty split of {} samples", dataset.len()),
        });
    }

    let opt_cfg = cfg.optimizer_config();
    let mut opt = OptimizerState::new(opt_cfg, net.groups().len(), &net.param_layout())?;
    let layer_names: Vec<String> = net.groups().iter().map(|g| g.weight_ref.clone()).collect();
    let mut shuffle_rng = rng(spec.seed ^ 0x005A_FF1E);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut previous: Vec<LayerMeasurement> = net
        .weight_tensors()
        .iter()
        .enumerate()
        .map(|(i, (_, w))| LayerMeasurement::empty(w, i + 1))
        .collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        // Stage I
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = net.gradients(&train_set.features, &train_set.labels, batch);
            if !g.loss.is_finite() {
                return Err(TrainError::DivergedTraining { epoch });
            }
            let mut data: Vec<&mut [f64]> = net.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
            opt.sgd_step(&mut data, &g.grads).map_err(|e| match e {
                RmsgdError::NonFiniteGradient { .. } => TrainError::DivergedTraining { epoch },
                other => other.into(),
            })?;
        }
        let (train_loss, train_accuracy) = net.evaluate(&train_set.features, &train_set.labels);
        if !train_loss.is_finite() {
            return Err(TrainError::DivergedTraining { epoch });
        }
        let (_, test_accuracy) = net.evaluate(&test_set.features, &test_set.labels);

        // Stage II
        let weights: Vec<_> = net.weight_tensors().into_iter().map(|(_, w)| w).collect();
        let measurements: Vec<LayerMeasurement> = measure_layers(&weights, NoiseModel::Estimate)
            .into_iter()
            .zip(&previous)
            .map(|(result, prev)| match result {
                Ok(m) => m,
                Err(e) => {
                    debug!("epoch {epoch}: {e}; carrying previous metrics forward");
                    prev.clone()
                }
            })
            .collect();
        let quality = QualityReport::new(epoch, measurements.iter().map(|m| m.summary.clone()).collect())?;
        let (learning_rates, raw_learning_rates, clamped) = if cfg.is_rmsgd() {
            let update = opt.epoch_lr_update(&quality.stable_ranks())?;
            if !update.clamped.is_empty() {
                warn!("epoch {epoch}: {} learning rate(s) clamped", update.clamped.len());
            }
            (update.applied, update.raw, update.clamped)
        } else {
            opt.finish_epoch_fixed();
            let lr = opt.learning_rates().to_vec();
            (lr.clone(), lr, Vec::new())
        };

        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            test_accuracy,
            quality,
            measurements: measurements.clone(),
            learning_rates,
            raw_learning_rates,
            clamped,
        };
        hook(&record, &net);
        records.push(record);
        previous = measurements;
    }

    Ok(TrainRun {
        records,
        network: net,
        layer_names,
        eta0: opt_cfg.eta0,
        clamp_count: opt.clamp_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs_config(epochs: usize, optimizer: OptimizerSpec) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            optimizer,
            dataset: DatasetSpec::Blobs {
                n: 200,
                classes: 2,
                separation: 4.0,
            },
            test_fraction: 0.25,
        }
    }

    #[test]
    fn blobs_are_learned_by_fixed_sgd() {
        let spec = NetworkSpec::mlp(&[2, 16, 2], LayerSpec::Relu, 3, Init::KaimingUniform);
        let run = train(
            &spec,
            &blobs_config(20, OptimizerSpec::SgdFixed { lr: 0.1, momentum: 0.9 }),
        )
        .unwrap();
        assert_eq!(run.records.len(), 20);
        assert!(run.last().train_accuracy >= 0.99, "{}", run.last().train_accuracy);
    }

    #[test]
    fn zero_epochs_rejected() {
        let spec = NetworkSpec::mlp(&[2, 4, 2], LayerSpec::Relu, 0, Init::KaimingUniform);
        match train(&spec, &blobs_config(0, OptimizerSpec::Rmsgd(RmsgdConfig::default()))) {
            Err(TrainError::InvalidConfig { field, .. }) => assert_eq!(field, "epochs"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn runs_are_bit_identical() {
        let spec = NetworkSpec::mlp(&[2, 8, 8, 2], LayerSpec::Relu, 11, Init::KaimingUniform);
        let cfg = blobs_config(4, OptimizerSpec::Rmsgd(RmsgdConfig::default()));
        let a = train(&spec, &cfg).unwrap();
        let b = train(&spec, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        let bits = |r: &TrainRun| -> Vec<u64> {
            r.network
                .params()
                .iter()
                .flat_map(|p| p.data.iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn divergence_is_reported() {
        // softmax regression with an absurd step: weights overflow within a few steps
        let spec = NetworkSpec::mlp(&[2, 2], LayerSpec::Relu, 1, Init::KaimingUniform);
        let cfg = blobs_config(
            5,
            OptimizerSpec::SgdFixed {
                lr: f64::MAX,
                momentum: 0.9,
            },
        );
        let r = train(&spec, &cfg);
        assert!(
            matches!(r, Err(TrainError::DivergedTraining { .. })),
            "{:?}",
            r.map(|r| r.last().train_loss)
        );
    }

    #[test]
    fn hook_sees_every_epoch() {
        let spec = NetworkSpec::mlp(&[2, 6, 2], LayerSpec::Tanh, 2, Init::Orthogonal);
        let mut seen = Vec::new();
        train_with_hook(
            &spec,
            &blobs_config(3, OptimizerSpec::Rmsgd(RmsgdConfig::default())),
            |r, _| seen.push(r.epoch),
        )
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }
}

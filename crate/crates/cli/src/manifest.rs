//! TOML experiment manifests.

use std::path::{Path, PathBuf};

use log::warn;
use rankprobe::trainer::{DatasetSpec, NetworkSpec, OptimizerSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Relative `output_dir` and tiny-images paths resolve against the
/// manifest's own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub id: String,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    /// Where `train` writes its outputs unless `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Command-line values that replace manifest fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub zeta: Option<f64>,
    pub eta0: Option<f64>,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut manifest = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = &mut manifest.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if let DatasetSpec::TinyImages { path: data, .. } = &mut manifest.train.dataset {
            if data.is_relative() {
                *data = base.join(&*data);
            }
        }
        Ok(manifest)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let manifest: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let safe = |c: char| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.');
        if self.id.is_empty() || !self.id.chars().all(safe) || self.id.starts_with('.') {
            return Err(CliError::Config(format!(
                "field `id`: `{}` must be non-empty and use only [A-Za-z0-9._-], not starting with '.'",
                self.id
            )));
        }
        self.network
            .validate()
            .map_err(|e| CliError::Config(format!("field `network`: {e}")))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.network.seed = seed;
        }
        match &mut self.train.optimizer {
            OptimizerSpec::Rmsgd(cfg) => {
                if let Some(v) = o.alpha {
                    cfg.alpha = v;
                }
                if let Some(v) = o.beta {
                    cfg.beta = v;
                }
                if let Some(v) = o.zeta {
                    cfg.zeta = v;
                }
                if let Some(v) = o.eta0 {
                    cfg.eta0 = v;
                }
            }
            OptimizerSpec::SgdFixed { lr, momentum } => {
                if let Some(v) = o.alpha {
                    *momentum = v;
                }
                if let Some(v) = o.eta0 {
                    *lr = v;
                }
                if o.beta.is_some() || o.zeta.is_some() {
                    warn!("--beta/--zeta only apply to the rmsgd optimizer; ignored");
                }
            }
        }
        self.validate()
    }
}

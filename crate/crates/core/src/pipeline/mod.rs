//! Training loop, optimizers, patch assembly, region prediction and metrics.

mod config;
mod input;
mod metrics;
mod optim;
mod predict;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::{Activation, EvaNetConfig, Fusion, Pooling};

pub use config::{enum_name, parse_enum, parse_key_values, parse_value, DatasetConfig, KeyValueConfig};
pub use input::{assemble_input, PatchInput, PreparedRegion};
pub use metrics::{audit, evaluate, AuditReport, ClassMetrics, Confusion, EvalReport};
pub use optim::{adam_step, sgd_step, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use predict::{predict_region, seam_continuity, Prediction, SeamStats};
pub use train::{load_regions, train, EpochStats, Model, Trainer, TrainOutcome, CONFIG_FILE, FINAL_CHECKPOINT, LOSS_FILE};

/// Which bands feed the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputMode {
    /// Disaster-time RGB only; no elevation path.
    #[serde(rename = "3C")]
    C3,
    /// Disaster-time RGB plus elevation.
    #[serde(rename = "4C")]
    C4,
    /// Disaster-time and normal-time RGB plus elevation.
    #[default]
    #[serde(rename = "7C")]
    C7,
}

impl InputMode {
    pub fn spectral_channels(self) -> usize {
        match self {
            InputMode::C3 | InputMode::C4 => 3,
            InputMode::C7 => 6,
        }
    }

    pub fn uses_elevation(self) -> bool {
        self != InputMode::C3
    }
}

/// Extent over which the network's elevation input is min-max normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    #[default]
    Patch,
    Region,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Write a numbered checkpoint every this many epochs (0 disables them).
    pub checkpoint_every: usize,
    pub input_mode: InputMode,
    pub normalize_scope: NormalizeScope,
    pub loss: LossConfig,
    pub patch_size: usize,
    pub blocks: usize,
    pub base_channels: usize,
    pub pooling_spectral: Pooling,
    pub pooling_elevation: Pooling,
    pub skip_connections: bool,
    pub spectral_activation: Activation,
    pub fusion: Fusion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = EvaNetConfig::default();
        TrainConfig {
            epochs: 100,
            lr: 1e-7,
            batch_size: 4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            checkpoint_every: 10,
            input_mode: InputMode::C7,
            normalize_scope: NormalizeScope::Patch,
            loss: LossConfig::default(),
            patch_size: model.patch_size,
            blocks: model.blocks,
            base_channels: model.base_channels,
            pooling_spectral: model.pooling_spectral,
            pooling_elevation: model.pooling_elevation,
            skip_connections: model.skip_connections,
            spectral_activation: model.spectral_activation,
            fusion: model.fusion,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.loss.lambda.is_nan() || self.loss.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.loss.lambda)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> EvaNetConfig {
        EvaNetConfig {
            blocks: self.blocks,
            base_channels: self.base_channels,
            spectral_channels: self.input_mode.spectral_channels(),
            use_elevation: self.input_mode.uses_elevation(),
            patch_size: self.patch_size,
            fusion: self.fusion,
            pooling_spectral: self.pooling_spectral,
            pooling_elevation: self.pooling_elevation,
            skip_connections: self.skip_connections,
            spectral_activation: self.spectral_activation,
        }
    }
}

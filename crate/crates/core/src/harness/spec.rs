use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use crate::backbones::{BackboneFamily, ModelConfig, Task};
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 0.001;
pub const DEFAULT_LR_DECAY: f64 = 0.1;
pub const DEFAULT_LR_DECAY_EVERY: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_EPOCHS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Rmse,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classification => Self::Bce,
            Task::Regression => Self::Rmse,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Rmse => "rmse",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(Self::Bce),
            "rmse" => Ok(Self::Rmse),
            _ => Err(Error::Config(format!("unknown loss {s:?} (expected bce|rmse)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainSpec {
    /// BCE for classification, RMSE for regression; RMSProp for Inception
    /// classification and Adam otherwise.
    pub fn for_model(cfg: &ModelConfig, epochs: usize, seed: u64) -> Self {
        let optimizer = if cfg.family == BackboneFamily::Inception && cfg.task == Task::Classification {
            OptimizerKind::RMSPROP
        } else {
            OptimizerKind::ADAM
        };
        Self {
            loss: LossKind::for_task(cfg.task),
            optimizer,
            lr0: DEFAULT_LR,
            lr_decay: DEFAULT_LR_DECAY,
            lr_decay_every: DEFAULT_LR_DECAY_EVERY,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs,
            seed,
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.loss != LossKind::for_task(task) {
            return Err(Error::Config(format!("loss {} does not match task {task}", self.loss)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("bad learning rate schedule {} x {}", self.lr0, self.lr_decay)));
        }
        Ok(())
    }
}

/// `lr0 * decay^floor(epoch / decay_every)`.
pub fn lr_at(epoch: usize, spec: &TrainSpec) -> f64 {
    let drops = (epoch / spec.lr_decay_every) as i32;
    spec.lr0 * spec.lr_decay.powi(drops)
}

//! Training data from ADMM trajectories and joint training of the agents'
//! approximators with the recurrent look-ahead loss.

mod dataset;
mod fit;
mod loss;

use thiserror::Error;

use crate::admm::AdmmError;
use crate::gauge::GaugeError;
use crate::scenario::ScenarioError;

pub use dataset::{generate_dataset, rolling_day, window_label, DatasetConfig, Split, TrainingSet, Window};
pub use fit::{evaluate, train, train_with, write_curve_csv, EpochStats, Optimizer, TrainConfig, TrainReport};
pub use loss::{
    fit_scaling, kink_pattern, prepare, recurrent_loss, recurrent_loss_value, LossOutput, Prepared, PreparedWindow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

//! Variational training: the bound, the optimizer and the epoch loop.

pub mod elbo;
pub mod optim;
pub mod trainer;

use thiserror::Error;

use crate::model::ModelError;
use crate::tensor::TensorError;

pub use elbo::{elbo_batch, elbo_eval, elbo_sample, kl_diag_gaussian, step_loss, terminal_loss, LossBreakdown};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use trainer::{evaluate, train, EpochRecord, TrainConfig, TrainLog, TrainOptions};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    /// A NaN or infinity appeared; `term` names the part of the bound.
    #[error("non-finite value in {term} ({context}): {detail}")]
    NonFinite {
        term: &'static str,
        context: String,
        detail: String,
    },
    #[error(transparent)]
    Model(ModelError),
}

impl TrainError {
    pub(crate) fn from_tensor(term: &'static str, e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { op } => TrainError::NonFinite {
                term,
                context: String::new(),
                detail: format!("operation {op} produced a non-finite value"),
            },
            other => TrainError::Model(ModelError::Tensor(other)),
        }
    }

    pub(crate) fn from_model(term: &'static str, e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t) => TrainError::from_tensor(term, t),
            other => TrainError::Model(other),
        }
    }
}

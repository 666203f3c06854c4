//! Minimal deterministic neural-network core: dense layers, losses,
//! reverse-mode gradients, SGD/Adam and a finite-difference checker.
//!
//! Everything is `f64` and single-threaded so that training is bitwise
//! reproducible for a given seed.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
mod matrix;
mod model;
pub mod optim;
mod source;
pub mod train;

use thiserror::Error;

pub use gradcheck::{
    gradcheck, gradcheck_fn, loss_and_grad, standard_suite, Batch, GradcheckCase, GradcheckReport, LossSpec, Targets,
};
pub use matrix::{argmax, Matrix};
pub use model::{sigmoid, softmax_rows, Activation, Dense, Forward, Gradients, LayerGrad, ModelGraph};
pub use source::{RowSource, RowView, PREDICT_CHUNK};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use train::{accuracy, fit_classifier, labels_and_confidences, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss;
use super::matrix::Matrix;
use super::model::ModelGraph;
use super::optim::{OptimizerConfig, OptimizerState};
use super::source::RowSource;
use super::NnError;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Plain supervised training of a softmax classifier with cross-entropy.
///
/// Batches are drawn from a shuffle seeded by `(seed, LABELED_ORDER)`.
/// Returns the trained model and the mean loss per epoch.
pub fn fit_classifier<S: RowSource + ?Sized>(
    mut model: ModelGraph,
    inputs: &S,
    labels: &[u32],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelGraph, Vec<f64>), NnError> {
    if inputs.n_rows() != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "classifier labels".into(),
            expected: inputs.n_rows(),
            got: labels.len(),
        });
    }
    if inputs.n_rows() == 0 {
        return Err(NnError::InvalidArgument("no training rows".into()));
    }
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let mut order_rng = rng_for(seed, stream::LABELED_ORDER);
    let mut order: Vec<usize> = (0..inputs.n_rows()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = inputs.gather(chunk);
            let y: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let fwd = model.forward(&x)?;
            let l = loss::cross_entropy(fwd.output(), &y)?;
            let (grads, _) = model.backward(&fwd, &l.grad, false)?;
            opt.step(&mut model, &grads)?;
            total += l.value;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok((model, curve))
}

/// Argmax labels and max-probability confidences of a softmax output.
pub fn labels_and_confidences(probs: &Matrix) -> (Vec<u32>, Vec<f64>) {
    let mut labels = Vec::with_capacity(probs.rows());
    let mut conf = Vec::with_capacity(probs.rows());
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let k = super::matrix::argmax(row);
        labels.push(k as u32);
        conf.push(row[k]);
    }
    (labels, conf)
}

pub fn accuracy(predicted: &[u32], truth: &[u32]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

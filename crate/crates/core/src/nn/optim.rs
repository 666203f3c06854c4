use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{Gradients, LayerGrad, ModelGraph};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Optimizer state bound to one model's parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<LayerGrad>,
    second: Vec<LayerGrad>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, model: &ModelGraph) -> Self {
        let zeros = || Gradients::zeros_like(model).layers;
        let (first, second) = match config.kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            config,
            first,
            second,
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Rejects non-finite gradients before touching any
    /// parameter.
    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != model.layers().len() {
            return Err(NnError::ShapeMismatch {
                context: "optimizer gradient layers".into(),
                expected: model.layers().len(),
                got: grads.layers.len(),
            });
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(NnError::NonFinite { layer });
        }
        self.steps += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add_assign(-lr, &g.weights);
                    for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                        *b -= lr * gb;
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1,
                    beta2,
                    epsilon,
                    ..
                } = self.config;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((layer, g), m), v) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    adam_update(
                        layer.weights.as_mut_slice(),
                        g.weights.as_slice(),
                        m.weights.as_mut_slice(),
                        v.weights.as_mut_slice(),
                        lr,
                        beta1,
                        beta2,
                        epsilon,
                        c1,
                        c2,
                    );
                    adam_update(
                        &mut layer.bias,
                        &g.bias,
                        &mut m.bias,
                        &mut v.bias,
                        lr,
                        beta1,
                        beta2,
                        epsilon,
                        c1,
                        c2,
                    );
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Convenience for tests: a gradient filled with one value.
#[doc(hidden)]
pub fn constant_gradients(model: &ModelGraph, value: f64) -> Gradients {
    Gradients {
        layers: model
            .layers()
            .iter()
            .map(|l| LayerGrad {
                weights: Matrix::filled(l.in_dim(), l.out_dim(), value),
                bias: vec![value; l.out_dim()],
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        for cfg in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
            let mut model = ModelGraph::mlp(&[3, 4, 2], Activation::Relu, Activation::Identity, 9);
            let before = model.clone();
            let mut opt = OptimizerState::new(cfg, &model);
            opt.step(&mut model, &constant_gradients(&before, 0.5)).unwrap();
            assert_eq!(model, before);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut model = ModelGraph::mlp(&[2, 1], Activation::Identity, Activation::Identity, 1);
        let before = model.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::adam(0.01), &model);
        opt.step(&mut model, &constant_gradients(&before, 3.0)).unwrap();
        for i in 0..model.param_count() {
            let delta = before.param(i) - model.param(i);
            assert!((delta - 0.01).abs() < 1e-9, "delta {delta}");
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut model = ModelGraph::mlp(&[2, 3, 1], Activation::Relu, Activation::Identity, 1);
        let before = model.clone();
        let mut grads = constant_gradients(&model, 0.1);
        grads.layers[1].bias[0] = f64::NAN;
        let mut opt = OptimizerState::new(OptimizerConfig::default(), &model);
        assert!(matches!(
            opt.step(&mut model, &grads),
            Err(NnError::NonFinite { layer: 1 })
        ));
        assert_eq!(model, before);
    }
}

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::source::{RowSource, PREDICT_CHUNK};
use super::NnError;
use crate::rng::Rng;
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
    Sigmoid,
}

impl Activation {
    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Softmax => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Relu,
            1 => Activation::Identity,
            2 => Activation::Softmax,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }

    fn apply(self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.map(|x| x.max(0.0)),
            Activation::Identity => z.clone(),
            Activation::Sigmoid => z.map(sigmoid),
            Activation::Softmax => softmax_rows(z),
        }
    }

    /// Maps `dL/da` to `dL/dz` given pre-activation `z` and output `a`.
    fn backprop(self, z: &Matrix, a: &Matrix, da: &Matrix) -> Matrix {
        match self {
            Activation::Identity => da.clone(),
            Activation::Relu => {
                let mut dz = da.clone();
                for (g, &x) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                dz
            }
            Activation::Sigmoid => {
                let mut dz = da.clone();
                for (g, &s) in dz.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *g *= s * (1.0 - s);
                }
                dz
            }
            Activation::Softmax => {
                let mut dz = Matrix::zeros(da.rows(), da.cols());
                for i in 0..da.rows() {
                    let p = a.row(i);
                    let g = da.row(i);
                    let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
                    for (o, (p, g)) in dz.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
                        *o = p * (g - dot);
                    }
                }
                dz
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Fully connected layer computing `act(x · W + b)`; `W` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        assert_eq!(weights.cols(), bias.len(), "bias width mismatch");
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weights: Matrix::from_vec(in_dim, out_dim, data),
            bias: vec![0.0; out_dim],
            activation,
        }
    }
}

/// Per-layer parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of a [`ModelGraph`], layer-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelGraph) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights.scale(alpha);
            for b in &mut l.bias {
                *b *= alpha;
            }
        }
    }

    /// Index of the first layer holding a NaN or infinite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()))
    }

    /// Flattened view in the same order as [`ModelGraph::param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl Forward {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn into_output(mut self) -> Matrix {
        self.post.pop().unwrap_or(self.input)
    }

    /// Post-activation output of every layer, in order.
    pub fn activations(&self) -> &[Matrix] {
        &self.post
    }
}

/// A stack of dense layers with reverse-mode gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    layers: Vec<Dense>,
    seed: u64,
}

/// Below this density the first layer uses the sparse product path.
const SPARSE_ZERO_FRACTION: f64 = 0.9;
const SPARSE_MIN_WIDTH: usize = 64;

impl ModelGraph {
    /// Builds an MLP with layer widths `dims` (input first, output last).
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "an mlp needs an input and an output width");
        let mut rng = Rng::seed_from_u64(seed);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(dims[i], dims[i + 1], act, &mut rng)
            })
            .collect();
        Self { layers, seed }
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidArgument("model has no layers".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NnError::ShapeMismatch {
                    context: format!("layer {} -> {}", i, i + 1),
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim() * l.out_dim() + l.out_dim())
            .sum()
    }

    /// Mutable access to the `idx`-th parameter in flattened order
    /// (per layer: weights row-major, then bias).
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            let nw = l.in_dim() * l.out_dim();
            if idx < nw {
                return &mut l.weights.as_mut_slice()[idx];
            }
            idx -= nw;
            if idx < l.out_dim() {
                return &mut l.bias[idx];
            }
            idx -= l.out_dim();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            let nw = l.in_dim() * l.out_dim();
            if idx < nw {
                return l.weights.as_slice()[idx];
            }
            idx -= nw;
            if idx < l.out_dim() {
                return l.bias[idx];
            }
            idx -= l.out_dim();
        }
        panic!("parameter index out of range");
    }

    pub fn forward(&self, input: &Matrix) -> Result<Forward, NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                context: "forward input width".into(),
                expected: self.input_dim(),
                got: input.cols(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &post[i - 1] };
            let mut z = if i == 0 && is_sparse(x) {
                sparse_matmul(x, &layer.weights)
            } else {
                x.matmul(&layer.weights)
            };
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = layer.activation.apply(&z);
            pre.push(z);
            post.push(a);
        }
        Ok(Forward {
            input: input.clone(),
            pre,
            post,
        })
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward(input)?.into_output())
    }

    /// Predicts every row of `source`, in fixed-size chunks.
    pub fn predict_source<S: RowSource + ?Sized>(&self, source: &S) -> Result<Matrix, NnError> {
        let idx: Vec<usize> = (0..source.n_rows()).collect();
        let mut parts = Vec::new();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            parts.push(self.predict(&source.gather(chunk))?);
        }
        if parts.is_empty() {
            return Ok(Matrix::zeros(0, self.output_dim()));
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        Ok(Matrix::vstack(&refs))
    }

    /// Reverse-mode pass from `d_output = dL/d(output)`. Returns parameter
    /// gradients and, when requested, `dL/d(input)`.
    pub fn backward(
        &self,
        fwd: &Forward,
        d_output: &Matrix,
        need_input_grad: bool,
    ) -> Result<(Gradients, Option<Matrix>), NnError> {
        let out = fwd.output();
        if d_output.shape() != out.shape() {
            return Err(NnError::ShapeMismatch {
                context: "backward output gradient".into(),
                expected: out.cols(),
                got: d_output.cols(),
            });
        }
        let n = self.layers.len();
        let mut grads: Vec<Option<LayerGrad>> = vec![None; n];
        let mut da = d_output.clone();
        let mut d_input = None;
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let dz = layer.activation.backprop(&fwd.pre[i], &fwd.post[i], &da);
            let x = if i == 0 { &fwd.input } else { &fwd.post[i - 1] };
            let dw = if i == 0 && is_sparse(x) {
                sparse_t_matmul(x, &dz)
            } else {
                x.t_matmul(&dz)
            };
            let mut db = vec![0.0; layer.out_dim()];
            for r in 0..dz.rows() {
                for (b, g) in db.iter_mut().zip(dz.row(r)) {
                    *b += g;
                }
            }
            grads[i] = Some(LayerGrad {
                weights: dw,
                bias: db,
            });
            if i > 0 {
                da = dz.matmul_t(&layer.weights);
            } else if need_input_grad {
                d_input = Some(dz.matmul_t(&layer.weights));
            }
        }
        let grads = Gradients {
            layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
        };
        if let Some(layer) = grads.first_non_finite() {
            return Err(NnError::NonFinite { layer });
        }
        Ok((grads, d_input))
    }
}

fn is_sparse(x: &Matrix) -> bool {
    x.cols() >= SPARSE_MIN_WIDTH && x.zero_fraction() > SPARSE_ZERO_FRACTION
}

fn sparse_matmul(x: &Matrix, w: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    for i in 0..x.rows() {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        for (k, &v) in xi.iter().enumerate() {
            if v != 0.0 {
                for (o, wv) in oi.iter_mut().zip(w.row(k)) {
                    *o += v * wv;
                }
            }
        }
    }
    out
}

fn sparse_t_matmul(x: &Matrix, dz: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.cols(), dz.cols());
    for i in 0..x.rows() {
        let dzi = dz.row(i);
        for (k, &v) in x.row(i).iter().enumerate() {
            if v != 0.0 {
                for (o, g) in out.row_mut(k).iter_mut().zip(dzi) {
                    *o += v * g;
                }
            }
        }
    }
    out
}

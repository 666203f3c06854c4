//! Central finite-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

use super::loss;
use super::matrix::Matrix;
use super::model::{Gradients, ModelGraph};
use super::NnError;

/// Supervision attached to a [`Batch`].
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<u32>),
    Dense(Matrix),
}

/// Inputs plus optional supervision, all sharing the leading dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Option<Targets>,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Option<Targets>) -> Result<Self, NnError> {
        let n = match &targets {
            Some(Targets::Labels(l)) => Some(l.len()),
            Some(Targets::Dense(m)) => Some(m.rows()),
            None => None,
        };
        if let Some(n) = n {
            if n != inputs.rows() {
                return Err(NnError::ShapeMismatch {
                    context: "batch targets".into(),
                    expected: inputs.rows(),
                    got: n,
                });
            }
        }
        Ok(Self { inputs, targets })
    }

    fn labels(&self) -> Result<&[u32], NnError> {
        match &self.targets {
            Some(Targets::Labels(l)) => Ok(l),
            _ => Err(NnError::InvalidArgument("loss needs label targets".into())),
        }
    }

    fn dense(&self) -> Result<&Matrix, NnError> {
        match &self.targets {
            Some(Targets::Dense(m)) => Ok(m),
            _ => Err(NnError::InvalidArgument("loss needs dense targets".into())),
        }
    }
}

/// Which loss to place on top of a model's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "loss")]
pub enum LossSpec {
    /// Softmax-output model against label targets.
    CrossEntropy,
    /// Output against dense targets.
    Mse,
    /// Output logits against dense 0/1 targets.
    MaskBce,
    /// Inputs are `copies` stacked corrupted versions of one batch.
    Consistency { copies: usize },
    /// Output rows are L2-normalised then scored against label targets.
    SupCon { temperature: f64 },
}

/// Loss value and parameter gradients of `spec` on `batch`.
pub fn loss_and_grad(
    model: &ModelGraph,
    batch: &Batch,
    spec: LossSpec,
) -> Result<(f64, Gradients), NnError> {
    let fwd = model.forward(&batch.inputs)?;
    let out = fwd.output();
    let (value, d_out) = match spec {
        LossSpec::CrossEntropy => {
            let l = loss::cross_entropy(out, batch.labels()?)?;
            (l.value, l.grad)
        }
        LossSpec::Mse => {
            let l = loss::reconstruction_mse(out, batch.dense()?)?;
            (l.value, l.grad)
        }
        LossSpec::MaskBce => {
            let l = loss::mask_bce(out, batch.dense()?)?;
            (l.value, l.grad)
        }
        LossSpec::Consistency { copies } => {
            if copies == 0 || out.rows() % copies != 0 {
                return Err(NnError::InvalidArgument(format!(
                    "{} rows do not split into {copies} copies",
                    out.rows()
                )));
            }
            let b = out.rows() / copies;
            let idx: Vec<Vec<usize>> = (0..copies).map(|k| (k * b..(k + 1) * b).collect()).collect();
            let sets: Vec<Matrix> = idx.iter().map(|ix| out.select_rows(ix)).collect();
            let (value, grads) = loss::consistency(&sets)?;
            let refs: Vec<&Matrix> = grads.iter().collect();
            (value, Matrix::vstack(&refs))
        }
        LossSpec::SupCon { temperature } => {
            let (z, norms) = loss::l2_normalize_rows(out);
            let l = loss::supcon(&z, batch.labels()?, temperature)?;
            (l.value, loss::l2_normalize_backward(&z, &norms, &l.grad))
        }
    };
    let (grads, _) = model.backward(&fwd, &d_out, false)?;
    Ok((value, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flattened index of the worst parameter.
    pub worst_param: usize,
    pub params_checked: usize,
    pub epsilon: f64,
    pub floor: f64,
}

/// Denominator floor for the relative error, so parameters with vanishing
/// gradient are judged on absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Checks the analytic gradient of `f` against central differences on every
/// parameter of `model`.
pub fn gradcheck_fn<F>(model: &ModelGraph, f: F, epsilon: f64) -> Result<GradcheckReport, NnError>
where
    F: Fn(&ModelGraph) -> Result<(f64, Gradients), NnError>,
{
    let (_, analytic) = f(model)?;
    let analytic = analytic.flat();
    let mut probe = model.clone();
    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst_param: 0,
        params_checked: analytic.len(),
        epsilon,
        floor: REL_ERR_FLOOR,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.param(i);
        *probe.param_mut(i) = orig + epsilon;
        let (plus, _) = f(&probe)?;
        *probe.param_mut(i) = orig - epsilon;
        let (minus, _) = f(&probe)?;
        *probe.param_mut(i) = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = i;
        }
    }
    Ok(report)
}

/// Gradient check of a standard loss on `batch`.
pub fn gradcheck(
    model: &ModelGraph,
    batch: &Batch,
    spec: LossSpec,
    epsilon: f64,
) -> Result<GradcheckReport, NnError> {
    gradcheck_fn(model, |m| loss_and_grad(m, batch, spec), epsilon)
}

/// One entry of [`standard_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub name: String,
    pub tolerance: f64,
    pub report: GradcheckReport,
}

impl GradcheckCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_err < self.tolerance
    }
}

fn random_matrix(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Matrix {
    use rand::Rng;
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Gradient checks of every training loss on small random models. The linear
/// MSE case is quadratic in the parameters, so central differences are exact
/// up to rounding and it gets the tight tolerance.
pub fn standard_suite(seed: u64) -> Result<Vec<GradcheckCase>, NnError> {
    use super::model::Activation::{Identity, Relu, Softmax};
    const EPS: f64 = 1e-5;
    let mut rng = crate::rng::rng_for(seed, 0);
    let labels = |n: usize, c: u32| Targets::Labels((0..n as u32).map(|i| i % c).collect());
    let mut cases = Vec::new();
    let mut push = |name: &str, tolerance: f64, model: ModelGraph, batch: Batch, spec: LossSpec| {
        let report = gradcheck(&model, &batch, spec, EPS)?;
        cases.push(GradcheckCase { name: name.into(), tolerance, report });
        Ok::<_, NnError>(())
    };

    let x = random_matrix(&mut rng, 6, 4);
    let y = random_matrix(&mut rng, 6, 3);
    push("mse_linear", 1e-8, ModelGraph::mlp(&[4, 3], Relu, Identity, seed), Batch::new(x, Some(Targets::Dense(y)))?, LossSpec::Mse)?;

    let x = random_matrix(&mut rng, 7, 5);
    push("cross_entropy", 1e-4, ModelGraph::mlp(&[5, 8, 6, 3], Relu, Softmax, seed + 1), Batch::new(x, Some(labels(7, 3)))?, LossSpec::CrossEntropy)?;

    let x = random_matrix(&mut rng, 5, 4);
    let y = random_matrix(&mut rng, 5, 4);
    push("mse", 1e-4, ModelGraph::mlp(&[4, 6, 4], Relu, Identity, seed + 2), Batch::new(x, Some(Targets::Dense(y)))?, LossSpec::Mse)?;

    let x = random_matrix(&mut rng, 5, 4);
    let mask = random_matrix(&mut rng, 5, 4).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    push("mask_bce", 1e-4, ModelGraph::mlp(&[4, 6, 4], Relu, Identity, seed + 3), Batch::new(x, Some(Targets::Dense(mask)))?, LossSpec::MaskBce)?;

    let x = random_matrix(&mut rng, 9, 4);
    push("consistency", 1e-4, ModelGraph::mlp(&[4, 6, 3], Relu, Softmax, seed + 4), Batch::new(x, None)?, LossSpec::Consistency { copies: 3 })?;

    let x = random_matrix(&mut rng, 8, 4);
    push("supcon", 1e-4, ModelGraph::mlp(&[4, 6, 5], Relu, Identity, seed + 5), Batch::new(x, Some(labels(8, 3)))?, LossSpec::SupCon { temperature: 0.5 })?;
    Ok(cases)
}


//! Loss functions. Each returns the scalar value together with its gradient
//! with respect to the loss input, so callers can chain into
//! [`ModelGraph::backward`](super::ModelGraph::backward).

use super::matrix::Matrix;
use super::model::sigmoid;
use super::NnError;

/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

fn check_shape(a: &Matrix, b: &Matrix, context: &str) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch {
            context: format!("{context}: {:?} vs {:?}", a.shape(), b.shape()),
            expected: a.cols(),
            got: b.cols(),
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under row-stochastic `probs`.
pub fn cross_entropy(probs: &Matrix, labels: &[u32]) -> Result<LossOutput, NnError> {
    if probs.rows() != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "cross entropy labels".into(),
            expected: probs.rows(),
            got: labels.len(),
        });
    }
    let classes = probs.cols();
    let b = probs.rows().max(1) as f64;
    let mut grad = Matrix::zeros(probs.rows(), classes);
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return Err(NnError::InvalidLabel {
                label: y,
                classes,
            });
        }
        let p = probs.get(i, y);
        if p > LOG_CLAMP {
            value -= p.ln();
            grad.set(i, y, -1.0 / (p * b));
        } else {
            value -= LOG_CLAMP.ln();
        }
    }
    Ok(LossOutput {
        value: value / b,
        grad,
    })
}

/// Mean squared error over every entry.
pub fn reconstruction_mse(pred: &Matrix, target: &Matrix) -> Result<LossOutput, NnError> {
    check_shape(pred, target, "reconstruction")?;
    let n = pred.as_slice().len().max(1) as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut value = 0.0;
    for ((g, &p), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let d = p - t;
        value += d * d;
        *g = 2.0 * d / n;
    }
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

/// Mean binary cross-entropy between `logits` and 0/1 `mask` bits.
pub fn mask_bce(logits: &Matrix, mask: &Matrix) -> Result<LossOutput, NnError> {
    check_shape(logits, mask, "mask bce")?;
    let n = logits.as_slice().len().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut value = 0.0;
    for ((g, &x), &y) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(logits.as_slice())
        .zip(mask.as_slice())
    {
        value += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        *g = (sigmoid(x) - y) / n;
    }
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

/// Consistency across `K ≥ 2` prediction sets of the same batch: the mean over
/// samples of the per-class population variance across the sets, summed over
/// classes. Returns one gradient per set.
pub fn consistency(preds: &[Matrix]) -> Result<(f64, Vec<Matrix>), NnError> {
    let k = preds.len();
    if k < 2 {
        return Err(NnError::InvalidArgument(format!(
            "consistency needs at least 2 prediction sets, got {k}"
        )));
    }
    for p in &preds[1..] {
        check_shape(&preds[0], p, "consistency")?;
    }
    let (b, c) = preds[0].shape();
    let kf = k as f64;
    let bf = b.max(1) as f64;
    let mut mean = Matrix::zeros(b, c);
    for p in preds {
        mean.add_assign(p);
    }
    mean.scale(1.0 / kf);
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(k);
    for p in preds {
        let mut g = Matrix::zeros(b, c);
        for ((gv, &pv), &mv) in g
            .as_mut_slice()
            .iter_mut()
            .zip(p.as_slice())
            .zip(mean.as_slice())
        {
            let d = pv - mv;
            value += d * d;
            *gv = 2.0 * d / (kf * bf);
        }
        grads.push(g);
    }
    Ok((value / (kf * bf), grads))
}

/// Row-wise L2 normalisation. Returns the normalised rows and the norms
/// (clamped below at `1e-12`).
pub fn l2_normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = y.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in row.iter_mut() {
            *v /= n;
        }
        norms.push(n);
    }
    (y, norms)
}

/// Gradient of [`l2_normalize_rows`]: maps `dL/dy` to `dL/dx`.
pub fn l2_normalize_backward(y: &Matrix, norms: &[f64], dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yi = y.row(i);
        let gi = dy.row(i);
        let dot: f64 = yi.iter().zip(gi).map(|(a, b)| a * b).sum();
        for (o, (a, g)) in dx.row_mut(i).iter_mut().zip(yi.iter().zip(gi)) {
            *o = (g - a * dot) / norms[i];
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub value: f64,
    pub grad: Matrix,
    /// Anchors with at least one same-label partner; the rest are skipped.
    pub anchors: usize,
}

/// Supervised contrastive loss over L2-normalised `projections`.
///
/// For each anchor `i` with positives `P(i)` (other rows sharing its label):
/// `L_i = -1/|P(i)| Σ_{p∈P(i)} log( exp(s_ip/τ) / Σ_{a≠i} exp(s_ia/τ) )`,
/// averaged over anchors that have positives.
pub fn supcon(
    projections: &Matrix,
    labels: &[u32],
    temperature: f64,
) -> Result<SupConOutput, NnError> {
    if !(temperature > 0.0) {
        return Err(NnError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let b = projections.rows();
    if labels.len() != b {
        return Err(NnError::ShapeMismatch {
            context: "supcon labels".into(),
            expected: b,
            got: labels.len(),
        });
    }
    let mut sims = projections.matmul_t(projections);
    sims.scale(1.0 / temperature);

    let mut g = Matrix::zeros(b, b);
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..b {
        let positives = (0..b).filter(|&j| j != i && labels[j] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        anchors += 1;
        let row = sims.row(i);
        let max = (0..b)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives as f64;
        let mut li = lse;
        let gi = g.row_mut(i);
        for j in 0..b {
            if j == i {
                continue;
            }
            gi[j] = (row[j] - lse).exp();
            if labels[j] == labels[i] {
                li -= row[j] * inv_p;
                gi[j] -= inv_p;
            }
        }
        total += li;
    }
    if anchors == 0 {
        return Ok(SupConOutput {
            value: 0.0,
            grad: Matrix::zeros(b, projections.cols()),
            anchors,
        });
    }
    let scale = 1.0 / (anchors as f64 * temperature);
    // dZ = (G + Gᵀ) Z / (n τ)
    let mut gsym = g.clone();
    for i in 0..b {
        for j in 0..b {
            gsym.set(i, j, g.get(i, j) + g.get(j, i));
        }
    }
    let mut grad = gsym.matmul(projections);
    grad.scale(scale);
    Ok(SupConOutput {
        value: total / anchors as f64,
        grad,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let perfect = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(cross_entropy(&perfect, &[0, 1]).unwrap().value, 0.0);

        let uniform = Matrix::filled(3, 4, 0.25);
        let v = cross_entropy(&uniform, &[0, 3, 2]).unwrap().value;
        assert!((v - 4f64.ln()).abs() < 1e-12);

        let p = Matrix::from_rows(&[vec![0.7, 0.3]]);
        let v = cross_entropy(&p, &[0]).unwrap().value;
        // -ln 0.7
        assert!((v - 0.356_674_943_938_732_4).abs() < 1e-12);

        assert!(matches!(
            cross_entropy(&p, &[2]),
            Err(NnError::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let out = cross_entropy(&p, &[0]).unwrap();
        assert!((out.value + LOG_CLAMP.ln()).abs() < 1e-12);
        assert!(out.grad.is_finite());
    }

    #[test]
    fn consistency_examples() {
        let a = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.5]]);
        let (v, _) = consistency(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(v, 0.0);

        let x = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let y = Matrix::from_rows(&[vec![0.0, 1.0]]);
        let (v, _) = consistency(&[x.clone(), y.clone()]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let (w, _) = consistency(&[y, x]).unwrap();
        assert_eq!(v, w);

        assert!(consistency(&[a]).is_err());
    }

    #[test]
    fn bce_and_mse_examples() {
        let zeros = Matrix::zeros(2, 3);
        let mask = Matrix::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
        let v = mask_bce(&zeros, &mask).unwrap().value;
        assert!((v - 2f64.ln()).abs() < 1e-15);

        let perfect = mask.map(|m| if m > 0.5 { 1e3 } else { -1e3 });
        assert_eq!(mask_bce(&perfect, &mask).unwrap().value, 0.0);

        let x = Matrix::from_rows(&[vec![1.5, -2.0]]);
        assert_eq!(reconstruction_mse(&x, &x).unwrap().value, 0.0);
        assert!(reconstruction_mse(&x, &zeros).is_err());
    }

    #[test]
    fn supcon_identical_embeddings() {
        // All similarities equal: each positive term is log(1/(B-1)).
        let b = 6;
        let z = Matrix::from_vec(b, 2, [0.6, 0.8].repeat(b));
        let labels = [0, 0, 0, 1, 1, 1];
        let out = supcon(&z, &labels, 0.5).unwrap();
        assert_eq!(out.anchors, 6);
        assert!((out.value - ((b - 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn supcon_skips_singletons() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]);
        let out = supcon(&z, &[0, 0, 1], 0.1).unwrap();
        assert_eq!(out.anchors, 2);
        assert!(out.value.is_finite());
        assert!(supcon(&z, &[0, 0, 1], 0.0).is_err());
    }

    #[test]
    fn supcon_temperature_keeps_most_attractive_pair() {
        // Anchor 0 has positives 1 and 2; 1 is closer. The per-positive term
        // s_ip/τ - lse is larger for 1 at every temperature.
        let (z, _) = l2_normalize_rows(&Matrix::from_rows(&[
            vec![1.0, 0.1],
            vec![1.0, 0.2],
            vec![0.3, 1.0],
            vec![-1.0, 0.4],
        ]));
        for tau in [0.05, 0.5, 5.0] {
            let s = z.matmul_t(&z);
            let t1 = s.get(0, 1) / tau;
            let t2 = s.get(0, 2) / tau;
            assert!(t1 > t2);
            assert!(supcon(&z, &[0, 0, 0, 1], tau).unwrap().value.is_finite());
        }
    }

    #[test]
    fn normalize_rows_unit_norm() {
        let (y, _) = l2_normalize_rows(&Matrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]));
        assert_eq!(y.row(0), &[0.6, 0.8]);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }
}

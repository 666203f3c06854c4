use serde::{Deserialize, Serialize};

use super::CmixupError;
use crate::nn::{argmax, loss, Matrix};

/// Which latent feeds the similarity graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationSource {
    #[default]
    Encoder,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    /// Neighbours per node, capped at half the node count.
    pub k: usize,
    /// Diffusion coefficient in `(I − αS) Z = Y`.
    pub alpha: f64,
    /// Exponent applied to positive cosine similarities.
    pub gamma: f64,
    /// Relative residual at which conjugate gradient stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub source: PropagationSource,
    /// Seed each class with `1/n_c` per labeled row instead of 1, so classes
    /// with more labeled rows do not dominate the diffusion.
    pub class_balanced: bool,
    /// Divide unlabeled certainties by their maximum.
    pub rescale_weights: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            k: 50,
            alpha: 0.99,
            gamma: 3.0,
            tolerance: 1e-6,
            max_iterations: 1000,
            source: PropagationSource::Encoder,
            class_balanced: true,
            rescale_weights: true,
        }
    }
}

/// Diffused labels for every node. Labeled nodes keep their label with
/// weight 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub labels: Vec<u32>,
    /// Certainty `1 − H(p)/ln C` of the row-normalized diffusion scores,
    /// divided by the largest unlabeled certainty when rescaling.
    pub weights: Vec<f64>,
    pub is_labeled: Vec<bool>,
    /// Conjugate-gradient iterations used per class.
    pub iterations: Vec<usize>,
}

/// Symmetric sparse matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |p| (self.indices[p] as usize, self.values[p]))
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[p] * x[self.indices[p] as usize];
            }
            *o = s;
        }
    }

    fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(u32, u32)> = None;
        for (i, j, w) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += w;
            } else {
                indices.push(j);
                values.push(w);
                indptr[i as usize + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }
}

/// Rows scored per dense similarity block.
const KNN_CHUNK: usize = 256;

/// Mutual kNN affinity: `W_ij = max(cos_ij, 0)^γ` over each row's `k`
/// most similar other rows (ties to the lower index), then `W + Wᵀ`.
pub fn knn_graph(latents: &Matrix, k: usize, gamma: f64) -> Result<SparseGraph, CmixupError> {
    let n = latents.rows();
    if k >= n {
        return Err(CmixupError::Propagation(format!(
            "k = {k} must be smaller than the number of nodes {n}"
        )));
    }
    let (z, _) = loss::l2_normalize_rows(latents);
    let mut triplets = Vec::with_capacity(2 * n * k);
    let mut cand: Vec<(f64, u32)> = Vec::with_capacity(n);
    let by_rank = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let all: Vec<usize> = (0..n).collect();
    for start in (0..n).step_by(KNN_CHUNK) {
        let end = (start + KNN_CHUNK).min(n);
        let block = z.select_rows(&all[start..end]).matmul_t(&z);
        for i in start..end {
            let sims = block.row(i - start);
            cand.clear();
            cand.extend(
                sims.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, &s)| (s, j as u32)),
            );
            if k > 0 {
                cand.select_nth_unstable_by(k - 1, by_rank);
            }
            for &(s, j) in &cand[..k] {
                let w = s.max(0.0).powf(gamma);
                if w > 0.0 {
                    triplets.push((i as u32, j, w));
                    triplets.push((j, i as u32, w));
                }
            }
        }
    }
    Ok(SparseGraph::from_triplets(n, triplets))
}

/// `D^{-1/2} W D^{-1/2}`; isolated nodes keep an empty row.
pub fn normalize_graph(w: &SparseGraph) -> SparseGraph {
    let deg: Vec<f64> = (0..w.n).map(|i| w.row(i).map(|(_, v)| v).sum()).collect();
    let inv: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let mut s = w.clone();
    for i in 0..w.n {
        for p in w.indptr[i]..w.indptr[i + 1] {
            s.values[p] *= inv[i] * inv[w.indices[p] as usize];
        }
    }
    s
}

/// Solves `(I − αS) z = b` by conjugate gradient from `z = 0`.
pub fn conjugate_gradient(
    s: &SparseGraph,
    alpha: f64,
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, usize), CmixupError> {
    let n = s.n;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iterations {
        s.matvec(&p, &mut ap);
        for (a, &pi) in ap.iter_mut().zip(&p) {
            *a = pi - alpha * *a;
        }
        let step = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() / b_norm < tolerance {
            return Ok((x, it));
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    Err(CmixupError::NoConvergence {
        residual: rr.sqrt() / b_norm,
        iterations: max_iterations,
    })
}

/// Certainty of a non-negative score row: `1 − H(p)/ln C` after
/// normalizing; all-zero rows count as uniform (certainty 0).
pub fn certainty(scores: &[f64]) -> f64 {
    let c = scores.len();
    if c < 2 {
        return 1.0;
    }
    let total: f64 = scores.iter().map(|s| s.max(0.0)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = scores
        .iter()
        .map(|s| s.max(0.0) / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    (1.0 - h / (c as f64).ln()).clamp(0.0, 1.0)
}

/// Diffuses `labels` of `labeled_rows` over the kNN graph of `latents`.
pub fn propagate_labels(
    latents: &Matrix,
    labeled_rows: &[usize],
    labels: &[u32],
    num_classes: usize,
    cfg: &PropagationConfig,
) -> Result<PropagationResult, CmixupError> {
    let n = latents.rows();
    if labeled_rows.len() != labels.len() {
        return Err(CmixupError::Propagation(format!(
            "{} labeled rows but {} labels",
            labeled_rows.len(),
            labels.len()
        )));
    }
    if cfg.k >= n {
        return Err(CmixupError::Propagation(format!(
            "k = {} must be smaller than the number of nodes {n}",
            cfg.k
        )));
    }
    let mut seen = vec![false; num_classes];
    for &y in labels {
        let y = y as usize;
        if y >= num_classes {
            return Err(CmixupError::Propagation(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(CmixupError::Propagation(format!("class {c} has no labeled row")));
    }
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(CmixupError::Propagation(format!(
            "alpha {} must lie in [0, 1)",
            cfg.alpha
        )));
    }
    let k = cfg.k.min(n / 2);
    let s = normalize_graph(&knn_graph(latents, k, cfg.gamma)?);

    let mut class_sizes = vec![0usize; num_classes];
    for &y in labels {
        class_sizes[y as usize] += 1;
    }
    let mut z = Matrix::zeros(n, num_classes);
    let mut iterations = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let seed = if cfg.class_balanced {
            1.0 / class_sizes[c] as f64
        } else {
            1.0
        };
        let mut b = vec![0.0; n];
        for (&r, &y) in labeled_rows.iter().zip(labels) {
            if y as usize == c {
                b[r] = seed;
            }
        }
        let (zc, it) = conjugate_gradient(&s, cfg.alpha, &b, cfg.tolerance, cfg.max_iterations)
            .map_err(|e| match e {
                CmixupError::NoConvergence { residual, iterations } => CmixupError::Propagation(format!(
                    "class {c}: conjugate gradient stopped at relative residual {residual:e} after {iterations} iterations"
                )),
                other => other,
            })?;
        for (i, v) in zc.into_iter().enumerate() {
            z.set(i, c, v);
        }
        iterations.push(it);
    }

    let mut out_labels = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let row = z.row(i);
        out_labels.push(argmax(row) as u32);
        weights.push(certainty(row));
    }
    let mut is_labeled = vec![false; n];
    for &r in labeled_rows {
        is_labeled[r] = true;
    }
    if cfg.rescale_weights {
        let max = (0..n)
            .filter(|&i| !is_labeled[i])
            .map(|i| weights[i])
            .fold(0.0, f64::max);
        if max > 0.0 {
            for (w, &l) in weights.iter_mut().zip(&is_labeled) {
                if !l {
                    *w = (*w / max).min(1.0);
                }
            }
        }
    }
    for (&r, &y) in labeled_rows.iter().zip(labels) {
        out_labels[r] = y;
        weights[r] = 1.0;
    }
    Ok(PropagationResult {
        labels: out_labels,
        weights,
        is_labeled,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Matrix {
        Matrix::from_rows(&(0..n).map(|i| vec![1.0, i as f64 * 0.01]).collect::<Vec<_>>())
    }

    #[test]
    fn graph_is_symmetric() {
        let g = knn_graph(&line(20), 3, 3.0).unwrap();
        for i in 0..g.n() {
            for (j, w) in g.row(i) {
                let back = g.row(j).find(|&(k, _)| k == i).map(|x| x.1);
                assert_eq!(back, Some(w));
            }
        }
    }

    #[test]
    fn k_must_be_below_node_count() {
        assert!(knn_graph(&line(5), 5, 3.0).is_err());
        let cfg = PropagationConfig {
            k: 5,
            ..PropagationConfig::default()
        };
        assert!(propagate_labels(&line(5), &[0, 4], &[0, 1], 2, &cfg).is_err());
    }

    #[test]
    fn zero_alpha_leaves_unlabeled_uniform() {
        let cfg = PropagationConfig {
            k: 3,
            alpha: 0.0,
            ..PropagationConfig::default()
        };
        let r = propagate_labels(&line(10), &[0, 9], &[0, 1], 2, &cfg).unwrap();
        for i in 1..9 {
            assert_eq!(r.weights[i], 0.0);
            assert_eq!(r.labels[i], 0);
        }
        assert_eq!(r.weights[0], 1.0);
        assert_eq!(r.labels[9], 1);
    }

    #[test]
    fn rescaled_weights_peak_at_one() {
        let raw = PropagationConfig {
            k: 3,
            rescale_weights: false,
            ..PropagationConfig::default()
        };
        let scaled = PropagationConfig {
            k: 3,
            ..PropagationConfig::default()
        };
        let a = propagate_labels(&line(12), &[0, 1, 11], &[0, 0, 1], 2, &raw).unwrap();
        let b = propagate_labels(&line(12), &[0, 1, 11], &[0, 0, 1], 2, &scaled).unwrap();
        let max = (2..11).map(|i| a.weights[i]).fold(0.0, f64::max);
        assert!(max < 1.0);
        for i in 2..11 {
            assert!((b.weights[i] - a.weights[i] / max).abs() < 1e-12);
        }
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn certainty_bounds() {
        assert_eq!(certainty(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(certainty(&[0.2, 0.2]), 0.0);
        assert_eq!(certainty(&[0.0, 0.0]), 0.0);
        let c = certainty(&[0.7, 0.2, 0.1]);
        assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn cg_solves_small_system() {
        let g = normalize_graph(&knn_graph(&line(12), 2, 1.0).unwrap());
        let b: Vec<f64> = (0..12).map(|i| (i % 3) as f64).collect();
        let (x, _) = conjugate_gradient(&g, 0.9, &b, 1e-10, 500).unwrap();
        let mut ax = vec![0.0; 12];
        g.matvec(&x, &mut ax);
        for i in 0..12 {
            assert!((x[i] - 0.9 * ax[i] - b[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let g = normalize_graph(&knn_graph(&line(30), 3, 1.0).unwrap());
        let b = vec![1.0; 30];
        let err = conjugate_gradient(&g, 0.99, &b, 1e-14, 1).unwrap_err();
        assert!(matches!(err, CmixupError::NoConvergence { iterations: 1, .. }));
    }
}

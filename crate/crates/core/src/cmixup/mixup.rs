use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::CmixupError;
use crate::nn::Matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixupSpec {
    /// λ ~ Beta(beta_alpha, beta_alpha).
    pub beta_alpha: f64,
    pub pairs_per_anchor: usize,
}

impl Default for MixupSpec {
    fn default() -> Self {
        Self {
            beta_alpha: 0.2,
            pairs_per_anchor: 1,
        }
    }
}

/// Mixed latents with their provenance, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupOutput {
    pub mixed: Matrix,
    pub labels: Vec<u32>,
    pub anchors: Vec<usize>,
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Labeled rows that had no same-label partner in the batch.
    pub skipped: usize,
}

impl MixupOutput {
    /// Routes `d_mixed` back to the source rows: `λ` to the anchor and
    /// `1 − λ` to the partner.
    pub fn backward(&self, d_mixed: &Matrix, n_rows: usize) -> Matrix {
        let mut dz = Matrix::zeros(n_rows, d_mixed.cols());
        for (m, ((&i, &j), &lam)) in self.anchors.iter().zip(&self.partners).zip(&self.lambdas).enumerate() {
            let g = d_mixed.row(m);
            for (d, &v) in dz.row_mut(i).iter_mut().zip(g) {
                *d += lam * v;
            }
            for (d, &v) in dz.row_mut(j).iter_mut().zip(g) {
                *d += (1.0 - lam) * v;
            }
        }
        dz
    }
}

/// Convex combination of two latent rows.
pub fn mix_rows(zi: &[f64], zj: &[f64], lambda: f64) -> Vec<f64> {
    zi.iter().zip(zj).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect()
}

/// For every row with a label, pairs it with a uniformly chosen other row of
/// the same label and mixes them with `λ ~ Beta(α, α)`. Rows labeled `None`
/// take no part; labeled rows without a partner are skipped.
pub fn latent_mixup(
    latents: &Matrix,
    labels: &[Option<u32>],
    spec: &MixupSpec,
    rng: &mut Rng,
) -> Result<MixupOutput, CmixupError> {
    if labels.len() != latents.rows() {
        return Err(CmixupError::Config(format!(
            "{} labels for {} latent rows",
            labels.len(),
            latents.rows()
        )));
    }
    if !(spec.beta_alpha > 0.0 && spec.beta_alpha.is_finite()) {
        return Err(CmixupError::Config(format!(
            "mixup beta_alpha {} must be positive",
            spec.beta_alpha
        )));
    }
    let beta = Beta::new(spec.beta_alpha, spec.beta_alpha)
        .map_err(|e| CmixupError::Config(e.to_string()))?;
    let max_label = labels.iter().flatten().max().map_or(0, |&m| m as usize + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); max_label];
    for (i, l) in labels.iter().enumerate() {
        if let Some(y) = l {
            groups[*y as usize].push(i);
        }
    }
    let mut out = MixupOutput {
        mixed: Matrix::zeros(0, latents.cols()),
        labels: Vec::new(),
        anchors: Vec::new(),
        partners: Vec::new(),
        lambdas: Vec::new(),
        skipped: 0,
    };
    let mut data = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let Some(y) = l else { continue };
        let group = &groups[*y as usize];
        if group.len() < 2 {
            out.skipped += 1;
            continue;
        }
        for _ in 0..spec.pairs_per_anchor {
            // Uniform over the group minus the anchor itself.
            let pos = group.binary_search(&i).expect("anchor in its group");
            let mut k = rng.random_range(0..group.len() - 1);
            if k >= pos {
                k += 1;
            }
            let j = group[k];
            let lam: f64 = beta.sample(rng);
            data.extend(mix_rows(latents.row(i), latents.row(j), lam));
            out.labels.push(*y);
            out.anchors.push(i);
            out.partners.push(j);
            out.lambdas.push(lam);
        }
    }
    out.mixed = Matrix::from_vec(out.anchors.len(), latents.cols(), data);
    Ok(out)
}

use serde::{Deserialize, Serialize};

use super::counts::CategoryCounts;
use super::EncodingError;
use crate::data::TabularDataset;

/// Smoothed target statistics: each value's empirical class distribution
/// shrunk toward the global prior with weight `n / (n + smoothing)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncodingTable {
    counts: CategoryCounts,
    smoothing: f64,
    global_prior: Vec<f64>,
    /// Emit the shrunk mean class index (width 1) instead of the per-class
    /// vector.
    scalar: bool,
}

pub fn fit_target_encoding(
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
    smoothing: f64,
) -> Result<TargetEncodingTable, EncodingError> {
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(EncodingError::InvalidParameter(format!(
            "smoothing must be finite and non-negative, got {smoothing}"
        )));
    }
    let counts = CategoryCounts::empty(ds, ds.num_classes()).add(ds, rows, labels)?;
    Ok(TargetEncodingTable::from_counts(counts, smoothing, false))
}

/// Returns `table` with the statistics of `rows` added; the prior is
/// recomputed from the combined counts. Equals fitting on the union of rows.
pub fn update_target_encoding(
    table: &TargetEncodingTable,
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
) -> Result<TargetEncodingTable, EncodingError> {
    let counts = table.counts.add(ds, rows, labels)?;
    Ok(TargetEncodingTable::from_counts(counts, table.smoothing, table.scalar))
}

impl TargetEncodingTable {
    fn from_counts(counts: CategoryCounts, smoothing: f64, scalar: bool) -> Self {
        let c = counts.num_classes();
        let n = counts.n_counted();
        let global_prior = if n == 0 {
            vec![1.0 / c as f64; c]
        } else {
            counts
                .class_totals()
                .iter()
                .map(|&k| k as f64 / n as f64)
                .collect()
        };
        Self {
            counts,
            smoothing,
            global_prior,
            scalar,
        }
    }

    pub fn with_scalar(mut self, scalar: bool) -> Self {
        self.scalar = scalar;
        self
    }

    pub fn is_scalar(&self) -> bool {
        self.scalar
    }

    pub fn counts(&self) -> &CategoryCounts {
        &self.counts
    }

    pub fn global_prior(&self) -> &[f64] {
        &self.global_prior
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Output block width: C, or 1 for the scalar variant.
    pub fn width(&self) -> usize {
        if self.scalar {
            1
        } else {
            self.counts.num_classes()
        }
    }

    /// Shrinkage weight of the per-value estimate.
    fn weight(&self, n: u64) -> f64 {
        if n == 0 {
            0.0
        } else {
            n as f64 / (n as f64 + self.smoothing)
        }
    }

    pub fn write_encoding(&self, m: usize, value: usize, out: &mut [f64]) {
        let col = self.counts.column(m).expect("categorical column");
        let n = col.total(value);
        let w = self.weight(n);
        let counts = col.counts(value);
        let estimate = |c: usize| {
            if n == 0 {
                0.0
            } else {
                counts[c] as f64 / n as f64
            }
        };
        if self.scalar {
            let mean: f64 = (0..counts.len()).map(|c| c as f64 * estimate(c)).sum();
            let prior: f64 = self
                .global_prior
                .iter()
                .enumerate()
                .map(|(c, p)| c as f64 * p)
                .sum();
            out[0] = w * mean + (1.0 - w) * prior;
        } else {
            for (c, o) in out.iter_mut().enumerate() {
                *o = w * estimate(c) + (1.0 - w) * self.global_prior[c];
            }
        }
    }

    pub fn encoding(&self, m: usize, value: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.write_encoding(m, value, &mut out);
        out
    }
}

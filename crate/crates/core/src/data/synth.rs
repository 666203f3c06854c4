use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnSchema, DataError, TabularDataset};
use crate::rng::{rng_for, stream};

/// Parameters of the class-conditional synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_rows: usize,
    pub n_cat_cols: usize,
    pub cardinality: usize,
    pub n_num_cols: usize,
    pub n_classes: usize,
    /// Scale of the per-value class logits; 0 makes labels independent of
    /// every feature.
    pub signal_strength: f64,
    /// Zipf exponent of value frequencies: value `v` is drawn with
    /// probability proportional to `(v + 1)^-skew`. 0 is uniform.
    #[serde(default)]
    pub value_skew: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_rows: 2000,
            n_cat_cols: 4,
            cardinality: 50,
            n_num_cols: 2,
            n_classes: 3,
            signal_strength: 1.0,
            value_skew: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synthetic spec: {m}")));
        if self.n_rows == 0 {
            return bad("n_rows must be positive");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_cat_cols + self.n_num_cols == 0 {
            return bad("at least one column is required");
        }
        if self.n_cat_cols > 0 && self.cardinality < self.n_classes {
            return bad("cardinality must be at least n_classes");
        }
        if self.cardinality > u32::MAX as usize {
            return bad("cardinality too large");
        }
        if !(self.signal_strength.is_finite() && self.signal_strength >= 0.0) {
            return bad("signal_strength must be finite and non-negative");
        }
        if !(self.value_skew.is_finite() && self.value_skew >= 0.0) {
            return bad("value_skew must be finite and non-negative");
        }
        Ok(())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Draws a labeled dataset: every categorical value carries a latent class
/// distribution `softmax(s·g)`, values are drawn uniformly, the label is
/// drawn from the renormalized product of the row's value distributions, and
/// numerical columns are unit-variance Gaussians around class-specific means.
pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<TabularDataset, DataError> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, stream::SYNTH);
    let c = spec.n_classes;
    let s = spec.signal_strength;

    // Per-column, per-value log class probabilities.
    let log_theta: Vec<Vec<Vec<f64>>> = (0..spec.n_cat_cols)
        .map(|_| {
            (0..spec.cardinality)
                .map(|_| {
                    let g: Vec<f64> = (0..c)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            s * z
                        })
                        .collect();
                    log_softmax(&g)
                })
                .collect()
        })
        .collect();
    let num_scale = 0.5 * s.min(1.0);
    let means: Vec<Vec<f64>> = (0..spec.n_num_cols)
        .map(|_| {
            (0..c)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    num_scale * z
                })
                .collect()
        })
        .collect();

    // Cumulative value frequencies; empty when uniform.
    let cdf: Vec<f64> = if spec.value_skew > 0.0 {
        let w: Vec<f64> = (0..spec.cardinality)
            .map(|v| ((v + 1) as f64).powf(-spec.value_skew))
            .collect();
        let total: f64 = w.iter().sum();
        let mut acc = 0.0;
        w.iter()
            .map(|x| {
                acc += x / total;
                acc
            })
            .collect()
    } else {
        Vec::new()
    };

    let n = spec.n_rows;
    let mut cat: Vec<Vec<u32>> = vec![Vec::with_capacity(n); spec.n_cat_cols];
    let mut labels = Vec::with_capacity(n);
    let mut logits = vec![0.0; c];
    for _ in 0..n {
        logits.iter_mut().for_each(|l| *l = 0.0);
        for (m, col) in cat.iter_mut().enumerate() {
            let v = if cdf.is_empty() {
                rng.random_range(0..spec.cardinality)
            } else {
                let u: f64 = rng.random();
                cdf.partition_point(|&q| q <= u).min(spec.cardinality - 1)
            };
            col.push(v as u32);
            for (l, t) in logits.iter_mut().zip(&log_theta[m][v]) {
                *l += t;
            }
        }
        let p = log_softmax(&logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = c - 1;
        for (k, lp) in p.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                y = k;
                break;
            }
        }
        labels.push(y as u32);
    }
    let num: Vec<Vec<f64>> = means
        .iter()
        .map(|mu| {
            labels
                .iter()
                .map(|&y| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mu[y as usize] + e
                })
                .collect()
        })
        .collect();

    let domain: Vec<String> = (0..spec.cardinality).map(|v| format!("v{v}")).collect();
    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for (m, col) in cat.into_iter().enumerate() {
        schema.push(ColumnSchema::categorical(format!("cat{m}"), domain.clone()));
        columns.push(ColumnData::Categorical(col));
    }
    for (j, col) in num.into_iter().enumerate() {
        schema.push(ColumnSchema::numerical(format!("num{j}")));
        columns.push(ColumnData::Numerical(col));
    }
    TabularDataset::new(schema, columns, Some(labels), c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(s: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_rows: 10_000,
            n_cat_cols: 1,
            cardinality: 20,
            n_num_cols: 1,
            n_classes: 4,
            signal_strength: s,
            value_skew: 0.0,
            seed: 9,
        }
    }

    /// Accuracy of the per-value majority rule fitted on the first half and
    /// scored on the second half.
    fn lookup_accuracy(ds: &TabularDataset) -> f64 {
        let x = ds.categorical(0).unwrap();
        let y = ds.labels().unwrap();
        let half = x.len() / 2;
        let c = ds.num_classes();
        let mut counts = vec![vec![0usize; c]; ds.schema()[0].domain.len()];
        for i in 0..half {
            counts[x[i] as usize][y[i] as usize] += 1;
        }
        let hits = (half..x.len())
            .filter(|&i| {
                let row = &counts[x[i] as usize];
                let best = (0..c).max_by_key(|&k| (row[k], c - k)).unwrap();
                best == y[i] as usize
            })
            .count();
        hits as f64 / (x.len() - half) as f64
    }

    #[test]
    fn strong_signal_is_nearly_deterministic() {
        let acc = lookup_accuracy(&synthesize_dataset(&spec(50.0)).unwrap());
        assert!(acc > 0.97, "accuracy {acc}");
    }

    #[test]
    fn zero_signal_is_chance() {
        let acc = lookup_accuracy(&synthesize_dataset(&spec(0.0)).unwrap());
        // 3 binomial standard deviations around 1/4 on 5000 test rows.
        let sigma = (0.25f64 * 0.75 / 5000.0).sqrt();
        assert!((acc - 0.25).abs() < 3.0 * sigma + 0.01, "accuracy {acc}");
    }

    #[test]
    fn fixed_seed_is_identical() {
        let a = synthesize_dataset(&spec(1.0)).unwrap();
        let b = synthesize_dataset(&spec(1.0)).unwrap();
        assert_eq!(a, b);
        let c = synthesize_dataset(&SyntheticSpec { seed: 10, ..spec(1.0) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn skewed_values_follow_zipf() {
        let d = synthesize_dataset(&SyntheticSpec { value_skew: 1.0, ..spec(1.0) }).unwrap();
        let cells = d.categorical(0).unwrap();
        let count = |v: u32| cells.iter().filter(|&&c| c == v).count() as f64;
        // Value 0 is twice as frequent as value 1 and ten times value 9.
        assert!((count(0) / count(1) - 2.0).abs() < 0.25);
        assert!((count(0) / count(9) - 10.0).abs() < 2.0);
    }

    #[test]
    fn invalid_sizes() {
        let s = SyntheticSpec {
            cardinality: 3,
            ..spec(1.0)
        };
        assert!(synthesize_dataset(&s).is_err());
        assert!(synthesize_dataset(&SyntheticSpec { n_rows: 0, ..spec(1.0) }).is_err());
        assert!(synthesize_dataset(&SyntheticSpec { value_skew: -1.0, ..spec(1.0) }).is_err());
        assert!(synthesize_dataset(&SyntheticSpec { n_classes: 1, ..spec(1.0) }).is_err());
    }
}

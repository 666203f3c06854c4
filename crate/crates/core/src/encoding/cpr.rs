use serde::{Deserialize, Serialize};

use super::counts::CategoryCounts;
use super::EncodingError;
use crate::data::TabularDataset;

pub const CPR_FORMAT_VERSION: u32 = 1;

/// Conditional-probability table: per categorical value, the smoothed class
/// distribution `(N_{v,c} + α) / (N_v + C·α)`, falling back to `1/C` when
/// the denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CprTable {
    counts: CategoryCounts,
    laplace_alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct CprFile {
    version: u32,
    #[serde(flatten)]
    table: CprTable,
}

fn check_alpha(alpha: f64) -> Result<(), EncodingError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(EncodingError::InvalidParameter(format!(
            "laplace alpha must be finite and non-negative, got {alpha}"
        )))
    }
}

/// Counts `(value, class)` pairs over `rows`; `labels[i]` belongs to `rows[i]`.
pub fn fit_cpr(
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
    alpha: f64,
) -> Result<CprTable, EncodingError> {
    check_alpha(alpha)?;
    let counts = CategoryCounts::empty(ds, ds.num_classes()).add(ds, rows, labels)?;
    Ok(CprTable {
        counts,
        laplace_alpha: alpha,
    })
}

/// Returns `table` with the co-occurrences of `rows` added. The input table
/// is left untouched, and updating equals fitting on the union of rows.
pub fn update_counts(
    table: &CprTable,
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
) -> Result<CprTable, EncodingError> {
    Ok(CprTable {
        counts: table.counts.add(ds, rows, labels)?,
        laplace_alpha: table.laplace_alpha,
    })
}

impl CprTable {
    pub fn counts(&self) -> &CategoryCounts {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.num_classes()
    }

    pub fn laplace_alpha(&self) -> f64 {
        self.laplace_alpha
    }

    /// Writes the encoding of `value` in column `m` into `out` (length C).
    pub fn write_probabilities(&self, m: usize, value: usize, out: &mut [f64]) {
        let col = self.counts.column(m).expect("categorical column");
        write_smoothed(col.counts(value), col.total(value), self.laplace_alpha, out);
    }

    pub fn probabilities(&self, m: usize, value: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes()];
        self.write_probabilities(m, value, &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&CprFile {
            version: CPR_FORMAT_VERSION,
            table: self.clone(),
        })
        .expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EncodingError> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| EncodingError::Serialization(e.to_string()))?;
        let version = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0);
        if version != CPR_FORMAT_VERSION as u64 {
            return Err(EncodingError::Serialization(format!(
                "unsupported table version {version}"
            )));
        }
        let f: CprFile =
            serde_json::from_value(v).map_err(|e| EncodingError::Serialization(e.to_string()))?;
        check_alpha(f.table.laplace_alpha)?;
        Ok(f.table)
    }
}

pub(crate) fn write_smoothed(counts: &[u64], total: u64, alpha: f64, out: &mut [f64]) {
    let c = counts.len();
    let denom = total as f64 + c as f64 * alpha;
    if denom > 0.0 {
        for (o, &n) in out.iter_mut().zip(counts) {
            *o = (n as f64 + alpha) / denom;
        }
    } else {
        out.iter_mut().for_each(|o| *o = 1.0 / c as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, ColumnSchema};

    fn abc() -> TabularDataset {
        TabularDataset::new(
            vec![
                ColumnSchema::categorical("c", vec!["a".into(), "b".into(), "z".into()]),
                ColumnSchema::numerical("x"),
            ],
            vec![
                ColumnData::Categorical(vec![0, 0, 1, 0]),
                ColumnData::Numerical(vec![0.0; 4]),
            ],
            Some(vec![0, 1, 1, 0]),
            2,
        )
        .unwrap()
    }

    #[test]
    fn literal_formula_example() {
        let t = fit_cpr(&abc(), &[0, 1, 2], &[0, 1, 1], 0.0).unwrap();
        assert_eq!(t.probabilities(0, 0), vec![0.5, 0.5]);
        assert_eq!(t.probabilities(0, 1), vec![0.0, 1.0]);
        // Unseen value with alpha = 0 falls back to uniform.
        assert_eq!(t.probabilities(0, 2), vec![0.5, 0.5]);
    }

    #[test]
    fn unseen_value_with_laplace() {
        let t = fit_cpr(&abc(), &[0, 1, 2], &[0, 1, 1], 1.0).unwrap();
        assert_eq!(t.probabilities(0, 2), vec![0.5, 0.5]);
        assert_eq!(t.counts().column(0).unwrap().total(2), 0);
    }

    #[test]
    fn update_adds_one_row() {
        let ds = abc();
        let t = fit_cpr(&ds, &[0, 1], &[0, 1], 0.0).unwrap();
        let u = update_counts(&t, &ds, &[3], &[0]).unwrap();
        assert_eq!(u.counts().column(0).unwrap().counts(0), &[2, 1]);
        let p = u.probabilities(0, 0);
        assert_eq!(p, vec![2.0 / 3.0, 1.0 / 3.0]);
        // Input table untouched, empty update is the identity.
        assert_eq!(t.counts().column(0).unwrap().counts(0), &[1, 1]);
        assert_eq!(update_counts(&t, &ds, &[], &[]).unwrap(), t);
    }

    #[test]
    fn label_out_of_range() {
        let err = fit_cpr(&abc(), &[0], &[2], 1.0).unwrap_err();
        assert!(matches!(err, EncodingError::LabelOutOfRange { label: 2, classes: 2 }));
        assert!(fit_cpr(&abc(), &[0], &[0], -1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = fit_cpr(&abc(), &[0, 1, 2, 3], &[0, 1, 1, 0], 0.5).unwrap();
        let text = t.to_json();
        assert_eq!(CprTable::from_json(&text).unwrap(), t);
        let bumped = text.replace("\"version\":1", "\"version\":7");
        assert!(CprTable::from_json(&bumped).is_err());
    }
}

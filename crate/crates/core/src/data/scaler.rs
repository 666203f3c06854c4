use serde::{Deserialize, Serialize};

use super::{ColumnData, DataError, TabularDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub column: usize,
    pub mean: f64,
    /// Population standard deviation; recorded as 1 for constant columns.
    pub stddev: f64,
}

/// Standard-scaler state for every numerical/date column of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub n_columns: usize,
    pub columns: Vec<ColumnScale>,
}

/// Fits mean and population standard deviation over `rows` only.
pub fn fit_scaler(ds: &TabularDataset, rows: &[usize]) -> Result<ScalerState, DataError> {
    if rows.is_empty() {
        return Err(DataError::EmptyRows);
    }
    let n = rows.len() as f64;
    let columns = ds
        .numeric_columns()
        .into_iter()
        .map(|m| {
            let v = ds.numerical(m).expect("numeric column");
            let mean = rows.iter().map(|&r| v[r]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (v[r] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            ColumnScale {
                column: m,
                mean,
                stddev: if sd > 0.0 { sd } else { 1.0 },
            }
        })
        .collect();
    Ok(ScalerState {
        n_columns: ds.n_cols(),
        columns,
    })
}

fn check(ds: &TabularDataset, scaler: &ScalerState) -> Result<(), DataError> {
    if ds.n_cols() != scaler.n_columns {
        return Err(DataError::SchemaMismatch(format!(
            "scaler fitted on {} columns, dataset has {}",
            scaler.n_columns,
            ds.n_cols()
        )));
    }
    let expected: Vec<usize> = scaler.columns.iter().map(|c| c.column).collect();
    if expected != ds.numeric_columns() {
        return Err(DataError::SchemaMismatch(
            "numerical column positions differ".into(),
        ));
    }
    Ok(())
}

fn transform(
    ds: &TabularDataset,
    scaler: &ScalerState,
    f: impl Fn(f64, &ColumnScale) -> f64,
) -> Result<TabularDataset, DataError> {
    check(ds, scaler)?;
    let mut cols = ds.columns().to_vec();
    for s in &scaler.columns {
        if let ColumnData::Numerical(v) = &mut cols[s.column] {
            for x in v.iter_mut() {
                *x = f(*x, s);
            }
        }
    }
    Ok(ds.with_columns(cols))
}

/// Replaces numerical cells by `(x − mean) / stddev`.
pub fn apply_scaler(ds: &TabularDataset, scaler: &ScalerState) -> Result<TabularDataset, DataError> {
    transform(ds, scaler, |x, s| (x - s.mean) / s.stddev)
}

pub fn invert_scaler(ds: &TabularDataset, scaler: &ScalerState) -> Result<TabularDataset, DataError> {
    transform(ds, scaler, |x, s| x * s.stddev + s.mean)
}

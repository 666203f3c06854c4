//! Tabular dataset model, CSV ingestion, scaling and labeled/unlabeled/test
//! splitting.

pub mod cache;
mod csv_io;
mod scaler;
mod split;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_csv, write_csv, CsvOptions, MISSING_CATEGORY};
pub use scaler::{apply_scaler, fit_scaler, invert_scaler, ColumnScale, ScalerState};
pub use split::{make_split, DataSplit, SplitSpec};
pub use synth::{synthesize_dataset, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: label {value:?} is not a valid class")]
    Label { line: usize, value: String },
    #[error("line {line}: cannot parse {value:?} in column {column} as {kind}")]
    Cell {
        line: usize,
        column: String,
        value: String,
        kind: &'static str,
    },
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("empty row list")]
    EmptyRows,
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("split produces an empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("scaler does not match dataset schema: {0}")]
    SchemaMismatch(String),
    #[error("dataset cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numerical,
    /// Stored as days since 1970-01-01 once loaded.
    Date,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Distinct raw values in index order; empty for non-categorical columns.
    #[serde(default)]
    pub domain: Vec<String>,
}

impl ColumnSchema {
    pub fn categorical(name: impl Into<String>, domain: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            domain,
        }
    }

    pub fn numerical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numerical,
            domain: Vec::new(),
        }
    }

    pub fn date(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Date,
            domain: Vec::new(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    /// `K_m` for categorical columns.
    pub fn cardinality(&self) -> Option<usize> {
        self.is_categorical().then_some(self.domain.len())
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Categorical(Vec<u32>),
    Numerical(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Numerical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `N × M` table of typed cells with optional class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    schema: Vec<ColumnSchema>,
    columns: Vec<ColumnData>,
    labels: Option<Vec<u32>>,
    num_classes: usize,
}

impl TabularDataset {
    pub fn new(
        schema: Vec<ColumnSchema>,
        columns: Vec<ColumnData>,
        labels: Option<Vec<u32>>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if schema.len() != columns.len() {
            return Err(DataError::Invalid(format!(
                "{} schema entries for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n = columns
            .first()
            .map(ColumnData::len)
            .or(labels.as_ref().map(Vec::len))
            .unwrap_or(0);
        for (s, c) in schema.iter().zip(&columns) {
            if c.len() != n {
                return Err(DataError::Invalid(format!(
                    "column {} has {} rows, expected {n}",
                    s.name,
                    c.len()
                )));
            }
            match (s.kind, c) {
                (ColumnKind::Categorical, ColumnData::Categorical(cells)) => {
                    let k = s.domain.len();
                    let mut seen = std::collections::HashSet::new();
                    if !s.domain.iter().all(|v| seen.insert(v)) {
                        return Err(DataError::Invalid(format!(
                            "column {} has duplicate domain values",
                            s.name
                        )));
                    }
                    if let Some(bad) = cells.iter().find(|&&v| v as usize >= k) {
                        return Err(DataError::Invalid(format!(
                            "column {}: index {bad} outside domain of size {k}",
                            s.name
                        )));
                    }
                }
                (ColumnKind::Numerical | ColumnKind::Date, ColumnData::Numerical(_)) => {
                    if !s.domain.is_empty() {
                        return Err(DataError::Invalid(format!(
                            "non-categorical column {} has a domain",
                            s.name
                        )));
                    }
                }
                _ => {
                    return Err(DataError::Invalid(format!(
                        "column {} data does not match kind {:?}",
                        s.name, s.kind
                    )))
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(DataError::Invalid(format!(
                    "{} labels for {n} rows",
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|&&y| y as usize >= num_classes) {
                return Err(DataError::Invalid(format!(
                    "label {bad} outside {num_classes} classes"
                )));
            }
        }
        Ok(Self {
            schema,
            columns,
            labels,
            num_classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.columns
            .first()
            .map(ColumnData::len)
            .or(self.labels.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, m: usize) -> &ColumnData {
        &self.columns[m]
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Indices of categorical columns, in schema order.
    pub fn categorical_columns(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&m| self.schema[m].is_categorical())
            .collect()
    }

    /// Indices of numerical and date columns, in schema order.
    pub fn numeric_columns(&self) -> Vec<usize> {
        (0..self.schema.len())
            .filter(|&m| !self.schema[m].is_categorical())
            .collect()
    }

    pub fn categorical(&self, m: usize) -> Option<&[u32]> {
        match &self.columns[m] {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numerical(_) => None,
        }
    }

    pub fn numerical(&self, m: usize) -> Option<&[f64]> {
        match &self.columns[m] {
            ColumnData::Numerical(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    /// Labels of `rows`; errors if the dataset carries none.
    pub fn labels_of(&self, rows: &[usize]) -> Result<Vec<u32>, DataError> {
        let l = self
            .labels
            .as_ref()
            .ok_or_else(|| DataError::Invalid("dataset has no labels".into()))?;
        Ok(rows.iter().map(|&r| l[r]).collect())
    }

    pub(crate) fn with_columns(&self, columns: Vec<ColumnData>) -> Self {
        Self {
            schema: self.schema.clone(),
            columns,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_domain_index() {
        let schema = vec![ColumnSchema::categorical("c", vec!["a".into(), "b".into()])];
        let ok = TabularDataset::new(
            schema.clone(),
            vec![ColumnData::Categorical(vec![0, 1])],
            Some(vec![0, 1]),
            2,
        );
        assert!(ok.is_ok());
        let bad = TabularDataset::new(
            schema.clone(),
            vec![ColumnData::Categorical(vec![0, 2])],
            None,
            2,
        );
        assert!(bad.is_err());
        let bad_label =
            TabularDataset::new(schema, vec![ColumnData::Categorical(vec![0, 1])], Some(vec![0, 2]), 2);
        assert!(bad_label.is_err());
    }

    #[test]
    fn cardinality_only_for_categorical() {
        let c = ColumnSchema::categorical("c", vec!["x".into(), "y".into(), "z".into()]);
        assert_eq!(c.cardinality(), Some(3));
        assert_eq!(ColumnSchema::numerical("n").cardinality(), None);
        assert_eq!(ColumnSchema::date("d").cardinality(), None);
    }
}

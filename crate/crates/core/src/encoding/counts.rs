use serde::{Deserialize, Serialize};

use super::EncodingError;
use crate::data::TabularDataset;

/// Integer `(value, class)` co-occurrence counts for one categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ColumnCountsRepr", into = "ColumnCountsRepr")]
pub struct ColumnCounts {
    column: usize,
    num_classes: usize,
    /// `K × C`, row-major by value.
    counts: Vec<u64>,
    totals: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct ColumnCountsRepr {
    column: usize,
    counts: Vec<Vec<u64>>,
}

impl From<ColumnCounts> for ColumnCountsRepr {
    fn from(c: ColumnCounts) -> Self {
        let counts = if c.num_classes == 0 {
            vec![Vec::new(); c.totals.len()]
        } else {
            c.counts.chunks(c.num_classes).map(<[u64]>::to_vec).collect()
        };
        Self {
            column: c.column,
            counts,
        }
    }
}

impl TryFrom<ColumnCountsRepr> for ColumnCounts {
    type Error = String;

    fn try_from(r: ColumnCountsRepr) -> Result<Self, String> {
        let num_classes = r.counts.first().map_or(0, Vec::len);
        if r.counts.iter().any(|v| v.len() != num_classes) {
            return Err(format!("column {}: ragged count rows", r.column));
        }
        let totals = r.counts.iter().map(|v| v.iter().sum()).collect();
        Ok(Self {
            column: r.column,
            num_classes,
            counts: r.counts.into_iter().flatten().collect(),
            totals,
        })
    }
}

impl ColumnCounts {
    fn zeros(column: usize, cardinality: usize, num_classes: usize) -> Self {
        Self {
            column,
            num_classes,
            counts: vec![0; cardinality * num_classes],
            totals: vec![0; cardinality],
        }
    }

    /// Schema index of the column.
    pub fn column(&self) -> usize {
        self.column
    }

    pub fn cardinality(&self) -> usize {
        self.totals.len()
    }

    pub fn counts(&self, value: usize) -> &[u64] {
        &self.counts[value * self.num_classes..(value + 1) * self.num_classes]
    }

    pub fn total(&self, value: usize) -> u64 {
        self.totals[value]
    }
}

/// Per-column counts for every categorical column of a schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    num_classes: usize,
    n_schema_columns: usize,
    columns: Vec<ColumnCounts>,
    /// Labels seen per class across all counted rows.
    class_totals: Vec<u64>,
}

impl CategoryCounts {
    pub fn empty(ds: &TabularDataset, num_classes: usize) -> Self {
        let columns = ds
            .categorical_columns()
            .into_iter()
            .map(|m| ColumnCounts::zeros(m, ds.schema()[m].domain.len(), num_classes))
            .collect();
        Self {
            num_classes,
            n_schema_columns: ds.n_cols(),
            columns,
            class_totals: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn columns(&self) -> &[ColumnCounts] {
        &self.columns
    }

    pub fn column(&self, m: usize) -> Option<&ColumnCounts> {
        self.columns.iter().find(|c| c.column == m)
    }

    pub fn class_totals(&self) -> &[u64] {
        &self.class_totals
    }

    pub fn n_counted(&self) -> u64 {
        self.class_totals.iter().sum()
    }

    /// Errors unless `ds` has the same categorical layout as the counted data.
    pub fn check_schema(&self, ds: &TabularDataset) -> Result<(), EncodingError> {
        if ds.n_cols() != self.n_schema_columns {
            return Err(EncodingError::SchemaMismatch(format!(
                "table built for {} columns, dataset has {}",
                self.n_schema_columns,
                ds.n_cols()
            )));
        }
        let cats = ds.categorical_columns();
        if cats.len() != self.columns.len() {
            return Err(EncodingError::SchemaMismatch(
                "categorical column count differs".into(),
            ));
        }
        for (m, c) in cats.iter().zip(&self.columns) {
            if *m != c.column {
                return Err(EncodingError::SchemaMismatch(format!(
                    "column {m} is categorical in the dataset but not in the table"
                )));
            }
            let k = ds.schema()[*m].domain.len();
            if c.cardinality() != k {
                return Err(EncodingError::SchemaMismatch(format!(
                    "column {m} has cardinality {k}, table expects {}",
                    c.cardinality()
                )));
            }
            if c.num_classes != self.num_classes && c.cardinality() > 0 {
                return Err(EncodingError::SchemaMismatch(format!(
                    "column {m} has {} classes, expected {}",
                    c.num_classes, self.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Adds one count per `(row, label)` pair. Pure: returns a new value.
    pub fn add(
        &self,
        ds: &TabularDataset,
        rows: &[usize],
        labels: &[u32],
    ) -> Result<CategoryCounts, EncodingError> {
        self.check_schema(ds)?;
        if rows.len() != labels.len() {
            return Err(EncodingError::LengthMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        let c = self.num_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
            return Err(EncodingError::LabelOutOfRange {
                label: bad as usize,
                classes: c,
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= ds.n_rows()) {
            return Err(EncodingError::RowOutOfRange {
                row: bad,
                n_rows: ds.n_rows(),
            });
        }
        let mut next = self.clone();
        for col in &mut next.columns {
            let cells = ds.categorical(col.column).expect("checked categorical");
            let k = col.cardinality();
            for (&r, &y) in rows.iter().zip(labels) {
                let v = cells[r] as usize;
                if v >= k {
                    return Err(EncodingError::OutOfDomain {
                        column: col.column,
                        index: v,
                        cardinality: k,
                    });
                }
                col.counts[v * c + y as usize] += 1;
                col.totals[v] += 1;
            }
        }
        for &y in labels {
            next.class_totals[y as usize] += 1;
        }
        Ok(next)
    }
}

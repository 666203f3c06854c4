//! Categorical encodings: conditional-probability (CPR) tables, target
//! encoding, one-hot and label encoding.

mod counts;
mod cpr;
mod target;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnData, TabularDataset};
use crate::nn::{Matrix, RowSource};

pub use counts::{CategoryCounts, ColumnCounts};
pub use cpr::{fit_cpr, update_counts, CprTable, CPR_FORMAT_VERSION};
pub use target::{fit_target_encoding, update_target_encoding, TargetEncodingTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodingError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row} out of range for {n_rows} rows")]
    RowOutOfRange { row: usize, n_rows: usize },
    #[error("column {column}: category index {index} outside domain of size {cardinality}")]
    OutOfDomain {
        column: usize,
        index: usize,
        cardinality: usize,
    },
    #[error("table does not match dataset schema: {0}")]
    SchemaMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("table serialization: {0}")]
    Serialization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    Cpr,
    TargetEncoding,
    OneHot,
    Label,
}

impl EncodingKind {
    pub fn name(self) -> &'static str {
        match self {
            EncodingKind::Cpr => "cpr",
            EncodingKind::TargetEncoding => "target_encoding",
            EncodingKind::OneHot => "one_hot",
            EncodingKind::Label => "label",
        }
    }
}

/// Output width of one categorical column under `kind`.
pub fn block_width(kind: EncodingKind, num_classes: usize, cardinality: usize) -> usize {
    match kind {
        EncodingKind::Cpr | EncodingKind::TargetEncoding => num_classes,
        EncodingKind::OneHot => cardinality,
        EncodingKind::Label => 1,
    }
}

/// A fitted (or stateless) categorical encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum CategoricalEncoder {
    Cpr(CprTable),
    Target(TargetEncodingTable),
    OneHot,
    Label,
}

impl CategoricalEncoder {
    pub fn kind(&self) -> EncodingKind {
        match self {
            CategoricalEncoder::Cpr(_) => EncodingKind::Cpr,
            CategoricalEncoder::Target(_) => EncodingKind::TargetEncoding,
            CategoricalEncoder::OneHot => EncodingKind::OneHot,
            CategoricalEncoder::Label => EncodingKind::Label,
        }
    }

    fn width(&self, ds: &TabularDataset, m: usize) -> usize {
        match self {
            CategoricalEncoder::Target(t) => t.width(),
            _ => block_width(
                self.kind(),
                ds.num_classes(),
                ds.schema()[m].domain.len(),
            ),
        }
    }
}

/// Output column range of one source feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub column: usize,
    pub start: usize,
    pub width: usize,
    pub categorical: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Matrix),
    /// Per row: `(column, value)` pairs of the non-zero cells, column ascending.
    Sparse {
        indptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    },
}

/// Encoded rows plus the map from source features to output columns.
///
/// Wide one-hot encodings are held sparsely; `gather` always yields the same
/// dense rows either way.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    n_rows: usize,
    width: usize,
    blocks: Vec<Block>,
    storage: Storage,
}

/// One-hot encodings at least this wide are stored sparsely.
pub const SPARSE_WIDTH: usize = 256;

impl EncodedMatrix {
    pub fn from_dense(matrix: Matrix, blocks: Vec<Block>) -> Self {
        Self {
            n_rows: matrix.rows(),
            width: matrix.cols(),
            blocks,
            storage: Storage::Dense(matrix),
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn as_dense(&self) -> Option<&Matrix> {
        match &self.storage {
            Storage::Dense(m) => Some(m),
            Storage::Sparse { .. } => None,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse { .. } => {
                let all: Vec<usize> = (0..self.n_rows).collect();
                self.gather(&all)
            }
        }
    }
}

impl RowSource for EncodedMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn width(&self) -> usize {
        self.width
    }

    fn gather(&self, rows: &[usize]) -> Matrix {
        match &self.storage {
            Storage::Dense(m) => m.select_rows(rows),
            Storage::Sparse {
                indptr,
                indices,
                values,
            } => {
                let mut out = Matrix::zeros(rows.len(), self.width);
                for (i, &r) in rows.iter().enumerate() {
                    let row = out.row_mut(i);
                    for k in indptr[r]..indptr[r + 1] {
                        row[indices[k] as usize] = values[k];
                    }
                }
                out
            }
        }
    }
}

/// Encodes `rows` of `ds`: numerical columns pass through, each categorical
/// cell is replaced by its block. Output row `i` corresponds to `rows[i]`.
pub fn encode(
    ds: &TabularDataset,
    rows: &[usize],
    encoder: &CategoricalEncoder,
) -> Result<EncodedMatrix, EncodingError> {
    match encoder {
        CategoricalEncoder::Cpr(t) => {
            t.counts().check_schema(ds)?;
            check_classes(t.num_classes(), ds)?;
        }
        CategoricalEncoder::Target(t) => {
            t.counts().check_schema(ds)?;
            check_classes(t.counts().num_classes(), ds)?;
        }
        _ => {}
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= ds.n_rows()) {
        return Err(EncodingError::RowOutOfRange {
            row: bad,
            n_rows: ds.n_rows(),
        });
    }

    let mut blocks = Vec::with_capacity(ds.n_cols());
    let mut start = 0;
    for (m, s) in ds.schema().iter().enumerate() {
        let width = if s.is_categorical() {
            encoder.width(ds, m)
        } else {
            1
        };
        blocks.push(Block {
            column: m,
            start,
            width,
            categorical: s.is_categorical(),
        });
        start += width;
    }
    let width = start;

    // Precomputed per-value blocks for table encoders.
    let lookup: Vec<Option<Vec<f64>>> = blocks
        .iter()
        .map(|b| {
            if !b.categorical {
                return None;
            }
            let k = ds.schema()[b.column].domain.len();
            let mut table = vec![0.0; k * b.width];
            for v in 0..k {
                let out = &mut table[v * b.width..(v + 1) * b.width];
                match encoder {
                    CategoricalEncoder::Cpr(t) => t.write_probabilities(b.column, v, out),
                    CategoricalEncoder::Target(t) => t.write_encoding(b.column, v, out),
                    CategoricalEncoder::OneHot => out[v] = 1.0,
                    CategoricalEncoder::Label => out[0] = v as f64,
                }
            }
            Some(table)
        })
        .collect();

    let sparse = encoder.kind() == EncodingKind::OneHot && width >= SPARSE_WIDTH;
    if sparse {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            for b in &blocks {
                match ds.column(b.column) {
                    ColumnData::Categorical(cells) => {
                        let v = cells[r] as usize;
                        indices.push((b.start + v) as u32);
                        values.push(1.0);
                    }
                    ColumnData::Numerical(x) => {
                        if x[r] != 0.0 {
                            indices.push(b.start as u32);
                            values.push(x[r]);
                        }
                    }
                }
            }
            indptr.push(indices.len());
        }
        return Ok(EncodedMatrix {
            n_rows: rows.len(),
            width,
            blocks,
            storage: Storage::Sparse {
                indptr,
                indices,
                values,
            },
        });
    }

    let mut out = Matrix::zeros(rows.len(), width);
    for b in &blocks {
        match ds.column(b.column) {
            ColumnData::Categorical(cells) => {
                let table = lookup[b.column].as_ref().expect("categorical lookup");
                for (i, &r) in rows.iter().enumerate() {
                    let v = cells[r] as usize;
                    out.row_mut(i)[b.start..b.start + b.width]
                        .copy_from_slice(&table[v * b.width..(v + 1) * b.width]);
                }
            }
            ColumnData::Numerical(x) => {
                for (i, &r) in rows.iter().enumerate() {
                    out.row_mut(i)[b.start] = x[r];
                }
            }
        }
    }
    Ok(EncodedMatrix {
        n_rows: rows.len(),
        width,
        blocks,
        storage: Storage::Dense(out),
    })
}

fn check_classes(table: usize, ds: &TabularDataset) -> Result<(), EncodingError> {
    if table != ds.num_classes() {
        return Err(EncodingError::SchemaMismatch(format!(
            "table has {table} classes, dataset {}",
            ds.num_classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSchema;

    fn ds(k: usize) -> TabularDataset {
        let domain = (0..k).map(|v| format!("v{v}")).collect();
        TabularDataset::new(
            vec![
                ColumnSchema::numerical("x"),
                ColumnSchema::categorical("c", domain),
            ],
            vec![
                ColumnData::Numerical(vec![1.5, -2.0, 0.0]),
                ColumnData::Categorical(vec![2, 7.min(k as u32 - 1), 0]),
            ],
            Some(vec![0, 1, 2]),
            4,
        )
        .unwrap()
    }

    #[test]
    fn block_widths() {
        assert_eq!(block_width(EncodingKind::Cpr, 4, 163_365), 4);
        assert_eq!(block_width(EncodingKind::TargetEncoding, 4, 163_365), 4);
        assert_eq!(block_width(EncodingKind::OneHot, 4, 163_365), 163_365);
        assert_eq!(block_width(EncodingKind::Label, 4, 163_365), 1);
    }

    #[test]
    fn one_hot_and_label_cells() {
        let d = ds(4);
        let e = encode(&d, &[0], &CategoricalEncoder::OneHot).unwrap();
        assert_eq!(e.to_dense().row(0), &[1.5, 0.0, 0.0, 1.0, 0.0]);
        let d = ds(10);
        let e = encode(&d, &[1], &CategoricalEncoder::Label).unwrap();
        assert_eq!(e.to_dense().row(0), &[-2.0, 7.0]);
    }

    #[test]
    fn cpr_zero_total_is_uniform() {
        let d = ds(4);
        let t = fit_cpr(&d, &[], &[], 0.0).unwrap();
        let e = encode(&d, &[0, 1, 2], &CategoricalEncoder::Cpr(t)).unwrap();
        assert_eq!(e.width(), 5);
        assert_eq!(&e.to_dense().row(2)[1..], &[0.25; 4]);
    }

    #[test]
    fn sparse_storage_matches_dense() {
        let d = ds(600);
        let e = encode(&d, &[2, 0, 1], &CategoricalEncoder::OneHot).unwrap();
        assert!(e.is_sparse());
        let dense = e.to_dense();
        assert_eq!(dense.row(1)[0], 1.5);
        assert_eq!(dense.row(1)[1 + 2], 1.0);
        assert_eq!(dense.row(0).iter().sum::<f64>(), 1.0);
        assert_eq!(e.gather(&[1]).row(0), dense.row(1));
    }

    #[test]
    fn cpr_width_ignores_cardinality() {
        let a = ds(5);
        let b = ds(500);
        let ta = fit_cpr(&a, &[0, 1, 2], &[0, 1, 2], 1.0).unwrap();
        let tb = fit_cpr(&b, &[0, 1, 2], &[0, 1, 2], 1.0).unwrap();
        let wa = encode(&a, &[0], &CategoricalEncoder::Cpr(ta)).unwrap().width();
        let wb = encode(&b, &[0], &CategoricalEncoder::Cpr(tb)).unwrap().width();
        assert_eq!(wa, wb);
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let t = fit_cpr(&ds(5), &[0], &[0], 1.0).unwrap();
        let err = encode(&ds(9), &[0], &CategoricalEncoder::Cpr(t)).unwrap_err();
        assert!(matches!(err, EncodingError::OutOfDomain { .. } | EncodingError::SchemaMismatch(_)));
    }
}

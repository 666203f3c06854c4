use std::collections::HashMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnKind, ColumnSchema, DataError, TabularDataset};

/// Reserved category for empty categorical cells.
pub const MISSING_CATEGORY: &str = "__missing__";

const DATE_FORMATS: &[&str] = &["%Y-%m-%d", "%m/%d/%Y", "%Y/%m/%d"];
const DATETIME_FORMATS: &[&str] = &["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%m/%d/%Y %H:%M:%S"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub label_column: String,
    /// Per-column kind overrides. Columns not listed are numerical when every
    /// non-empty cell parses as a number, categorical otherwise.
    pub kinds: HashMap<String, ColumnKind>,
    /// Class names in index order. Without them labels must be integers.
    pub class_names: Option<Vec<String>>,
    /// Known schema: fixes column kinds and seeds categorical domains so that
    /// index assignments match an earlier load. New values are appended.
    pub schema_hint: Option<Vec<ColumnSchema>>,
}

impl CsvOptions {
    pub fn with_label(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            ..Self::default()
        }
    }
}

fn days_since_epoch(s: &str) -> Option<f64> {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1)?.and_hms_opt(0, 0, 0)?;
    for f in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, f) {
            return Some((dt - epoch).num_seconds() as f64 / 86_400.0);
        }
    }
    for f in DATE_FORMATS {
        if let Ok(d) = NaiveDate::parse_from_str(s, f) {
            return Some((d.and_hms_opt(0, 0, 0)? - epoch).num_days() as f64);
        }
    }
    None
}

/// Reads an RFC-4180 CSV with a header row into a [`TabularDataset`].
///
/// Categorical domains are built in first-occurrence order. Empty cells map to
/// [`MISSING_CATEGORY`] (categorical) or the column mean (numerical/date).
/// Line numbers in errors count the header as line 1.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<TabularDataset, DataError> {
    let path = path.as_ref();
    let io = |e: &dyn std::fmt::Display| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io(&e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| io(&e))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| *h == opts.label_column)
        .ok_or_else(|| DataError::MissingLabelColumn(opts.label_column.clone()))?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut lines = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Csv {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(DataError::RowWidth {
                line,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for (col, cell) in raw.iter_mut().zip(rec.iter()) {
            col.push(cell.trim().to_string());
        }
        lines.push(line);
    }

    // Labels.
    let label_cells = &raw[label_idx];
    let mut labels = Vec::with_capacity(label_cells.len());
    for (cell, &line) in label_cells.iter().zip(&lines) {
        let y = match &opts.class_names {
            Some(names) => names.iter().position(|n| n == cell),
            None => cell.parse::<u32>().ok().map(|v| v as usize),
        };
        match y {
            Some(y) => labels.push(y as u32),
            None => {
                return Err(DataError::Label {
                    line,
                    value: cell.clone(),
                })
            }
        }
    }
    let num_classes = match &opts.class_names {
        Some(names) => names.len(),
        None => labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0),
    };

    let hint: HashMap<&str, &ColumnSchema> = opts
        .schema_hint
        .iter()
        .flatten()
        .map(|s| (s.name.as_str(), s))
        .collect();

    let mut schema = Vec::new();
    let mut columns = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let cells = &raw[j];
        let kind = hint
            .get(name.as_str())
            .map(|s| s.kind)
            .or_else(|| opts.kinds.get(name).copied())
            .unwrap_or_else(|| infer_kind(cells));
        match kind {
            ColumnKind::Categorical => {
                let mut domain: Vec<String> = hint
                    .get(name.as_str())
                    .map(|s| s.domain.clone())
                    .unwrap_or_default();
                let mut index: HashMap<String, u32> = domain
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.clone(), i as u32))
                    .collect();
                let mut out = Vec::with_capacity(cells.len());
                for cell in cells {
                    let key = if cell.is_empty() { MISSING_CATEGORY } else { cell };
                    let id = match index.get(key) {
                        Some(&id) => id,
                        None => {
                            let id = domain.len() as u32;
                            domain.push(key.to_string());
                            index.insert(key.to_string(), id);
                            id
                        }
                    };
                    out.push(id);
                }
                schema.push(ColumnSchema::categorical(name.clone(), domain));
                columns.push(ColumnData::Categorical(out));
            }
            ColumnKind::Numerical | ColumnKind::Date => {
                let (parse, what): (fn(&str) -> Option<f64>, &'static str) =
                    if kind == ColumnKind::Date {
                        (days_since_epoch, "date")
                    } else {
                        (|s| s.parse::<f64>().ok(), "number")
                    };
                let mut vals: Vec<Option<f64>> = Vec::with_capacity(cells.len());
                for (cell, &line) in cells.iter().zip(&lines) {
                    if cell.is_empty() {
                        vals.push(None);
                        continue;
                    }
                    match parse(cell) {
                        Some(v) => vals.push(Some(v)),
                        None => {
                            return Err(DataError::Cell {
                                line,
                                column: name.clone(),
                                value: cell.clone(),
                                kind: what,
                            })
                        }
                    }
                }
                let present: Vec<f64> = vals.iter().flatten().copied().collect();
                let mean = if present.is_empty() {
                    0.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                };
                schema.push(ColumnSchema {
                    name: name.clone(),
                    kind,
                    domain: Vec::new(),
                });
                columns.push(ColumnData::Numerical(
                    vals.into_iter().map(|v| v.unwrap_or(mean)).collect(),
                ));
            }
        }
    }
    TabularDataset::new(schema, columns, Some(labels), num_classes)
}

fn infer_kind(cells: &[String]) -> ColumnKind {
    let mut any = false;
    for c in cells.iter().filter(|c| !c.is_empty()) {
        any = true;
        if c.parse::<f64>().is_err() {
            return ColumnKind::Categorical;
        }
    }
    if any {
        ColumnKind::Numerical
    } else {
        ColumnKind::Categorical
    }
}

/// Writes raw values back out; the label column is appended last as `label`.
/// Date columns are written as days since the epoch.
pub fn write_csv(ds: &TabularDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io = |e: &dyn std::fmt::Display| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(&e))?;
    let mut header: Vec<String> = ds.schema().iter().map(|s| s.name.clone()).collect();
    if ds.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| io(&e))?;
    for r in 0..ds.n_rows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (s, c) in ds.schema().iter().zip(ds.columns()) {
            rec.push(match c {
                ColumnData::Categorical(v) => s.domain[v[r] as usize].clone(),
                ColumnData::Numerical(v) => format!("{}", v[r]),
            });
        }
        if let Some(l) = ds.labels() {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(|e| io(&e))?;
    }
    w.flush().map_err(|e| io(&e))?;
    Ok(())
}

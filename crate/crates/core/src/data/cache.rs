//! Binary dataset cache. Layout (little endian):
//!
//! ```text
//! "PCDS" u32:version u64:n_rows u64:n_cols u64:num_classes
//! per column: str:name u8:kind u64:domain_len str* then cells (u32 or f64)
//! u8:has_labels [u32 * n_rows]
//! ```
//! Strings are `u64 length` followed by UTF-8 bytes.

use std::fs;
use std::path::Path;

use super::{ColumnData, ColumnKind, ColumnSchema, DataError, TabularDataset};

const MAGIC: &[u8; 4] = b"PCDS";
pub const VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(ds: &TabularDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u64(&mut out, ds.n_rows() as u64);
    put_u64(&mut out, ds.n_cols() as u64);
    put_u64(&mut out, ds.num_classes() as u64);
    for (s, col) in ds.schema().iter().zip(ds.columns()) {
        put_str(&mut out, &s.name);
        out.push(match s.kind {
            ColumnKind::Categorical => 0,
            ColumnKind::Numerical => 1,
            ColumnKind::Date => 2,
        });
        put_u64(&mut out, s.domain.len() as u64);
        for v in &s.domain {
            put_str(&mut out, v);
        }
        match col {
            ColumnData::Categorical(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ColumnData::Numerical(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    match ds.labels() {
        Some(l) => {
            out.push(1);
            l.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        None => out.push(0),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DataError::Cache("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize, DataError> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| DataError::Cache(format!("implausible length {n}")))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, DataError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| DataError::Cache(e.to_string()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<TabularDataset, DataError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(DataError::Cache("not a dataset cache".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DataError::Cache(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n_rows = r.len()?;
    let n_cols = r.len()?;
    let num_classes = r.u64()? as usize;
    let mut schema = Vec::with_capacity(n_cols);
    let mut columns = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => ColumnKind::Categorical,
            1 => ColumnKind::Numerical,
            2 => ColumnKind::Date,
            k => return Err(DataError::Cache(format!("unknown column kind {k}"))),
        };
        let k = r.len()?;
        let domain = (0..k).map(|_| r.string()).collect::<Result<Vec<_>, _>>()?;
        let data = if kind == ColumnKind::Categorical {
            ColumnData::Categorical((0..n_rows).map(|_| r.u32()).collect::<Result<_, _>>()?)
        } else {
            ColumnData::Numerical((0..n_rows).map(|_| r.f64()).collect::<Result<_, _>>()?)
        };
        schema.push(ColumnSchema { name, kind, domain });
        columns.push(data);
    }
    let labels = match r.u8()? {
        0 => None,
        1 => Some((0..n_rows).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?),
        b => return Err(DataError::Cache(format!("bad label flag {b}"))),
    };
    if r.pos != buf.len() {
        return Err(DataError::Cache("trailing bytes".into()));
    }
    TabularDataset::new(schema, columns, labels, num_classes)
}

pub fn save(ds: &TabularDataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, to_bytes(ds)).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load(path: &Path) -> Result<TabularDataset, DataError> {
    let buf = fs::read(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    from_bytes(&buf)
}

use super::matrix::Matrix;

/// Anything that can hand out dense row batches of a fixed width.
pub trait RowSource {
    fn n_rows(&self) -> usize;
    fn width(&self) -> usize;
    /// Dense copy of `rows`, in the given order.
    fn gather(&self, rows: &[usize]) -> Matrix;
}

impl RowSource for Matrix {
    fn n_rows(&self) -> usize {
        self.rows()
    }

    fn width(&self) -> usize {
        self.cols()
    }

    fn gather(&self, rows: &[usize]) -> Matrix {
        self.select_rows(rows)
    }
}

/// Rows are evaluated in chunks of this size when predicting a whole source.
pub const PREDICT_CHUNK: usize = 2048;

/// A subset of another source's rows, in the given order.
#[derive(Debug, Clone)]
pub struct RowView<'a, S: RowSource + ?Sized> {
    source: &'a S,
    rows: Vec<usize>,
}

impl<'a, S: RowSource + ?Sized> RowView<'a, S> {
    /// Panics if a row is out of range.
    pub fn new(source: &'a S, rows: Vec<usize>) -> Self {
        if let Some(&r) = rows.iter().find(|&&r| r >= source.n_rows()) {
            panic!("row {r} out of range for {} rows", source.n_rows());
        }
        Self { source, rows }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }
}

impl<S: RowSource + ?Sized> RowSource for RowView<'_, S> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn width(&self) -> usize {
        self.source.width()
    }

    fn gather(&self, rows: &[usize]) -> Matrix {
        let mapped: Vec<usize> = rows.iter().map(|&r| self.rows[r]).collect();
        self.source.gather(&mapped)
    }
}

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::progressive::{mean_std, ExperimentReport};

/// Per-seed final accuracies for one (method, column) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `mean ± std` in percent, two decimals.
    pub text: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
}

impl Cell {
    /// Values are ordered by seed so the statistics do not depend on the
    /// order reports arrive in.
    pub fn from_values(mut pairs: Vec<(u64, f64)>) -> Self {
        pairs.sort_by_key(|&(s, _)| s);
        let (seeds, values): (Vec<u64>, Vec<f64>) = pairs.into_iter().unzip();
        let (mean, std) = mean_std(&values);
        Self {
            text: format_cell(mean, std),
            mean,
            std,
            seeds,
            values,
        }
    }
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Rows are methods, columns are datasets, both in first-appearance order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub methods: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[method][column]`; `None` where no report exists.
    pub cells: Vec<Vec<Option<Cell>>>,
}

impl ResultsTable {
    pub fn from_reports(reports: &[ExperimentReport]) -> Self {
        let mut methods: Vec<String> = Vec::new();
        let mut columns: Vec<String> = Vec::new();
        for r in reports {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
            if !columns.contains(&r.dataset) {
                columns.push(r.dataset.clone());
            }
        }
        let cells = methods
            .iter()
            .map(|m| {
                columns
                    .iter()
                    .map(|c| {
                        let pairs: Vec<(u64, f64)> = reports
                            .iter()
                            .filter(|r| &r.method == m && &r.dataset == c)
                            .map(|r| (r.seed, r.final_test_accuracy))
                            .collect();
                        (!pairs.is_empty()).then(|| Cell::from_values(pairs))
                    })
                    .collect()
            })
            .collect();
        Self { methods, columns, cells }
    }

    pub fn cell(&self, method: &str, column: &str) -> Option<&Cell> {
        let i = self.methods.iter().position(|m| m == method)?;
        let j = self.columns.iter().position(|c| c == column)?;
        self.cells[i][j].as_ref()
    }

    pub fn n_filled(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    /// One line per filled cell: `method,dataset,mean_acc,std_acc,n_seeds,values`
    /// with `values` joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,mean_acc,std_acc,n_seeds,values\n");
        for (m, row) in self.methods.iter().zip(&self.cells) {
            for (c, cell) in self.columns.iter().zip(row) {
                if let Some(cell) = cell {
                    let values: Vec<String> = cell.values.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        csv_field(m),
                        csv_field(c),
                        cell.mean,
                        cell.std,
                        cell.values.len(),
                        values.join(";")
                    );
                }
            }
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method |");
        for c in &self.columns {
            let _ = write!(out, " {c} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.cells) {
            let _ = write!(out, "| {m} |");
            for cell in row {
                let _ = write!(out, " {} |", cell.as_ref().map_or("n/a", |c| c.text.as_str()));
            }
            out.push('\n');
        }
        out
    }

    /// Rebuilds the table from the report files in `dir`, read in file-name
    /// order (the runner prefixes names with the pair index).
    pub fn from_report_dir(dir: &Path) -> Result<Self, CliError> {
        Ok(Self::from_reports(&read_reports(dir)?))
    }
}

pub fn read_reports(dir: &Path) -> Result<Vec<ExperimentReport>, CliError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            ExperimentReport::from_json(&text)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::progressive::RunConfig;

    fn report(method: &str, dataset: &str, seed: u64, acc: f64) -> ExperimentReport {
        ExperimentReport {
            method: method.into(),
            dataset: dataset.into(),
            split: None,
            seed,
            config: RunConfig::default(),
            runs: Vec::new(),
            final_test_accuracy: acc,
            wall_clock_seconds: 0.0,
            library_version: String::new(),
        }
    }

    #[test]
    fn grid_and_formatting() {
        let t = ResultsTable::from_reports(&[
            report("a", "x", 2, 0.70),
            report("a", "x", 1, 0.80),
            report("b", "y", 1, 0.5),
        ]);
        assert_eq!(t.methods, ["a", "b"]);
        assert_eq!(t.columns, ["x", "y"]);
        assert_eq!(t.n_filled(), 2);
        assert!(t.cell("a", "y").is_none());
        let c = t.cell("a", "x").unwrap();
        assert_eq!(c.seeds, [1, 2]);
        assert_eq!(c.text, "75.00 ± 5.00");
        assert!(t.to_markdown().contains("| a | 75.00 ± 5.00 | n/a |"));
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("a,x,0.75"));
    }

    #[test]
    fn order_of_reports_does_not_change_statistics() {
        let vals = [0.1, 0.7, 0.33, 0.91, 0.5];
        let fwd: Vec<_> = vals.iter().enumerate().map(|(i, &v)| report("m", "d", i as u64, v)).collect();
        let mut rev = fwd.clone();
        rev.reverse();
        assert_eq!(ResultsTable::from_reports(&fwd), ResultsTable::from_reports(&rev));
    }
}

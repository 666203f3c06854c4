use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{validate, DatasetConfig, DatasetSource, ExperimentConfig};
use super::table::ResultsTable;
use super::CliError;
use crate::data::{load_csv, make_split, synthesize_dataset, CsvOptions, SplitSpec, TabularDataset};
use crate::progressive::{run_progressive, ExperimentReport};

pub fn load_dataset(d: &DatasetConfig) -> Result<TabularDataset, CliError> {
    match d.source().map_err(|e| CliError::Config(format!("dataset {}: {e}", d.name)))? {
        DatasetSource::Synthetic(spec) => Ok(synthesize_dataset(&spec)?),
        DatasetSource::Csv { path, label_column } => {
            let mut opts = CsvOptions::with_label(label_column);
            opts.kinds = d.kinds.iter().map(|(k, v)| (k.clone(), *v)).collect();
            Ok(load_csv(path, &opts)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub message: String,
}

/// A labeled split that fell back to plain random sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub dataset: String,
    pub seed: u64,
    pub labeled_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub table: ResultsTable,
    /// Completed pairs in (dataset, method, seed) order.
    pub reports: Vec<ExperimentReport>,
    pub failures: Vec<PairFailure>,
    pub split_warnings: Vec<SplitWarning>,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

struct Pair {
    dataset: usize,
    method: usize,
    seed: u64,
}

/// Runs every (dataset, method, seed) pair on `cfg.jobs` worker threads.
///
/// Writes `reports/NNNN_<dataset>_<method>_seed<seed>.json` as pairs finish,
/// then `results.csv`, `results.md`, `results.json` and the resolved
/// `config.json`. A failed pair is recorded and the rest still run.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome, CliError> {
    let problems = validate(cfg);
    if !problems.is_empty() {
        return Err(CliError::Config(problems.join("; ")));
    }
    let report_dir = out_dir.join("reports");
    std::fs::create_dir_all(&report_dir)
        .map_err(|e| CliError::Config(format!("output directory {}: {e}", report_dir.display())))?;
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_file(&out_dir.join("config.json"), &echo)
        .map_err(|e| CliError::Config(format!("output directory not writable: {e}")))?;

    let datasets: Vec<TabularDataset> = cfg.datasets.iter().map(load_dataset).collect::<Result<_, _>>()?;
    let mut splits = Vec::new();
    let mut split_warnings = Vec::new();
    for (d, ds) in cfg.datasets.iter().zip(&datasets) {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let spec = SplitSpec::new(cfg.split.train_fraction, cfg.split.labeled_fraction, seed);
            let split = make_split(ds, &spec)?;
            if !split.stratified {
                log::warn!(
                    "{}: seed {seed}: stratified labeled split infeasible at fraction {}, using plain random sampling",
                    d.name,
                    cfg.split.labeled_fraction
                );
                split_warnings.push(SplitWarning {
                    dataset: d.name.clone(),
                    seed,
                    labeled_fraction: cfg.split.labeled_fraction,
                });
            }
            per_seed.push((spec, split));
        }
        splits.push(per_seed);
    }

    let mut pairs = Vec::new();
    for d in 0..cfg.datasets.len() {
        for m in 0..cfg.methods.len() {
            for &seed in &cfg.seeds {
                pairs.push(Pair { dataset: d, method: m, seed });
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExperimentReport, String>>>> =
        Mutex::new((0..pairs.len()).map(|_| None).collect());
    let writer = Mutex::new(());
    let work = |i: usize| -> Result<ExperimentReport, String> {
        let p = &pairs[i];
        let seed_pos = cfg.seeds.iter().position(|&s| s == p.seed).expect("seed listed");
        let (spec, split) = &splits[p.dataset][seed_pos];
        let mut run_cfg = cfg.methods[p.method].clone();
        run_cfg.seed = p.seed;
        let dataset = &cfg.datasets[p.dataset].name;
        log::info!("pair {}/{}: {dataset} / {} / seed {}", i + 1, pairs.len(), run_cfg.name, p.seed);
        let outcome = catch_unwind(AssertUnwindSafe(|| run_progressive(&datasets[p.dataset], split, &run_cfg)))
            .map_err(|panic| {
                panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into())
            })?
            .map_err(|e| e.to_string())?;
        let mut report = outcome.report;
        report.dataset = dataset.clone();
        report.split = Some(*spec);
        let path = report_dir.join(format!(
            "{i:04}_{}_{}_seed{}.json",
            file_safe(dataset),
            file_safe(&report.method),
            p.seed
        ));
        let _guard = writer.lock().unwrap_or_else(|e| e.into_inner());
        write_file(&path, &report.to_json()).map_err(|e| e.to_string())?;
        Ok(report)
    };
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(pairs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pairs.len() {
                    break;
                }
                let r = work(i);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (p, r) in pairs.iter().zip(results.into_inner().unwrap_or_else(|e| e.into_inner())) {
        match r.expect("every pair ran") {
            Ok(report) => reports.push(report),
            Err(message) => {
                let f = PairFailure {
                    dataset: cfg.datasets[p.dataset].name.clone(),
                    method: cfg.methods[p.method].method_name(),
                    seed: p.seed,
                    message,
                };
                log::error!("{} / {} / seed {} failed: {}", f.dataset, f.method, f.seed, f.message);
                failures.push(f);
            }
        }
    }
    let table = ResultsTable::from_reports(&reports);
    write_file(&out_dir.join("results.csv"), &table.to_csv())?;
    write_file(&out_dir.join("results.md"), &table.to_markdown())?;
    write_file(
        &out_dir.join("results.json"),
        &serde_json::to_string_pretty(&table).expect("table serializes"),
    )?;
    if !failures.is_empty() {
        write_file(
            &out_dir.join("failures.json"),
            &serde_json::to_string_pretty(&failures).expect("failures serialize"),
        )?;
    }
    Ok(ExperimentOutcome {
        table,
        reports,
        failures,
        split_warnings,
    })
}

/// One plot point: a method's accuracy over seeds at one labeled ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub ratio: f64,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Grouped by method (config order), ratios in the order given.
    pub rows: Vec<SweepRow>,
    /// Rows are methods, columns are `ratio=<r>`.
    pub table: ResultsTable,
    pub split_warnings: Vec<SplitWarning>,
    pub failures: Vec<PairFailure>,
}

pub const SWEEP_CSV_HEADER: &str = "method,ratio,mean_acc,std_acc,n_seeds";

pub fn default_ratios() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.ratio, r.mean_acc, r.std_acc, r.n_seeds);
    }
    out
}

/// Runs the configured methods on the single configured dataset once per
/// labeled ratio. Each ratio gets its own `ratio-<r>` subdirectory; the
/// plot data goes to `ratio_sweep.csv`, infeasible stratifications to
/// `ratio_sweep_warnings.csv`.
pub fn emit_ratio_sweep(cfg: &ExperimentConfig, ratios: &[f64], out_dir: &Path) -> Result<SweepOutcome, CliError> {
    if ratios.is_empty() {
        return Err(CliError::Config("no ratios given".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(CliError::Config(format!("ratio {r} must lie strictly between 0 and 1")));
    }
    if cfg.datasets.len() != 1 {
        return Err(CliError::Config(format!(
            "ratio sweep needs exactly one dataset, config has {}",
            cfg.datasets.len()
        )));
    }
    let mut all_reports = Vec::new();
    let mut split_warnings = Vec::new();
    let mut failures = Vec::new();
    for &ratio in ratios {
        let mut c = cfg.clone();
        c.split.labeled_fraction = ratio;
        let dir: PathBuf = out_dir.join(format!("ratio-{ratio}"));
        let outcome = run_experiment(&c, &dir)?;
        let column = format!("ratio={ratio}");
        all_reports.extend(outcome.reports.into_iter().map(|mut r| {
            r.dataset = column.clone();
            r
        }));
        split_warnings.extend(outcome.split_warnings);
        failures.extend(outcome.failures);
    }
    let table = ResultsTable::from_reports(&all_reports);
    let mut rows = Vec::new();
    for m in &cfg.methods {
        let name = m.method_name();
        for &ratio in ratios {
            if let Some(cell) = table.cell(&name, &format!("ratio={ratio}")) {
                rows.push(SweepRow {
                    method: name.clone(),
                    ratio,
                    mean_acc: cell.mean,
                    std_acc: cell.std,
                    n_seeds: cell.values.len(),
                });
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    write_file(&out_dir.join("ratio_sweep.csv"), &sweep_csv(&rows))?;
    write_file(&out_dir.join("ratio_sweep.md"), &table.to_markdown())?;
    if !split_warnings.is_empty() {
        let mut w = String::from("ratio,seed,warning\n");
        for s in &split_warnings {
            let _ = writeln!(w, "{},{},stratified split infeasible; plain random sampling used", s.labeled_fraction, s.seed);
        }
        write_file(&out_dir.join("ratio_sweep_warnings.csv"), &w)?;
    }
    Ok(SweepOutcome {
        rows,
        table,
        split_warnings,
        failures,
    })
}

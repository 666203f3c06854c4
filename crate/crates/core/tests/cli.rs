use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use progcpr::cli::{
    emit_ratio_sweep, read_reports, run_experiment, DatasetConfig, ExperimentConfig, ResultsTable, SplitConfig,
    SWEEP_CSV_HEADER,
};
use progcpr::cmixup::ComponentFlags;
use progcpr::data::SyntheticSpec;
use progcpr::progressive::{mean_std, RefinementMode, RunConfig};

fn progcpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_progcpr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const SUPERVISED_SMALL: &str = "seeds = [123]\n[[datasets]]\npreset = \"small\"\n[[methods]]\nbase = \"supervised\"\n";

#[test]
fn supervised_small_run_has_one_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", SUPERVISED_SMALL);
    let out = dir.path().join("out");
    let started = Instant::now();
    let o = progcpr(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(started.elapsed().as_secs() < 60);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table: ResultsTable = serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(table.n_filled(), 1);
    assert_eq!((table.methods.len(), table.columns.len()), (1, 1));
    assert!(out.join("results.csv").exists() && out.join("results.md").exists());
}

#[test]
fn rerun_reproduces_table_and_render_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "seeds = [1, 2]\njobs = 2\n[[datasets]]\npreset = \"small\"\n[[methods]]\nbase = \"supervised\"\n[[methods]]\nbase = \"vime\"\n[methods.vime]\npretext_epochs = 2\nsemisup_epochs = 5\n",
    );
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = progcpr(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out.join("results.json")).unwrap();
        let table: ResultsTable = serde_json::from_str(&text).unwrap();
        assert_eq!(ResultsTable::from_report_dir(&out.join("reports")).unwrap(), table);
        for cell in table.cells.iter().flatten().flatten() {
            let (m, s) = mean_std(&cell.values);
            assert!((m - cell.mean).abs() <= 1e-12 && (s - cell.std).abs() <= 1e-12);
            assert_eq!(progcpr::cli::format_cell(m, s), cell.text);
        }
        tables.push(table);
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[0].methods, ["supervised", "vime"]);
}

#[test]
fn seeds_and_jobs_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", SUPERVISED_SMALL);
    let out = dir.path().join("out");
    let o = progcpr(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "5,6,7", "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let reports = read_reports(&out.join("reports")).unwrap();
    let seeds: Vec<u64> = reports.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, [5, 6, 7]);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", SUPERVISED_SMALL);
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_progcpr"))
        .args(["run", "--config", &cfg])
        .env("PROGCPR_OUT_DIR", &out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("results.csv").exists());
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = "[[datasets]]\npreset = \"small\"\n";
    let cases = [
        ("[[methods]]\nbase = \"vime\"\nrefinement = \"two_step_agreement\"\n", 1),
        (
            "[[methods]]\nbase = \"cmixup\"\nrefinement = \"propagation_threshold\"\n[methods.cmixup.flags]\nclassifier = false\n",
            0,
        ),
        ("[[methods]]\nbase = \"vime\"\n", 0),
        ("seeds = []\n[[methods]]\nbase = \"vime\"\n", 1),
        ("[[methods]]\nbse = \"vime\"\n", 1),
    ];
    for (i, (methods, code)) in cases.iter().enumerate() {
        let text = if methods.starts_with("seeds") {
            let (seeds, rest) = methods.split_once('\n').unwrap();
            format!("{seeds}\n{data}{rest}")
        } else {
            format!("{data}{methods}")
        };
        let cfg = write(dir.path(), &format!("c{i}.toml"), &text);
        let o = progcpr(&["validate", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(*code), "case {i}: {}", String::from_utf8_lossy(&o.stdout));
    }
    assert_eq!(progcpr(&["validate", "--config", "/no/such/file.toml"]).status.code(), Some(1));
    assert_eq!(progcpr(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = progcpr(&["validate", "--config", p.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0), "{}", p.display());
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn failing_pair_gives_exit_two_and_keeps_other_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "seeds = [1]\n[[datasets]]\npreset = \"small\"\n[[methods]]\nbase = \"supervised\"\n\
         [[methods]]\nbase = \"cmixup\"\nname = \"doomed\"\n[methods.cmixup]\nwarmup_epochs = 0\nepochs = 1\n\
         [methods.cmixup.propagation]\nmax_iterations = 1\ntolerance = 1e-300\n",
    );
    let out = dir.path().join("out");
    let o = progcpr(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let reports = read_reports(&out.join("reports")).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].method, "supervised");
    assert!(out.join("failures.json").exists());
}

#[test]
fn synth_writes_csv_and_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("small.csv");
    let o = progcpr(&["synth", "--preset", "small", "--out", csv.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2001);
    assert!(text.lines().next().unwrap().ends_with(",label"));
    let o = progcpr(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("ok")).count(), 6);
}

fn tiny(seed: u64) -> DatasetConfig {
    DatasetConfig {
        name: format!("tiny{seed}"),
        synthetic: Some(SyntheticSpec {
            n_rows: 300,
            n_cat_cols: 2,
            cardinality: 10,
            n_num_cols: 1,
            n_classes: 3,
            signal_strength: 1.0,
            value_skew: 0.0,
            seed,
        }),
        ..DatasetConfig::default()
    }
}

#[test]
fn ablation_matrix_is_six_by_three() {
    let combos = [
        ("classifier", ComponentFlags { classifier: true, decoder: false, projection: false }),
        ("decoder", ComponentFlags { classifier: false, decoder: true, projection: false }),
        ("classifier+decoder", ComponentFlags { classifier: true, decoder: true, projection: false }),
        ("classifier+projection", ComponentFlags { classifier: true, decoder: false, projection: true }),
        ("decoder+projection", ComponentFlags { classifier: false, decoder: true, projection: true }),
        ("all", ComponentFlags::default()),
    ];
    let methods = combos
        .iter()
        .map(|(name, flags)| {
            let mut m = RunConfig::progressive_cmixup();
            m.name = name.to_string();
            m.n_runs = 2;
            m.propagation_threshold = 0.3;
            m.cmixup.flags = *flags;
            m.cmixup.warmup_epochs = 1;
            m.cmixup.epochs = 2;
            m.cmixup.propagation.k = 10;
            m.vime.semisup_epochs = 3;
            if !flags.classifier {
                m.refinement = RefinementMode::PropagationThreshold;
            }
            m
        })
        .collect();
    let cfg = ExperimentConfig {
        name: "ablation".into(),
        datasets: vec![tiny(1), tiny(2), tiny(3)],
        split: SplitConfig::default(),
        methods,
        seeds: vec![123],
        jobs: 2,
        out_dir: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&cfg, dir.path()).unwrap();
    assert!(outcome.all_completed(), "{:?}", outcome.failures);
    assert_eq!((outcome.table.methods.len(), outcome.table.columns.len()), (6, 3));
    assert_eq!(outcome.table.n_filled(), 18);
}

#[test]
fn ratio_sweep_rows_and_header() {
    let mut base = RunConfig::vime_baseline();
    base.vime.pretext_epochs = 1;
    base.vime.semisup_epochs = 3;
    let mut prog = RunConfig::progressive_vime();
    prog.n_runs = 2;
    prog.vime = base.vime.clone();
    let cfg = ExperimentConfig {
        name: "sweep".into(),
        datasets: vec![tiny(9)],
        split: SplitConfig::default(),
        methods: vec![base, prog],
        seeds: vec![1, 2],
        jobs: 1,
        out_dir: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let ratios = [0.1, 0.3, 0.5, 0.7, 0.9];
    let outcome = emit_ratio_sweep(&cfg, &ratios, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("ratio_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    assert_eq!(lines.count(), 10);
    for m in ["vime", "progressive_vime"] {
        let rows: Vec<_> = outcome.rows.iter().filter(|r| r.method == m).collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.n_seeds == 2));
    }
    assert!(emit_ratio_sweep(&cfg, &[0.0], dir.path()).is_err());
}

#[test]
fn infeasible_stratification_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("color,x,label\n");
    for i in 0..200 {
        // Class 1 never occurs, so no stratified split exists.
        csv.push_str(&format!("c{},{},{}\n", i % 7, i % 13, if i % 3 == 0 { 2 } else { 0 }));
    }
    std::fs::write(dir.path().join("gap.csv"), csv).unwrap();
    let mut m = RunConfig::supervised();
    m.vime.semisup_epochs = 2;
    let cfg = ExperimentConfig {
        name: "gap".into(),
        datasets: vec![DatasetConfig {
            name: "gap".into(),
            csv: Some(dir.path().join("gap.csv")),
            label_column: Some("label".into()),
            ..DatasetConfig::default()
        }],
        split: SplitConfig::default(),
        methods: vec![m],
        seeds: vec![1],
        jobs: 1,
        out_dir: None,
    };
    let outcome = emit_ratio_sweep(&cfg, &[0.9], &dir.path().join("out")).unwrap();
    assert_eq!(outcome.split_warnings.len(), 1);
    assert_eq!(outcome.rows.len(), 1);
    let warnings = std::fs::read_to_string(dir.path().join("out/ratio_sweep_warnings.csv")).unwrap();
    assert!(warnings.lines().nth(1).unwrap().starts_with("0.9,1,"));
}

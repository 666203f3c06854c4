use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Preset};
use crate::data::{ColumnKind, SyntheticSpec};
use crate::progressive::RunConfig;

/// Environment variable naming the output directory when neither `--out` nor
/// the config sets one.
pub const OUT_DIR_ENV: &str = "PROGCPR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "progcpr-out";

/// One dataset. Exactly one of `preset`, `csv`, `synthetic` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Column label in the results table; defaults to the preset name or
    /// file stem.
    pub name: String,
    pub preset: Option<Preset>,
    /// Overrides the preset's generator seed.
    pub preset_seed: Option<u64>,
    pub csv: Option<PathBuf>,
    pub label_column: Option<String>,
    /// Column kind overrides for CSV input.
    pub kinds: BTreeMap<String, ColumnKind>,
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, label_column: String },
}

impl DatasetConfig {
    pub fn preset(p: Preset) -> Self {
        Self {
            name: p.name().into(),
            preset: Some(p),
            ..Self::default()
        }
    }

    pub fn source(&self) -> Result<DatasetSource, String> {
        match (&self.preset, &self.csv, &self.synthetic) {
            (Some(p), None, None) => {
                let mut spec = p.spec();
                if let Some(s) = self.preset_seed {
                    spec.seed = s;
                }
                Ok(DatasetSource::Synthetic(spec))
            }
            (None, Some(path), None) => match &self.label_column {
                Some(l) => Ok(DatasetSource::Csv {
                    path: path.clone(),
                    label_column: l.clone(),
                }),
                None => Err("csv dataset needs label_column".into()),
            },
            (None, None, Some(spec)) => Ok(DatasetSource::Synthetic(spec.clone())),
            (None, None, None) => Err("no source: set one of preset, csv, synthetic".into()),
            _ => Err("more than one of preset, csv, synthetic is set".into()),
        }
    }

    fn default_name(&self) -> String {
        if let Some(p) = self.preset {
            p.name().into()
        } else if let Some(path) = &self.csv {
            path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned())
        } else {
            "synthetic".into()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub labeled_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            labeled_fraction: 0.1,
        }
    }
}

/// A full experiment: every method runs on every dataset for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub datasets: Vec<DatasetConfig>,
    pub split: SplitConfig,
    pub methods: Vec<RunConfig>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out_dir: Option<PathBuf>,
}

pub const DEFAULT_SEEDS: [u64; 4] = [123, 127, 131, 137];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    name: String,
    #[serde(default)]
    datasets: Vec<DatasetConfig>,
    #[serde(default)]
    split: SplitConfig,
    #[serde(default)]
    methods: Vec<toml::Table>,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_jobs")]
    jobs: usize,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_jobs() -> usize {
    1
}

/// Named starting points for `[[methods]]` entries via `base = "..."`.
pub fn method_preset(name: &str) -> Option<RunConfig> {
    Some(match name {
        "default" => RunConfig::default(),
        "supervised" => RunConfig::supervised(),
        "vime" => RunConfig::vime_baseline(),
        "progressive_vime" => RunConfig::progressive_vime(),
        "cmixup" => RunConfig::cmixup_baseline(),
        "progressive_cmixup" => RunConfig::progressive_cmixup(),
        _ => return None,
    })
}

pub const METHOD_PRESETS: [&str; 6] = [
    "default",
    "supervised",
    "vime",
    "progressive_vime",
    "cmixup",
    "progressive_cmixup",
];

/// Overlays `over` onto `base`, rejecting keys `base` does not have.
fn merge(base: &mut toml::Table, over: toml::Table, path: &str) -> Result<(), String> {
    for (k, v) in over {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => return Err(format!("unknown key {here}")),
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &here)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

fn resolve_method(mut table: toml::Table, index: usize) -> Result<RunConfig, String> {
    let base_name = match table.remove("base") {
        None => "default".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(other) => return Err(format!("methods[{index}].base must be a string, got {other}")),
    };
    let base = method_preset(&base_name).ok_or_else(|| {
        format!(
            "methods[{index}].base {base_name:?} is not one of {}",
            METHOD_PRESETS.join(", ")
        )
    })?;
    let mut merged = toml::Table::try_from(&base).map_err(|e| e.to_string())?;
    merge(&mut merged, table, "").map_err(|e| format!("methods[{index}]: {e}"))?;
    let mut cfg: RunConfig = merged.try_into().map_err(|e| format!("methods[{index}]: {e}"))?;
    if cfg.name.is_empty() {
        cfg.name = cfg.method_name();
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Parses TOML. Relative CSV paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let methods = raw
            .methods
            .into_iter()
            .enumerate()
            .map(|(i, t)| resolve_method(t, i))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::Config)?;
        let datasets = raw
            .datasets
            .into_iter()
            .map(|mut d| {
                if d.name.is_empty() {
                    d.name = d.default_name();
                }
                if let (Some(dir), Some(p)) = (base_dir, d.csv.as_mut()) {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
                d
            })
            .collect();
        Ok(Self {
            name: raw.name,
            datasets,
            split: raw.split,
            methods,
            seeds: raw.seeds,
            jobs: raw.jobs,
            out_dir: raw.out_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    /// `--out`, then the config's `out_dir`, then [`OUT_DIR_ENV`], then
    /// [`DEFAULT_OUT_DIR`].
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Every problem with `cfg`, empty when it is runnable. Does not touch the
/// filesystem.
pub fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    if cfg.seeds.is_empty() {
        out.push("seeds: at least one seed is required".into());
    }
    let mut seen = BTreeSet::new();
    for s in &cfg.seeds {
        if !seen.insert(s) {
            out.push(format!("seeds: {s} listed twice"));
        }
    }
    if cfg.methods.is_empty() {
        out.push("methods: at least one method is required".into());
    }
    if cfg.datasets.is_empty() {
        out.push("datasets: at least one dataset is required".into());
    }
    if cfg.jobs == 0 {
        out.push("jobs must be at least 1".into());
    }
    for (v, name) in [
        (cfg.split.train_fraction, "train_fraction"),
        (cfg.split.labeled_fraction, "labeled_fraction"),
    ] {
        if !(v > 0.0 && v < 1.0) {
            out.push(format!("split.{name} {v} must lie strictly between 0 and 1"));
        }
    }
    let mut names = BTreeSet::new();
    for (i, d) in cfg.datasets.iter().enumerate() {
        let label = if d.name.is_empty() { format!("datasets[{i}]") } else { d.name.clone() };
        if !names.insert(d.name.clone()) {
            out.push(format!("dataset {label}: duplicate name"));
        }
        match d.source() {
            Ok(DatasetSource::Synthetic(spec)) => {
                if let Err(e) = spec.validate() {
                    out.push(format!("dataset {label}: {e}"));
                }
            }
            Ok(DatasetSource::Csv { .. }) => {}
            Err(e) => out.push(format!("dataset {label}: {e}")),
        }
    }
    let mut names = BTreeSet::new();
    for m in &cfg.methods {
        let name = m.method_name();
        if !names.insert(name.clone()) {
            out.push(format!("method {name}: duplicate name"));
        }
        out.extend(m.diagnostics().into_iter().map(|d| format!("method {name}: {d}")));
    }
    out
}

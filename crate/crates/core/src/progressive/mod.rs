//! Multi-run training where the categorical representation is rebuilt before
//! every run from the labeled rows plus the refined pseudo-labels of the
//! previous run.

mod refine;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmixup::{classify, train_cmixup, CmixupConfig, CmixupError};
use crate::data::{apply_scaler, fit_scaler, DataError, DataSplit, SplitSpec, TabularDataset};
use crate::encoding::{
    encode, fit_cpr, fit_target_encoding, update_counts, update_target_encoding, CategoricalEncoder,
    EncodingError, EncodingKind,
};
use crate::nn::{accuracy, RowView};
use crate::vime::{predict, train_vime, VimeConfig, VimeError};

pub use refine::{refine_pseudo_labels, PseudoLabelSet, RefinementMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Vime(#[from] VimeError),
    #[error(transparent)]
    Cmixup(#[from] CmixupError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Error)]
pub enum ProgressiveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: StageError,
    },
    #[error("no reports to compare")]
    NoReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[default]
    Vime,
    Cmixup,
}

/// Everything that defines one progressive experiment for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub pipeline: Pipeline,
    pub n_runs: usize,
    pub refinement: RefinementMode,
    pub classifier_threshold: f64,
    pub propagation_threshold: f64,
    /// Rebuild the table between runs. Off means every run sees the
    /// labeled-only table.
    pub update_enabled: bool,
    /// Keep pseudo-labels from earlier runs instead of rebuilding from the
    /// current run's kept set only. A row keeps the label it was first
    /// added with.
    pub accumulate: bool,
    /// Replace pseudo-labels with the hidden ground truth (evaluation only).
    pub oracle_pseudo_labels: bool,
    pub encoding: EncodingKind,
    pub laplace_alpha: f64,
    pub target_smoothing: f64,
    pub scale_numeric: bool,
    pub seed: u64,
    pub vime: VimeConfig,
    pub cmixup: CmixupConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            pipeline: Pipeline::Vime,
            n_runs: 5,
            refinement: RefinementMode::ClassifierThreshold,
            classifier_threshold: 0.8,
            propagation_threshold: 0.9,
            update_enabled: true,
            accumulate: false,
            oracle_pseudo_labels: false,
            encoding: EncodingKind::Cpr,
            laplace_alpha: 1.0,
            target_smoothing: 10.0,
            scale_numeric: true,
            seed: 123,
            vime: VimeConfig::default(),
            cmixup: CmixupConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn progressive_vime() -> Self {
        Self {
            name: "progressive_vime".into(),
            ..Self::default()
        }
    }

    /// Plain VIME: one run on the labeled-only table.
    pub fn vime_baseline() -> Self {
        Self {
            name: "vime".into(),
            n_runs: 1,
            update_enabled: false,
            refinement: RefinementMode::None,
            ..Self::default()
        }
    }

    /// MLP on labeled rows only: VIME with pretext and consistency off.
    pub fn supervised() -> Self {
        let mut cfg = Self::vime_baseline();
        cfg.name = "supervised".into();
        cfg.vime.pretext = false;
        cfg.vime.beta = 0.0;
        cfg
    }

    pub fn progressive_cmixup() -> Self {
        Self {
            name: "progressive_cmixup".into(),
            pipeline: Pipeline::Cmixup,
            n_runs: 4,
            refinement: RefinementMode::TwoStepAgreement,
            ..Self::default()
        }
    }

    /// The original contrastive-mixup architecture, one run.
    pub fn cmixup_baseline() -> Self {
        let mut cfg = Self {
            name: "cmixup".into(),
            pipeline: Pipeline::Cmixup,
            n_runs: 1,
            update_enabled: false,
            refinement: RefinementMode::None,
            ..Self::default()
        };
        cfg.cmixup.flags = crate::cmixup::ComponentFlags::baseline();
        cfg
    }

    pub fn method_name(&self) -> String {
        if self.name.is_empty() {
            let p = match self.pipeline {
                Pipeline::Vime => "vime",
                Pipeline::Cmixup => "cmixup",
            };
            format!("{p}_{}_{}runs", self.refinement.name(), self.n_runs)
        } else {
            self.name.clone()
        }
    }

    /// All invariant violations, empty when valid.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_runs == 0 {
            out.push("n_runs must be at least 1".into());
        }
        for (t, name) in [
            (self.classifier_threshold, "classifier_threshold"),
            (self.propagation_threshold, "propagation_threshold"),
        ] {
            if !(0.0..=1.0).contains(&t) {
                out.push(format!("{name} {t} outside [0, 1]"));
            }
        }
        let classifier = match self.pipeline {
            Pipeline::Vime => true,
            Pipeline::Cmixup => self.cmixup.flags.classifier,
        };
        let propagation = self.pipeline == Pipeline::Cmixup;
        match self.refinement {
            RefinementMode::ClassifierThreshold if !classifier => {
                out.push("classifier_threshold refinement needs the classifier head".into())
            }
            RefinementMode::PropagationThreshold if !propagation => {
                out.push("propagation_threshold refinement needs label propagation (cmixup pipeline)".into())
            }
            RefinementMode::TwoStepAgreement if !(classifier && propagation) => out.push(
                "two_step_agreement needs both a classifier and label propagation (cmixup with classifier)"
                    .into(),
            ),
            _ => {}
        }
        if self.update_enabled
            && self.n_runs > 1
            && matches!(self.encoding, EncodingKind::OneHot | EncodingKind::Label)
        {
            out.push(format!("{} encoding has no statistics to update", self.encoding.name()));
        }
        if !(self.laplace_alpha.is_finite() && self.laplace_alpha >= 0.0) {
            out.push(format!("laplace_alpha {} must be non-negative", self.laplace_alpha));
        }
        if !(self.target_smoothing.is_finite() && self.target_smoothing >= 0.0) {
            out.push(format!("target_smoothing {} must be non-negative", self.target_smoothing));
        }
        if let Err(e) = self.vime.validate() {
            out.push(format!("vime: {e}"));
        }
        if self.pipeline == Pipeline::Cmixup {
            if let Err(e) = self.cmixup.validate() {
                out.push(format!("cmixup: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ProgressiveError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(ProgressiveError::Config(d.join("; ")))
        }
    }
}

/// Fits the labeled-only encoder for `kind`.
pub fn base_encoder(
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
    cfg: &RunConfig,
) -> Result<CategoricalEncoder, EncodingError> {
    Ok(match cfg.encoding {
        EncodingKind::Cpr => CategoricalEncoder::Cpr(fit_cpr(ds, rows, labels, cfg.laplace_alpha)?),
        EncodingKind::TargetEncoding => {
            CategoricalEncoder::Target(fit_target_encoding(ds, rows, labels, cfg.target_smoothing)?)
        }
        EncodingKind::OneHot => CategoricalEncoder::OneHot,
        EncodingKind::Label => CategoricalEncoder::Label,
    })
}

/// `base` (fit on the labeled rows) plus the pseudo-labeled `rows`; the same
/// as refitting on the union. Stateless encoders are returned unchanged.
pub fn update_representation(
    base: &CategoricalEncoder,
    ds: &TabularDataset,
    rows: &[usize],
    labels: &[u32],
) -> Result<CategoricalEncoder, EncodingError> {
    Ok(match base {
        CategoricalEncoder::Cpr(t) => CategoricalEncoder::Cpr(update_counts(t, ds, rows, labels)?),
        CategoricalEncoder::Target(t) => {
            CategoricalEncoder::Target(update_target_encoding(t, ds, rows, labels)?)
        }
        other => other.clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLosses {
    pub pretext: Vec<f64>,
    pub encoder: Vec<f64>,
    pub predictor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub test_accuracy: f64,
    pub n_pseudo: usize,
    pub n_kept: usize,
    pub kept_fraction: f64,
    /// Against hidden ground truth; never used for training.
    pub pseudo_label_precision: Option<f64>,
    pub unrefined_precision: Option<f64>,
    /// Labeled plus pseudo-labeled rows counted in this run's table.
    pub table_rows: usize,
    pub losses: RunLosses,
    /// Ten-bin histogram of unlabeled propagation weights (cmixup only).
    pub propagation_weight_histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    /// Dataset label set by the experiment runner; empty otherwise.
    #[serde(default)]
    pub dataset: String,
    #[serde(default)]
    pub split: Option<SplitSpec>,
    pub seed: u64,
    pub config: RunConfig,
    pub runs: Vec<RunMetrics>,
    pub final_test_accuracy: f64,
    pub wall_clock_seconds: f64,
    pub library_version: String,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Report plus the artifacts behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressiveOutcome {
    pub report: ExperimentReport,
    /// Encoder used by each run.
    pub tables: Vec<CategoricalEncoder>,
    /// Refined pseudo-labels produced after each run.
    pub pseudo_labels: Vec<PseudoLabelSet>,
    pub test_predictions: Vec<u32>,
}

struct RunOutput {
    test_predictions: Vec<u32>,
    pseudo: PseudoLabelSet,
    losses: RunLosses,
    histogram: Vec<usize>,
}

fn run_once(
    ds: &TabularDataset,
    split: &DataSplit,
    labels: &[u32],
    encoder: &CategoricalEncoder,
    cfg: &RunConfig,
) -> Result<RunOutput, StageError> {
    let nl = split.labeled.len();
    let nu = split.unlabeled.len();
    let mut order = split.labeled.clone();
    order.extend_from_slice(&split.unlabeled);
    order.extend_from_slice(&split.test);
    let x = encode(ds, &order, encoder)?;
    let labeled = RowView::new(&x, (0..nl).collect());
    let unlabeled = RowView::new(&x, (nl..nl + nu).collect());
    let test = RowView::new(&x, (nl + nu..order.len()).collect());
    let c = ds.num_classes();
    match cfg.pipeline {
        Pipeline::Vime => {
            let (model, trace) = train_vime(&labeled, labels, &unlabeled, c, &cfg.vime, cfg.seed)?;
            let test_pred = predict(&model, &test).map_err(VimeError::from)?;
            let u = predict(&model, &unlabeled).map_err(VimeError::from)?;
            let pseudo = PseudoLabelSet::new(split.unlabeled.clone(), u.labels.clone())
                .with_classifier(u.labels, u.confidences);
            Ok(RunOutput {
                test_predictions: test_pred.labels,
                pseudo,
                losses: RunLosses {
                    pretext: trace.pretext_loss,
                    encoder: Vec::new(),
                    predictor: trace.semisup_loss,
                },
                histogram: Vec::new(),
            })
        }
        Pipeline::Cmixup => {
            let train = RowView::new(&x, (0..nl + nu).collect());
            let fit = train_cmixup(&train, labels, c, &cfg.cmixup, &cfg.vime, cfg.seed)?;
            let test_pred = fit.predict(&test)?;
            let mut pseudo = PseudoLabelSet::new(split.unlabeled.clone(), fit.propagation.labels[nl..].to_vec())
                .with_propagation_weight(fit.propagation.weights[nl..].to_vec());
            if fit.model.classifier.is_some() {
                let p = classify(&fit.model, &unlabeled)?;
                pseudo = pseudo.with_classifier(p.labels, p.confidences);
            }
            Ok(RunOutput {
                test_predictions: test_pred.labels,
                pseudo,
                losses: RunLosses {
                    pretext: Vec::new(),
                    encoder: fit.trace.loss,
                    predictor: fit.predictor_loss,
                },
                histogram: fit.trace.weight_histogram,
            })
        }
    }
}

/// Runs `cfg.n_runs` runs. Run 0 uses the labeled-only table; after each run
/// the unlabeled rows are pseudo-labeled, refined, and (when updating) the
/// table is rebuilt and every row re-encoded for the next run. Models start
/// from the same seed-derived initialization in every run, so runs differ
/// only through the representation. Test rows never enter a table.
pub fn run_progressive(
    ds: &TabularDataset,
    split: &DataSplit,
    cfg: &RunConfig,
) -> Result<ProgressiveOutcome, ProgressiveError> {
    cfg.validate()?;
    let started = Instant::now();
    let scaled;
    let ds = if cfg.scale_numeric && !ds.numeric_columns().is_empty() {
        let scaler = fit_scaler(ds, &split.train())?;
        scaled = apply_scaler(ds, &scaler)?;
        &scaled
    } else {
        ds
    };
    let labels = ds.labels_of(&split.labeled)?;
    let truth_u = ds.labels_of(&split.unlabeled)?;
    let truth_test = ds.labels_of(&split.test)?;
    let base = base_encoder(ds, &split.labeled, &labels, cfg)?;

    let mut encoder = base.clone();
    let mut accumulated: (Vec<usize>, Vec<u32>) = (Vec::new(), Vec::new());
    let mut seen = BTreeSet::new();
    let mut table_rows = split.labeled.len();
    let mut metrics = Vec::with_capacity(cfg.n_runs);
    let mut tables = Vec::with_capacity(cfg.n_runs);
    let mut pseudo_sets = Vec::with_capacity(cfg.n_runs);
    let mut test_predictions = Vec::new();

    for run in 0..cfg.n_runs {
        let wrap = |source: StageError| ProgressiveError::Run { run, source };
        log::info!("{}: run {} of {}", cfg.method_name(), run + 1, cfg.n_runs);
        let out = run_once(ds, split, &labels, &encoder, cfg).map_err(wrap)?;
        let test_accuracy = accuracy(&out.test_predictions, &truth_test);

        let raw = if cfg.oracle_pseudo_labels {
            let n = truth_u.len();
            PseudoLabelSet::new(split.unlabeled.clone(), truth_u.clone())
                .with_classifier(truth_u.clone(), vec![1.0; n])
                .with_propagation_weight(vec![1.0; n])
        } else {
            out.pseudo
        };
        let refined = refine_pseudo_labels(&raw, cfg.refinement, cfg.classifier_threshold, cfg.propagation_threshold)?;
        let unrefined = refine_pseudo_labels(&raw, RefinementMode::None, 0.0, 0.0)?;
        let n_kept = refined.n_kept();
        metrics.push(RunMetrics {
            run,
            test_accuracy,
            n_pseudo: refined.len(),
            n_kept,
            kept_fraction: if refined.is_empty() { 0.0 } else { n_kept as f64 / refined.len() as f64 },
            pseudo_label_precision: refined.precision(cfg.refinement, &truth_u),
            unrefined_precision: unrefined.precision(RefinementMode::None, &truth_u),
            table_rows,
            losses: out.losses,
            propagation_weight_histogram: out.histogram,
        });
        tables.push(encoder.clone());
        test_predictions = out.test_predictions;

        if cfg.update_enabled && run + 1 < cfg.n_runs {
            let (rows, plabels) = refined.selected(cfg.refinement);
            let (rows, plabels) = if cfg.accumulate {
                for (r, y) in rows.into_iter().zip(plabels) {
                    if seen.insert(r) {
                        accumulated.0.push(r);
                        accumulated.1.push(y);
                    }
                }
                accumulated.clone()
            } else {
                (rows, plabels)
            };
            encoder = update_representation(&base, ds, &rows, &plabels)
                .map_err(|e| wrap(StageError::Encoding(e)))?;
            table_rows = split.labeled.len() + rows.len();
        }
        pseudo_sets.push(refined);
    }

    let final_test_accuracy = metrics.last().map_or(0.0, |m| m.test_accuracy);
    Ok(ProgressiveOutcome {
        report: ExperimentReport {
            method: cfg.method_name(),
            dataset: String::new(),
            split: None,
            seed: cfg.seed,
            config: cfg.clone(),
            runs: metrics,
            final_test_accuracy,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        tables,
        pseudo_labels: pseudo_sets,
        test_predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
    /// Final test accuracies in report order.
    pub values: Vec<f64>,
}

/// Mean and standard deviation of one set of values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-method mean and std of the final test accuracy, methods in order of
/// first appearance.
pub fn compare_runs(reports: &[ExperimentReport]) -> Result<Vec<MethodSummary>, ProgressiveError> {
    if reports.is_empty() {
        return Err(ProgressiveError::NoReports);
    }
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    Ok(methods
        .into_iter()
        .map(|method| {
            let values: Vec<f64> = reports
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.final_test_accuracy)
                .collect();
            let (mean, std) = mean_std(&values);
            MethodSummary {
                method,
                mean,
                std,
                n: values.len(),
                values,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_split, synthesize_dataset, SplitSpec, SyntheticSpec};

    fn report(method: &str, acc: f64) -> ExperimentReport {
        ExperimentReport {
            method: method.into(),
            dataset: String::new(),
            split: None,
            seed: 1,
            config: RunConfig::default(),
            runs: Vec::new(),
            final_test_accuracy: acc,
            wall_clock_seconds: 0.0,
            library_version: String::new(),
        }
    }

    #[test]
    fn compare_runs_mean_and_std() {
        let s = compare_runs(&[report("a", 0.6), report("a", 0.8), report("b", 0.5), report("b", 0.5)]).unwrap();
        assert_eq!(s[0].method, "a");
        assert!((s[0].mean - 0.7).abs() < 1e-15);
        assert!((s[0].std - 0.1).abs() < 1e-12);
        assert_eq!(s[1].std, 0.0);
        assert!(matches!(compare_runs(&[]), Err(ProgressiveError::NoReports)));
    }

    #[test]
    fn validation_rules() {
        let mut vime = RunConfig::progressive_vime();
        vime.refinement = RefinementMode::TwoStepAgreement;
        assert!(vime.validate().is_err());
        let mut cm = RunConfig::cmixup_baseline();
        cm.refinement = RefinementMode::PropagationThreshold;
        assert!(cm.validate().is_ok());
        cm.refinement = RefinementMode::TwoStepAgreement;
        assert!(cm.validate().is_err());
        assert!(RunConfig::progressive_cmixup().validate().is_ok());
    }

    #[test]
    fn small_progressive_run() {
        let ds = synthesize_dataset(&SyntheticSpec {
            n_rows: 300,
            cardinality: 10,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let split = make_split(&ds, &SplitSpec::new(0.8, 0.2, 1)).unwrap();
        let mut cfg = RunConfig::progressive_vime();
        cfg.n_runs = 2;
        cfg.vime.pretext_epochs = 2;
        cfg.vime.semisup_epochs = 3;
        cfg.vime.predictor_hidden = vec![16];
        let out = run_progressive(&ds, &split, &cfg).unwrap();
        assert_eq!(out.report.runs.len(), 2);
        assert_eq!(out.tables.len(), 2);
        let kept = out.pseudo_labels[0].n_kept();
        assert_eq!(out.report.runs[1].table_rows, split.labeled.len() + kept);
        let again = run_progressive(&ds, &split, &cfg).unwrap();
        assert_eq!(again.report.runs[1].test_accuracy, out.report.runs[1].test_accuracy);
    }
}

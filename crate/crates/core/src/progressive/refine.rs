use serde::{Deserialize, Serialize};

use super::ProgressiveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementMode {
    /// Every pseudo-label is kept.
    #[default]
    None,
    /// Kept iff the classifier confidence reaches `τ_c`.
    ClassifierThreshold,
    /// Kept iff the propagation weight reaches `τ_p`.
    PropagationThreshold,
    /// Kept iff classifier and propagation agree and the propagation weight
    /// reaches `τ_p`.
    TwoStepAgreement,
}

impl RefinementMode {
    pub fn name(self) -> &'static str {
        match self {
            RefinementMode::None => "none",
            RefinementMode::ClassifierThreshold => "classifier_threshold",
            RefinementMode::PropagationThreshold => "propagation_threshold",
            RefinementMode::TwoStepAgreement => "two_step_agreement",
        }
    }
}

/// Pseudo-labels for unlabeled rows together with the signals refinement
/// looks at. `labels` are the primary labels (predictor output for VIME,
/// propagation output for contrastive mixup).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// Dataset row indices, all from the unlabeled partition.
    pub rows: Vec<usize>,
    pub labels: Vec<u32>,
    pub classifier_labels: Option<Vec<u32>>,
    pub classifier_conf: Option<Vec<f64>>,
    pub propagation_weight: Option<Vec<f64>>,
    pub kept: Vec<bool>,
}

impl PseudoLabelSet {
    /// All rows kept.
    pub fn new(rows: Vec<usize>, labels: Vec<u32>) -> Self {
        let kept = vec![true; rows.len()];
        Self {
            rows,
            labels,
            classifier_labels: None,
            classifier_conf: None,
            propagation_weight: None,
            kept,
        }
    }

    pub fn with_classifier(mut self, labels: Vec<u32>, conf: Vec<f64>) -> Self {
        self.classifier_labels = Some(labels);
        self.classifier_conf = Some(conf);
        self
    }

    pub fn with_propagation_weight(mut self, weight: Vec<f64>) -> Self {
        self.propagation_weight = Some(weight);
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Kept rows with the label each one contributes: the classifier's label
    /// under `ClassifierThreshold` (when present), the primary label otherwise.
    pub fn selected(&self, mode: RefinementMode) -> (Vec<usize>, Vec<u32>) {
        let source = match (mode, &self.classifier_labels) {
            (RefinementMode::ClassifierThreshold, Some(c)) => c,
            _ => &self.labels,
        };
        self.kept
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| (self.rows[i], source[i]))
            .unzip()
    }

    /// Fraction of kept rows whose selected label equals `truth[i]`, where
    /// `truth` is aligned with `rows`. `None` when nothing is kept.
    pub fn precision(&self, mode: RefinementMode, truth: &[u32]) -> Option<f64> {
        let source = match (mode, &self.classifier_labels) {
            (RefinementMode::ClassifierThreshold, Some(c)) => c,
            _ => &self.labels,
        };
        let mut kept = 0usize;
        let mut correct = 0usize;
        for i in 0..self.rows.len() {
            if self.kept[i] {
                kept += 1;
                correct += (source[i] == truth[i]) as usize;
            }
        }
        (kept > 0).then(|| correct as f64 / kept as f64)
    }

    fn check(&self) -> Result<(), ProgressiveError> {
        let n = self.rows.len();
        let lens = [
            Some(self.labels.len()),
            Some(self.kept.len()),
            self.classifier_labels.as_ref().map(Vec::len),
            self.classifier_conf.as_ref().map(Vec::len),
            self.propagation_weight.as_ref().map(Vec::len),
        ];
        if lens.iter().flatten().any(|&l| l != n) {
            return Err(ProgressiveError::Config(format!(
                "pseudo-label fields disagree in length (expected {n})"
            )));
        }
        Ok(())
    }
}

fn missing(field: &str, mode: RefinementMode) -> ProgressiveError {
    ProgressiveError::Config(format!("refinement {} needs {field}", mode.name()))
}

/// Recomputes `kept` for `mode`; pure.
pub fn refine_pseudo_labels(
    pls: &PseudoLabelSet,
    mode: RefinementMode,
    tau_c: f64,
    tau_p: f64,
) -> Result<PseudoLabelSet, ProgressiveError> {
    pls.check()?;
    for (t, name) in [(tau_c, "classifier threshold"), (tau_p, "propagation threshold")] {
        if !(0.0..=1.0).contains(&t) {
            return Err(ProgressiveError::Config(format!("{name} {t} outside [0, 1]")));
        }
    }
    let n = pls.len();
    let kept: Vec<bool> = match mode {
        RefinementMode::None => vec![true; n],
        RefinementMode::ClassifierThreshold => {
            let conf = pls.classifier_conf.as_ref().ok_or_else(|| missing("classifier confidences", mode))?;
            conf.iter().map(|&c| c >= tau_c).collect()
        }
        RefinementMode::PropagationThreshold => {
            let w = pls.propagation_weight.as_ref().ok_or_else(|| missing("propagation weights", mode))?;
            w.iter().map(|&w| w >= tau_p).collect()
        }
        RefinementMode::TwoStepAgreement => {
            let w = pls.propagation_weight.as_ref().ok_or_else(|| missing("propagation weights", mode))?;
            let c = pls.classifier_labels.as_ref().ok_or_else(|| missing("classifier labels", mode))?;
            (0..n).map(|i| c[i] == pls.labels[i] && w[i] >= tau_p).collect()
        }
    };
    Ok(PseudoLabelSet {
        kept,
        ..pls.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step(classifier: u32, propagation: u32, weight: f64) -> bool {
        let pls = PseudoLabelSet::new(vec![7], vec![propagation])
            .with_classifier(vec![classifier], vec![0.5])
            .with_propagation_weight(vec![weight]);
        refine_pseudo_labels(&pls, RefinementMode::TwoStepAgreement, 0.8, 0.9).unwrap().kept[0]
    }

    #[test]
    fn two_step_rule() {
        assert!(two_step(2, 2, 0.95));
        assert!(!two_step(2, 1, 0.99));
        assert!(!two_step(2, 2, 0.85));
    }

    #[test]
    fn none_keeps_everything() {
        let mut pls = PseudoLabelSet::new(vec![3, 4, 5], vec![0, 1, 0]);
        pls.kept = vec![false, true, false];
        let out = refine_pseudo_labels(&pls, RefinementMode::None, 0.9, 0.9).unwrap();
        assert_eq!(out.kept, vec![true; 3]);
        assert_eq!(out.rows, pls.rows);
        assert_eq!(out.labels, pls.labels);
    }

    #[test]
    fn missing_fields_are_errors() {
        let pls = PseudoLabelSet::new(vec![0], vec![0]);
        for mode in [
            RefinementMode::ClassifierThreshold,
            RefinementMode::PropagationThreshold,
            RefinementMode::TwoStepAgreement,
        ] {
            assert!(refine_pseudo_labels(&pls, mode, 0.5, 0.5).is_err());
        }
    }

    #[test]
    fn classifier_mode_selects_classifier_labels() {
        let pls = PseudoLabelSet::new(vec![10, 11], vec![0, 0])
            .with_classifier(vec![1, 2], vec![0.95, 0.5]);
        let out = refine_pseudo_labels(&pls, RefinementMode::ClassifierThreshold, 0.9, 0.9).unwrap();
        assert_eq!(out.selected(RefinementMode::ClassifierThreshold), (vec![10], vec![1]));
        assert_eq!(out.precision(RefinementMode::ClassifierThreshold, &[1, 0]), Some(1.0));
    }
}

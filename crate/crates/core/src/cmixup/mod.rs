//! Contrastive-mixup pipeline: an encoder trained with reconstruction,
//! same-label latent mixup plus supervised contrastive loss, and an optional
//! classifier head; graph label propagation supplies pseudo-labels after a
//! warm-up.

mod mixup;
mod propagation;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    loss, Activation, Gradients, Matrix, ModelGraph, NnError, OptimizerConfig, OptimizerState,
    RowSource, RowView, PREDICT_CHUNK,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::vime::{new_predictor, predict_with, train_predictor, Prediction, VimeConfig, VimeError};

pub use mixup::{latent_mixup, mix_rows, MixupOutput, MixupSpec};
pub use propagation::{
    certainty, conjugate_gradient, knn_graph, normalize_graph, propagate_labels, PropagationConfig,
    PropagationResult, PropagationSource, SparseGraph,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmixupError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("label propagation: {0}")]
    Propagation(String),
    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("classifier head is disabled")]
    ClassifierDisabled,
    #[error(transparent)]
    Vime(#[from] VimeError),
}

/// Optional heads on top of the encoder. Label propagation is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentFlags {
    pub classifier: bool,
    pub decoder: bool,
    pub projection: bool,
}

impl Default for ComponentFlags {
    fn default() -> Self {
        Self {
            classifier: true,
            decoder: true,
            projection: true,
        }
    }
}

impl ComponentFlags {
    /// The original architecture: decoder and projection, no classifier.
    pub fn baseline() -> Self {
        Self {
            classifier: false,
            decoder: true,
            projection: true,
        }
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.classifier {
            parts.push("classifier");
        }
        if self.decoder {
            parts.push("decoder");
        }
        if self.projection {
            parts.push("projection");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmixupConfig {
    pub flags: ComponentFlags,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub projection_dim: usize,
    pub w_recon: f64,
    pub w_supcon: f64,
    pub w_clf: f64,
    pub temperature: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub mixup: MixupSpec,
    pub propagation: PropagationConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for CmixupConfig {
    fn default() -> Self {
        Self {
            flags: ComponentFlags::default(),
            latent_dim: 32,
            encoder_hidden: vec![64],
            projection_dim: 32,
            w_recon: 1.0,
            w_supcon: 1.0,
            w_clf: 0.5,
            temperature: 0.5,
            warmup_epochs: 10,
            epochs: 20,
            batch_size: 128,
            mixup: MixupSpec::default(),
            propagation: PropagationConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl CmixupConfig {
    pub fn validate(&self) -> Result<(), CmixupError> {
        let bad = |m: String| Err(CmixupError::Config(m));
        let f = self.flags;
        if !(f.classifier || f.decoder || f.projection) {
            return bad("at least one of classifier, decoder, projection must be enabled".into());
        }
        for (on, w, name) in [
            (f.decoder, self.w_recon, "decoder/w_recon"),
            (f.projection, self.w_supcon, "projection/w_supcon"),
            (f.classifier, self.w_clf, "classifier/w_clf"),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name}: weight {w} must be non-negative"));
            }
            if on && w == 0.0 {
                return bad(format!("{name}: enabled component has zero loss weight"));
            }
        }
        if f.projection && !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if self.latent_dim == 0 || self.projection_dim == 0 || self.batch_size == 0 {
            return bad("dimensions and batch size must be positive".into());
        }
        if self.propagation.source == PropagationSource::Projection && !f.projection {
            return bad("propagation from projection needs the projection head".into());
        }
        if !(0.0..1.0).contains(&self.propagation.alpha) {
            return bad(format!("propagation alpha {} must lie in [0, 1)", self.propagation.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmixupModel {
    pub encoder: ModelGraph,
    pub projection: Option<ModelGraph>,
    pub decoder: Option<ModelGraph>,
    pub classifier: Option<ModelGraph>,
    pub flags: ComponentFlags,
}

impl CmixupModel {
    pub fn new(input_dim: usize, num_classes: usize, cfg: &CmixupConfig, seed: u64) -> Self {
        let h = cfg.latent_dim;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&cfg.encoder_hidden);
        dims.push(h);
        let f = cfg.flags;
        Self {
            encoder: ModelGraph::mlp(
                &dims,
                Activation::Relu,
                Activation::Identity,
                derive_seed(seed, stream::INIT_ENCODER),
            ),
            projection: f.projection.then(|| {
                ModelGraph::mlp(
                    &[h, h, cfg.projection_dim],
                    Activation::Relu,
                    Activation::Identity,
                    derive_seed(seed, stream::INIT_PROJECTION),
                )
            }),
            decoder: f.decoder.then(|| {
                ModelGraph::mlp(
                    &[h, input_dim],
                    Activation::Relu,
                    Activation::Identity,
                    derive_seed(seed, stream::INIT_FEATURE_DECODER),
                )
            }),
            classifier: f.classifier.then(|| {
                ModelGraph::mlp(
                    &[h, num_classes],
                    Activation::Relu,
                    Activation::Softmax,
                    derive_seed(seed, stream::INIT_CLASSIFIER),
                )
            }),
            flags: f,
        }
    }

    /// Encoder output for every row of `rows`.
    pub fn latents<S: RowSource + ?Sized>(&self, rows: &S) -> Result<Matrix, NnError> {
        self.encoder.predict_source(rows)
    }

    /// Latents used for the propagation graph.
    pub fn propagation_latents<S: RowSource + ?Sized>(
        &self,
        rows: &S,
        source: PropagationSource,
    ) -> Result<Matrix, NnError> {
        let z = self.latents(rows)?;
        match (source, &self.projection) {
            (PropagationSource::Projection, Some(p)) => {
                let idx: Vec<usize> = (0..z.rows()).collect();
                let parts = idx
                    .chunks(PREDICT_CHUNK)
                    .map(|c| p.predict(&z.select_rows(c)))
                    .collect::<Result<Vec<_>, _>>()?;
                if parts.is_empty() {
                    return Ok(Matrix::zeros(0, p.output_dim()));
                }
                Ok(Matrix::vstack(&parts.iter().collect::<Vec<_>>()))
            }
            _ => Ok(z),
        }
    }
}

/// Per-epoch diagnostics of encoder training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CmixupTrace {
    pub loss: Vec<f64>,
    /// Mixup anchors skipped for lack of a same-label partner, per epoch.
    pub skipped_anchors: Vec<usize>,
    /// Ten-bin histogram of the final propagation weights of unlabeled rows.
    pub weight_histogram: Vec<usize>,
}

fn histogram(weights: &[f64], is_labeled: &[bool]) -> Vec<usize> {
    let mut h = vec![0usize; 10];
    for (w, &l) in weights.iter().zip(is_labeled) {
        if !l {
            h[((w * 10.0) as usize).min(9)] += 1;
        }
    }
    h
}

fn run_propagation<S: RowSource + ?Sized>(
    model: &CmixupModel,
    train: &S,
    labels: &[u32],
    num_classes: usize,
    cfg: &CmixupConfig,
) -> Result<PropagationResult, CmixupError> {
    let z = model.propagation_latents(train, cfg.propagation.source)?;
    let labeled: Vec<usize> = (0..labels.len()).collect();
    propagate_labels(&z, &labeled, labels, num_classes, &cfg.propagation)
}

fn nonfinite(value: f64, epoch: usize, batch: usize) -> Result<f64, CmixupError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NnError::NonFiniteLoss(format!(
            "encoder loss is {value} at epoch {epoch}, batch {batch}"
        ))
        .into())
    }
}

/// Step 1. `train` holds the labeled rows first (`labels.len()` of them)
/// followed by the unlabeled rows. Before `warmup_epochs`, mixup and the
/// contrastive loss use labeled rows only; afterwards labels are propagated
/// once per epoch and pseudo-labeled rows join. Returns the model, the
/// propagation result from the final encoder, and diagnostics.
pub fn encoder_train<S: RowSource + ?Sized>(
    train: &S,
    labels: &[u32],
    num_classes: usize,
    cfg: &CmixupConfig,
    seed: u64,
) -> Result<(CmixupModel, PropagationResult, CmixupTrace), CmixupError> {
    cfg.validate()?;
    let n = train.n_rows();
    let nl = labels.len();
    if nl == 0 || nl > n {
        return Err(CmixupError::Config(format!("{nl} labels for {n} training rows")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= num_classes) {
        return Err(NnError::InvalidLabel {
            label: y as usize,
            classes: num_classes,
        }
        .into());
    }
    let mut model = CmixupModel::new(train.width(), num_classes, cfg, seed);
    let mut opt_enc = OptimizerState::new(cfg.optimizer, &model.encoder);
    let mut opt_proj = model.projection.as_ref().map(|m| OptimizerState::new(cfg.optimizer, m));
    let mut opt_dec = model.decoder.as_ref().map(|m| OptimizerState::new(cfg.optimizer, m));
    let mut opt_clf = model.classifier.as_ref().map(|m| OptimizerState::new(cfg.optimizer, m));
    let mut order_rng = rng_for(seed, stream::ENCODER_TRAIN);
    let mut mix_rng = rng_for(seed, stream::MIXUP);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = CmixupTrace::default();
    let mut row_labels: Vec<Option<u32>> = (0..n).map(|i| labels.get(i).copied()).collect();

    for epoch in 0..cfg.epochs {
        if epoch >= cfg.warmup_epochs {
            let prop = run_propagation(&model, train, labels, num_classes, cfg)?;
            for (i, l) in row_labels.iter_mut().enumerate().skip(nl) {
                *l = Some(prop.labels[i]);
            }
        }
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.gather(chunk);
            let efwd = model.encoder.forward(&x)?;
            let z = efwd.output();
            let mut dz = Matrix::zeros(z.rows(), z.cols());
            let mut value = 0.0;

            let mut dec_grads = None;
            if let Some(dec) = &model.decoder {
                let fwd = dec.forward(z)?;
                let rec = loss::reconstruction_mse(fwd.output(), &x)?;
                let (mut g, d) = dec.backward(&fwd, &rec.grad, true)?;
                g.scale(cfg.w_recon);
                dz.scaled_add_assign(cfg.w_recon, &d.expect("input gradient"));
                value += cfg.w_recon * rec.value;
                dec_grads = Some(g);
            }

            let mut clf_grads = None;
            if let Some(clf) = &model.classifier {
                let pos: Vec<usize> = (0..chunk.len()).filter(|&p| chunk[p] < nl).collect();
                if pos.is_empty() {
                    clf_grads = Some(Gradients::zeros_like(clf));
                } else {
                    let zl = z.select_rows(&pos);
                    let y: Vec<u32> = pos.iter().map(|&p| labels[chunk[p]]).collect();
                    let fwd = clf.forward(&zl)?;
                    let ce = loss::cross_entropy(fwd.output(), &y)?;
                    let (mut g, d) = clf.backward(&fwd, &ce.grad, true)?;
                    g.scale(cfg.w_clf);
                    let d = d.expect("input gradient");
                    for (k, &p) in pos.iter().enumerate() {
                        for (o, &v) in dz.row_mut(p).iter_mut().zip(d.row(k)) {
                            *o += cfg.w_clf * v;
                        }
                    }
                    value += cfg.w_clf * ce.value;
                    clf_grads = Some(g);
                }
            }

            let mut proj_grads = None;
            if let Some(proj) = &model.projection {
                let batch_labels: Vec<Option<u32>> = chunk.iter().map(|&i| row_labels[i]).collect();
                let mix = latent_mixup(z, &batch_labels, &cfg.mixup, &mut mix_rng)?;
                skipped += mix.skipped;
                let orig: Vec<usize> = (0..chunk.len()).filter(|&p| batch_labels[p].is_some()).collect();
                if mix.anchors.is_empty() {
                    proj_grads = Some(Gradients::zeros_like(proj));
                } else {
                    let zo = z.select_rows(&orig);
                    let stacked = Matrix::vstack(&[&zo, &mix.mixed]);
                    let mut sl: Vec<u32> = orig.iter().map(|&p| batch_labels[p].unwrap()).collect();
                    sl.extend_from_slice(&mix.labels);
                    let fwd = proj.forward(&stacked)?;
                    let (pz, norms) = loss::l2_normalize_rows(fwd.output());
                    let sc = loss::supcon(&pz, &sl, cfg.temperature)?;
                    let d_out = loss::l2_normalize_backward(&pz, &norms, &sc.grad);
                    let (mut g, d) = proj.backward(&fwd, &d_out, true)?;
                    g.scale(cfg.w_supcon);
                    let d = d.expect("input gradient");
                    let (d_orig, d_mixed) = d.split_rows(orig.len());
                    for (k, &p) in orig.iter().enumerate() {
                        for (o, &v) in dz.row_mut(p).iter_mut().zip(d_orig.row(k)) {
                            *o += cfg.w_supcon * v;
                        }
                    }
                    dz.scaled_add_assign(cfg.w_supcon, &mix.backward(&d_mixed, chunk.len()));
                    value += cfg.w_supcon * sc.value;
                    proj_grads = Some(g);
                }
            }

            nonfinite(value, epoch, b)?;
            let (eg, _) = model.encoder.backward(&efwd, &dz, false)?;
            opt_enc.step(&mut model.encoder, &eg)?;
            if let (Some(m), Some(o), Some(g)) = (model.decoder.as_mut(), opt_dec.as_mut(), dec_grads) {
                o.step(m, &g)?;
            }
            if let (Some(m), Some(o), Some(g)) = (model.classifier.as_mut(), opt_clf.as_mut(), clf_grads) {
                o.step(m, &g)?;
            }
            if let (Some(m), Some(o), Some(g)) = (model.projection.as_mut(), opt_proj.as_mut(), proj_grads) {
                o.step(m, &g)?;
            }
            total += value;
            batches += 1;
        }
        trace.loss.push(total / batches.max(1) as f64);
        trace.skipped_anchors.push(skipped);
    }
    let prop = run_propagation(&model, train, labels, num_classes, cfg)?;
    trace.weight_histogram = histogram(&prop.weights, &prop.is_labeled);
    Ok((model, prop, trace))
}

/// Class predictions of the classifier head.
pub fn classify<S: RowSource + ?Sized>(model: &CmixupModel, rows: &S) -> Result<Prediction, CmixupError> {
    let clf = model.classifier.as_ref().ok_or(CmixupError::ClassifierDisabled)?;
    Ok(predict_with(Some(&model.encoder), clf, rows)?)
}

/// Both steps of a contrastive-mixup run.
#[derive(Debug, Clone, PartialEq)]
pub struct CmixupFit {
    pub model: CmixupModel,
    /// Step-2 predictor on top of the frozen encoder.
    pub predictor: ModelGraph,
    /// Propagation over labeled rows followed by unlabeled rows.
    pub propagation: PropagationResult,
    pub trace: CmixupTrace,
    pub predictor_loss: Vec<f64>,
}

impl CmixupFit {
    pub fn predict<S: RowSource + ?Sized>(&self, rows: &S) -> Result<Prediction, CmixupError> {
        Ok(predict_with(Some(&self.model.encoder), &self.predictor, rows)?)
    }
}

/// Step 1 on `train` (labeled rows first), then step 2: a predictor with
/// consistency loss trained on the frozen encoder with `step2`'s settings
/// (its pretext fields are ignored).
pub fn train_cmixup<S: RowSource + ?Sized>(
    train: &S,
    labels: &[u32],
    num_classes: usize,
    cfg: &CmixupConfig,
    step2: &VimeConfig,
    seed: u64,
) -> Result<CmixupFit, CmixupError> {
    let (model, propagation, trace) = encoder_train(train, labels, num_classes, cfg, seed)?;
    let nl = labels.len();
    let labeled = RowView::new(train, (0..nl).collect());
    let unlabeled = RowView::new(train, (nl..train.n_rows()).collect());
    let predictor = new_predictor(cfg.latent_dim, num_classes, &step2.predictor_hidden, seed);
    let step2 = VimeConfig {
        fine_tune_encoder: false,
        ..step2.clone()
    };
    let fit = train_predictor(
        predictor,
        Some(model.encoder.clone()),
        &labeled,
        labels,
        &unlabeled,
        &step2,
        seed,
    )?;
    Ok(CmixupFit {
        model,
        predictor: fit.predictor,
        propagation,
        trace,
        predictor_loss: fit.loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng as _;

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<u32>) {
        let mut rng = rng_for(seed, 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = (i % 2) as u32;
            let s = if c == 0 { 1.0 } else { -1.0 };
            rows.push(vec![
                s + 0.2 * rng.random::<f64>(),
                0.2 * rng.random::<f64>(),
                -s + 0.2 * rng.random::<f64>(),
            ]);
            y.push(c);
        }
        (Matrix::from_rows(&rows), y)
    }

    fn cfg() -> CmixupConfig {
        CmixupConfig {
            latent_dim: 8,
            encoder_hidden: vec![],
            projection_dim: 8,
            warmup_epochs: 2,
            epochs: 4,
            batch_size: 16,
            propagation: PropagationConfig {
                k: 5,
                ..PropagationConfig::default()
            },
            ..CmixupConfig::default()
        }
    }

    #[test]
    fn trains_and_is_reproducible() {
        let (x, y) = blobs(60, 1);
        let labels = &y[..10];
        let a = encoder_train(&x, labels, 2, &cfg(), 3).unwrap();
        let b = encoder_train(&x, labels, 2, &cfg(), 3).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
        let correct = (10..60).filter(|&i| a.1.labels[i] == y[i]).count();
        assert!(correct >= 45, "{correct}");
        assert!(a.1.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        assert!(a.1.weights[..10].iter().all(|&w| w == 1.0));
        let p = classify(&a.0, &x).unwrap();
        assert_eq!(p.labels.len(), 60);
    }

    #[test]
    fn full_pipeline_predicts() {
        let (x, y) = blobs(60, 5);
        let step2 = VimeConfig {
            predictor_hidden: vec![8],
            semisup_epochs: 5,
            batch_size: 8,
            unlabeled_batch_size: 8,
            ..VimeConfig::default()
        };
        let fit = train_cmixup(&x, &y[..10], 2, &cfg(), &step2, 1).unwrap();
        let p = fit.predict(&x).unwrap();
        assert_eq!(p.labels.len(), 60);
        assert_eq!(fit.predictor_loss.len(), 5);
    }

    #[test]
    fn decoder_only_is_plain_autoencoder() {
        let (x, y) = blobs(40, 2);
        let c = CmixupConfig {
            flags: ComponentFlags {
                classifier: false,
                decoder: true,
                projection: false,
            },
            w_supcon: 0.0,
            ..cfg()
        };
        let (m, _, trace) = encoder_train(&x, &y[..8], 2, &c, 4).unwrap();
        assert!(m.projection.is_none() && m.classifier.is_none());
        assert!(trace.loss.last().unwrap() < &trace.loss[0]);
        assert_eq!(classify(&m, &x).unwrap_err(), CmixupError::ClassifierDisabled);
    }

    #[test]
    fn flag_validation() {
        let none = CmixupConfig {
            flags: ComponentFlags {
                classifier: false,
                decoder: false,
                projection: false,
            },
            ..cfg()
        };
        assert!(none.validate().is_err());
        let zero = CmixupConfig {
            w_clf: 0.0,
            ..cfg()
        };
        assert!(zero.validate().is_err());
        assert_eq!(ComponentFlags::baseline().label(), "decoder+projection");
    }
}

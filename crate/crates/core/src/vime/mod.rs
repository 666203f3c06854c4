//! Two-step self-/semi-supervised pipeline: a denoising encoder pretrained on
//! corrupted inputs (feature reconstruction plus mask estimation), then a
//! predictor trained with cross-entropy and a consistency penalty across
//! corrupted copies of unlabeled rows.

mod corrupt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    labels_and_confidences, loss, Activation, Matrix, ModelGraph, NnError, OptimizerConfig,
    OptimizerState, RowSource, TrainConfig, PREDICT_CHUNK,
};
use crate::rng::{derive_seed, rng_for, stream, Rng};

pub use corrupt::{corrupt, corrupt_from_pool, CorruptionScope, CorruptionSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VimeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VimeConfig {
    /// Train an encoder with the pretext task; when off, the predictor reads
    /// the encoded features directly.
    pub pretext: bool,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub p_m: f64,
    pub corruption_scope: CorruptionScope,
    pub alpha_mask: f64,
    /// Weight of the consistency term; 0 disables it.
    pub beta: f64,
    pub k_copies: usize,
    pub fine_tune_encoder: bool,
    pub pretext_epochs: usize,
    pub semisup_epochs: usize,
    pub batch_size: usize,
    pub unlabeled_batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for VimeConfig {
    fn default() -> Self {
        Self {
            pretext: true,
            latent_dim: 32,
            encoder_hidden: Vec::new(),
            predictor_hidden: vec![256, 128],
            p_m: 0.3,
            corruption_scope: CorruptionScope::Batch,
            alpha_mask: 1.0,
            beta: 1.0,
            k_copies: 3,
            fine_tune_encoder: false,
            pretext_epochs: 10,
            semisup_epochs: 30,
            batch_size: 128,
            unlabeled_batch_size: 128,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl VimeConfig {
    pub fn validate(&self) -> Result<(), VimeError> {
        CorruptionSpec::new(self.p_m).validate()?;
        let bad = |m: String| Err(VimeError::Config(m));
        if self.batch_size == 0 || self.unlabeled_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.pretext && self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if !(self.alpha_mask.is_finite() && self.alpha_mask >= 0.0) {
            return bad(format!("alpha_mask {} must be non-negative", self.alpha_mask));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta {} must be non-negative", self.beta));
        }
        if self.beta > 0.0 && self.k_copies < 2 {
            return bad(format!("consistency needs k_copies >= 2, got {}", self.k_copies));
        }
        if self.encoder_hidden.contains(&0) || self.predictor_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Supervised training settings equivalent to step 2 without unlabeled data.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.semisup_epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }

    fn corruption(&self) -> CorruptionSpec {
        CorruptionSpec {
            p_m: self.p_m,
            scope: self.corruption_scope,
        }
    }
}

/// Predictor MLP `in → predictor_hidden → C` with the seed-derived init used
/// everywhere a fresh predictor is needed.
pub fn new_predictor(input_dim: usize, num_classes: usize, hidden: &[usize], seed: u64) -> ModelGraph {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(num_classes);
    ModelGraph::mlp(
        &dims,
        Activation::Relu,
        Activation::Softmax,
        derive_seed(seed, stream::INIT_PREDICTOR),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct VimeModel {
    pub encoder: Option<ModelGraph>,
    pub feature_decoder: Option<ModelGraph>,
    pub mask_decoder: Option<ModelGraph>,
    pub predictor: ModelGraph,
}

impl VimeModel {
    pub fn new(input_dim: usize, num_classes: usize, cfg: &VimeConfig, seed: u64) -> Self {
        if !cfg.pretext {
            return Self {
                encoder: None,
                feature_decoder: None,
                mask_decoder: None,
                predictor: new_predictor(input_dim, num_classes, &cfg.predictor_hidden, seed),
            };
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&cfg.encoder_hidden);
        dims.push(cfg.latent_dim);
        let h = cfg.latent_dim;
        Self {
            encoder: Some(ModelGraph::mlp(
                &dims,
                Activation::Relu,
                Activation::Relu,
                derive_seed(seed, stream::INIT_ENCODER),
            )),
            feature_decoder: Some(ModelGraph::mlp(
                &[h, input_dim],
                Activation::Relu,
                Activation::Identity,
                derive_seed(seed, stream::INIT_FEATURE_DECODER),
            )),
            mask_decoder: Some(ModelGraph::mlp(
                &[h, input_dim],
                Activation::Relu,
                Activation::Identity,
                derive_seed(seed, stream::INIT_MASK_DECODER),
            )),
            predictor: new_predictor(h, num_classes, &cfg.predictor_hidden, seed),
        }
    }

    /// Encoder output (or the input itself when there is no encoder).
    pub fn represent(&self, x: &Matrix) -> Result<Matrix, NnError> {
        match &self.encoder {
            Some(e) => e.predict(x),
            None => Ok(x.clone()),
        }
    }
}

/// Labels, confidences and full class probabilities for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u32>,
    pub confidences: Vec<f64>,
    pub probs: Matrix,
}

impl Prediction {
    pub fn from_probs(probs: Matrix) -> Self {
        let (labels, confidences) = labels_and_confidences(&probs);
        Self {
            labels,
            confidences,
            probs,
        }
    }
}

/// Runs `encoder` (if any) then `predictor` over every row of `rows`.
pub fn predict_with<S: RowSource + ?Sized>(
    encoder: Option<&ModelGraph>,
    predictor: &ModelGraph,
    rows: &S,
) -> Result<Prediction, NnError> {
    let idx: Vec<usize> = (0..rows.n_rows()).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let x = rows.gather(chunk);
        let h = match encoder {
            Some(e) => e.predict(&x)?,
            None => x,
        };
        parts.push(predictor.predict(&h)?);
    }
    let probs = if parts.is_empty() {
        Matrix::zeros(0, predictor.output_dim())
    } else {
        Matrix::vstack(&parts.iter().collect::<Vec<_>>())
    };
    Ok(Prediction::from_probs(probs))
}

pub fn predict<S: RowSource + ?Sized>(model: &VimeModel, rows: &S) -> Result<Prediction, NnError> {
    predict_with(model.encoder.as_ref(), &model.predictor, rows)
}

fn finite(value: f64, what: &str, epoch: usize, batch: usize) -> Result<f64, NnError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NnError::NonFiniteLoss(format!(
            "{what} loss is {value} at epoch {epoch}, batch {batch}"
        )))
    }
}

fn corrupt_batch<S: RowSource + ?Sized>(
    x: &Matrix,
    pool: &S,
    spec: CorruptionSpec,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix), VimeError> {
    match spec.scope {
        CorruptionScope::Batch => corrupt(x, spec.p_m, rng),
        CorruptionScope::Dataset => corrupt_from_pool(x, pool, spec.p_m, rng),
    }
}

/// Pretext training of encoder and both decoders on `rows`:
/// reconstruction MSE plus `alpha_mask` times the mask BCE, on corrupted
/// inputs. Returns the model and the mean loss per epoch.
pub fn pretext_train<S: RowSource + ?Sized>(
    mut model: VimeModel,
    rows: &S,
    cfg: &VimeConfig,
    seed: u64,
) -> Result<(VimeModel, Vec<f64>), VimeError> {
    cfg.validate()?;
    let (Some(mut enc), Some(mut fdec), Some(mut mdec)) = (
        model.encoder.take(),
        model.feature_decoder.take(),
        model.mask_decoder.take(),
    ) else {
        return Err(VimeError::Config("pretext training needs an encoder".into()));
    };
    if rows.n_rows() == 0 {
        return Err(VimeError::Config("no rows for pretext training".into()));
    }
    let spec = cfg.corruption();
    let mut rng = rng_for(seed, stream::PRETEXT);
    let mut enc_opt = OptimizerState::new(cfg.optimizer, &enc);
    let mut f_opt = OptimizerState::new(cfg.optimizer, &fdec);
    let mut m_opt = OptimizerState::new(cfg.optimizer, &mdec);
    let mut order: Vec<usize> = (0..rows.n_rows()).collect();
    let mut curve = Vec::with_capacity(cfg.pretext_epochs);
    for epoch in 0..cfg.pretext_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // A trailing single row cannot be corrupted within its batch.
            if chunk.len() < 2 && spec.p_m > 0.0 && spec.scope == CorruptionScope::Batch {
                continue;
            }
            let x = rows.gather(chunk);
            let (xt, mask) = corrupt_batch(&x, rows, spec, &mut rng)?;
            let efwd = enc.forward(&xt)?;
            let h = efwd.output();
            let ffwd = fdec.forward(h)?;
            let rec = loss::reconstruction_mse(ffwd.output(), &x)?;
            let (fg, dh) = fdec.backward(&ffwd, &rec.grad, true)?;
            let mut dh = dh.expect("input gradient");
            let mut value = rec.value;
            let mut mask_grads = None;
            if cfg.alpha_mask > 0.0 {
                let mfwd = mdec.forward(h)?;
                let bce = loss::mask_bce(mfwd.output(), &mask)?;
                let (mut mg, dh2) = mdec.backward(&mfwd, &bce.grad, true)?;
                mg.scale(cfg.alpha_mask);
                dh.scaled_add_assign(cfg.alpha_mask, &dh2.expect("input gradient"));
                value += cfg.alpha_mask * bce.value;
                mask_grads = Some(mg);
            }
            finite(value, "pretext", epoch, b)?;
            let (eg, _) = enc.backward(&efwd, &dh, false)?;
            enc_opt.step(&mut enc, &eg)?;
            f_opt.step(&mut fdec, &fg)?;
            if let Some(mg) = mask_grads {
                m_opt.step(&mut mdec, &mg)?;
            }
            total += value;
            batches += 1;
        }
        curve.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }
    model.encoder = Some(enc);
    model.feature_decoder = Some(fdec);
    model.mask_decoder = Some(mdec);
    Ok((model, curve))
}

/// Result of step-2 training.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorFit {
    pub predictor: ModelGraph,
    /// The encoder, updated only when fine-tuning.
    pub encoder: Option<ModelGraph>,
    pub loss_curve: Vec<f64>,
}

/// Step 2: cross-entropy on labeled rows plus `beta` times the consistency
/// loss over `k_copies` corrupted copies of random unlabeled batches. The
/// predictor reads `encoder` output when an encoder is given (frozen unless
/// `fine_tune_encoder`).
///
/// With `beta = 0` (or no unlabeled rows) and no encoder this performs
/// exactly the same operations as [`crate::nn::fit_classifier`].
pub fn train_predictor<L, U>(
    mut predictor: ModelGraph,
    mut encoder: Option<ModelGraph>,
    labeled: &L,
    labels: &[u32],
    unlabeled: &U,
    cfg: &VimeConfig,
    seed: u64,
) -> Result<PredictorFit, VimeError>
where
    L: RowSource + ?Sized,
    U: RowSource + ?Sized,
{
    cfg.validate()?;
    if labeled.n_rows() != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "predictor labels".into(),
            expected: labeled.n_rows(),
            got: labels.len(),
        }
        .into());
    }
    if labeled.n_rows() == 0 {
        return Err(NnError::InvalidArgument("no training rows".into()).into());
    }
    let fine_tune = cfg.fine_tune_encoder && encoder.is_some();
    let consistency = cfg.beta > 0.0 && unlabeled.n_rows() > 0;
    let spec = cfg.corruption();
    let ub = cfg.unlabeled_batch_size.min(unlabeled.n_rows());
    if consistency && spec.p_m > 0.0 && spec.scope == CorruptionScope::Batch && ub < 2 {
        return Err(VimeError::Config("need at least 2 unlabeled rows for corruption".into()));
    }

    let mut opt = OptimizerState::new(cfg.optimizer, &predictor);
    let mut enc_opt = match (&encoder, fine_tune) {
        (Some(e), true) => Some(OptimizerState::new(cfg.optimizer, e)),
        _ => None,
    };
    let mut order_rng = rng_for(seed, stream::LABELED_ORDER);
    let mut u_rng = rng_for(seed, stream::UNLABELED_DRAW);
    let mut order: Vec<usize> = (0..labeled.n_rows()).collect();
    let mut curve = Vec::with_capacity(cfg.semisup_epochs);
    for epoch in 0..cfg.semisup_epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let x = labeled.gather(chunk);
            let y: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            let efwd = match &encoder {
                Some(e) => Some(e.forward(&x)?),
                None => None,
            };
            let h = efwd.as_ref().map_or(&x, |f| f.output());
            let fwd = predictor.forward(h)?;
            let ce = loss::cross_entropy(fwd.output(), &y)?;
            let mut value = finite(ce.value, "cross-entropy", epoch, b)?;
            let (mut grads, dh) = predictor.backward(&fwd, &ce.grad, fine_tune)?;
            let mut enc_grads = match (&encoder, &efwd, dh) {
                (Some(e), Some(f), Some(dh)) => Some(e.backward(f, &dh, false)?.0),
                _ => None,
            };

            if consistency {
                let idx: Vec<usize> = (0..ub).map(|_| u_rng.random_range(0..unlabeled.n_rows())).collect();
                let xu = unlabeled.gather(&idx);
                let mut copies = Vec::with_capacity(cfg.k_copies);
                for _ in 0..cfg.k_copies {
                    copies.push(corrupt_batch(&xu, unlabeled, spec, &mut u_rng)?.0);
                }
                let stacked = Matrix::vstack(&copies.iter().collect::<Vec<_>>());
                let uefwd = match &encoder {
                    Some(e) => Some(e.forward(&stacked)?),
                    None => None,
                };
                let uh = uefwd.as_ref().map_or(&stacked, |f| f.output());
                let ufwd = predictor.forward(uh)?;
                let out = ufwd.output();
                let sets: Vec<Matrix> = (0..cfg.k_copies)
                    .map(|k| out.select_rows(&(k * ub..(k + 1) * ub).collect::<Vec<_>>()))
                    .collect();
                let (cons, cgrads) = loss::consistency(&sets)?;
                value += cfg.beta * finite(cons, "consistency", epoch, b)?;
                let d_out = Matrix::vstack(&cgrads.iter().collect::<Vec<_>>());
                let (mut pg, udh) = predictor.backward(&ufwd, &d_out, fine_tune)?;
                pg.scale(cfg.beta);
                grads.add_assign(&pg);
                if let (Some(e), Some(f), Some(udh), Some(eg)) = (&encoder, &uefwd, udh, enc_grads.as_mut()) {
                    let (mut g, _) = e.backward(f, &udh, false)?;
                    g.scale(cfg.beta);
                    eg.add_assign(&g);
                }
            }

            opt.step(&mut predictor, &grads)?;
            if let (Some(e), Some(o), Some(g)) = (encoder.as_mut(), enc_opt.as_mut(), enc_grads.as_ref()) {
                o.step(e, g)?;
            }
            total += value;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(PredictorFit {
        predictor,
        encoder,
        loss_curve: curve,
    })
}

/// Step 2 on a [`VimeModel`]: trains its predictor on the model's encoder.
pub fn semisup_train<L, U>(
    model: VimeModel,
    labeled: &L,
    labels: &[u32],
    unlabeled: &U,
    cfg: &VimeConfig,
    seed: u64,
) -> Result<(VimeModel, Vec<f64>), VimeError>
where
    L: RowSource + ?Sized,
    U: RowSource + ?Sized,
{
    let VimeModel {
        encoder,
        feature_decoder,
        mask_decoder,
        predictor,
    } = model;
    let fit = train_predictor(predictor, encoder, labeled, labels, unlabeled, cfg, seed)?;
    Ok((
        VimeModel {
            encoder: fit.encoder,
            feature_decoder,
            mask_decoder,
            predictor: fit.predictor,
        },
        fit.loss_curve,
    ))
}

/// Loss curves of a full two-step training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VimeTrace {
    pub pretext_loss: Vec<f64>,
    pub semisup_loss: Vec<f64>,
}

/// Builds a fresh model and runs both steps. The pretext task uses the
/// unlabeled rows (labeled rows when there are none).
pub fn train_vime<L, U>(
    labeled: &L,
    labels: &[u32],
    unlabeled: &U,
    num_classes: usize,
    cfg: &VimeConfig,
    seed: u64,
) -> Result<(VimeModel, VimeTrace), VimeError>
where
    L: RowSource + ?Sized,
    U: RowSource + ?Sized,
{
    cfg.validate()?;
    let mut model = VimeModel::new(labeled.width(), num_classes, cfg, seed);
    let mut trace = VimeTrace::default();
    if cfg.pretext {
        let (m, curve) = if unlabeled.n_rows() > 0 {
            pretext_train(model, unlabeled, cfg, seed)?
        } else {
            pretext_train(model, labeled, cfg, seed)?
        };
        model = m;
        trace.pretext_loss = curve;
    }
    let (model, curve) = semisup_train(model, labeled, labels, unlabeled, cfg, seed)?;
    trace.semisup_loss = curve;
    Ok((model, trace))
}

/// Mean reconstruction MSE of the uncorrupted rows through encoder and
/// feature decoder.
pub fn reconstruction_error<S: RowSource + ?Sized>(model: &VimeModel, rows: &S) -> Result<f64, VimeError> {
    let (Some(enc), Some(dec)) = (&model.encoder, &model.feature_decoder) else {
        return Err(VimeError::Config("model has no autoencoder".into()));
    };
    let idx: Vec<usize> = (0..rows.n_rows()).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(PREDICT_CHUNK) {
        let x = rows.gather(chunk);
        let r = dec.predict(&enc.predict(&x)?)?;
        sum += loss::reconstruction_mse(&r, &x)?.value * chunk.len() as f64;
    }
    Ok(sum / rows.n_rows().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fit_classifier;

    fn toy(n: usize, seed: u64) -> (Matrix, Vec<u32>) {
        let mut rng = rng_for(seed, 99);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random_range(0..3u32);
            let row: Vec<f64> = (0..6)
                .map(|j| if j as u32 % 3 == y { 1.0 } else { 0.0 } + 0.3 * rng.random::<f64>())
                .collect();
            rows.push(row);
            labels.push(y);
        }
        (Matrix::from_rows(&rows), labels)
    }

    fn small_cfg() -> VimeConfig {
        VimeConfig {
            latent_dim: 8,
            predictor_hidden: vec![16],
            pretext_epochs: 5,
            semisup_epochs: 5,
            batch_size: 16,
            unlabeled_batch_size: 16,
            ..VimeConfig::default()
        }
    }

    #[test]
    fn all_off_matches_supervised() {
        let (x, y) = toy(60, 1);
        let (u, _) = toy(40, 2);
        let cfg = VimeConfig {
            pretext: false,
            beta: 0.0,
            p_m: 0.0,
            ..small_cfg()
        };
        let (model, _) = train_vime(&x, &y, &u, 3, &cfg, 7).unwrap();
        let base = new_predictor(6, 3, &cfg.predictor_hidden, 7);
        let (sup, _) = fit_classifier(base, &x, &y, &cfg.train_config(), 7).unwrap();
        assert_eq!(model.predictor, sup);
    }

    #[test]
    fn zero_mask_weight_leaves_mask_decoder() {
        let (u, _) = toy(50, 3);
        let cfg = VimeConfig {
            alpha_mask: 0.0,
            ..small_cfg()
        };
        let model = VimeModel::new(6, 3, &cfg, 4);
        let before = model.mask_decoder.clone();
        let (trained, _) = pretext_train(model.clone(), &u, &cfg, 4).unwrap();
        assert_eq!(trained.mask_decoder, before);
        assert_ne!(trained.encoder, model.encoder);
    }

    #[test]
    fn undistorted_copies_have_zero_consistency() {
        let (x, y) = toy(30, 5);
        let (u, _) = toy(30, 6);
        let cfg = VimeConfig {
            p_m: 0.0,
            k_copies: 2,
            beta: 1.0,
            ..small_cfg()
        };
        let model = VimeModel::new(6, 3, &cfg, 8);
        let with = semisup_train(model.clone(), &x, &y, &u, &cfg, 8).unwrap();
        let without = semisup_train(model, &x, &y, &u, &VimeConfig { beta: 0.0, ..cfg }, 8).unwrap();
        // Identical copies give a zero consistency gradient, so only the
        // (identical) cross-entropy path moves the predictor.
        assert_eq!(with.1, without.1);
        assert_eq!(with.0.predictor, without.0.predictor);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (x, y) = toy(40, 9);
        let (u, _) = toy(40, 10);
        let a = train_vime(&x, &y, &u, 3, &small_cfg(), 11).unwrap();
        let b = train_vime(&x, &y, &u, 3, &small_cfg(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_logits_give_uniform_confidence() {
        let layer = crate::nn::Dense::new(Matrix::zeros(2, 3), vec![0.0; 3], Activation::Softmax);
        let predictor = ModelGraph::from_layers(vec![layer], 0).unwrap();
        let p = predict_with(None, &predictor, &Matrix::filled(4, 2, 1.0)).unwrap();
        assert!(p.labels.iter().all(|&l| l == 0));
        assert!(p.confidences.iter().all(|&c| c == 1.0 / 3.0));
    }
}

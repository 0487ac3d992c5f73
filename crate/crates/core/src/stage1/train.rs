//! Mini-batch SGD over the prompt context.

use log::{debug, info};
use ndarray::{Array2, ArrayView2};

use crate::concept_bank::ConceptBank;
use crate::data::{derive_concept_targets, AccessLog, ConceptTarget, ImageSample, LabelSpace};
use crate::encoders::{
    encode_concepts, ConceptFeatures, ConceptTokens, EncodeMode, EncoderBundle, PromptContext,
};
use crate::rng::SeededRng;

use super::{bce_with_grad, encode_images, learning_rate, score_matrix, Stage1Error, TrainConfig};

#[derive(Debug, Clone)]
pub struct TrainState {
    pub context: PromptContext,
    pub epoch: usize,
    pub best_val_metric: f64,
    /// Batch loss of every optimizer step, in order.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the last epoch.
    pub state: TrainState,
    /// Context with the lowest validation BCE (training BCE when there is no
    /// validation split).
    pub best_context: PromptContext,
    pub best_epoch: usize,
    pub epoch_train_loss: Vec<f64>,
    pub val_history: Vec<f64>,
    pub lr_history: Vec<f64>,
    pub encoder_fingerprint: String,
}

/// SGD with classical momentum: `v = mu v + g + wd w; w -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Array2<f64>,
}

impl Sgd {
    pub fn new(shape: (usize, usize), momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Array2::zeros(shape),
        }
    }

    pub fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.velocity *= self.momentum;
        self.velocity += grad;
        if self.weight_decay > 0.0 {
            self.velocity.scaled_add(self.weight_decay, params);
        }
        params.scaled_add(-lr, &self.velocity);
    }
}

pub(crate) fn targets_matrix(targets: &[ConceptTarget], rows: &[usize], e: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), e));
    for (r, &i) in rows.iter().enumerate() {
        for (j, &t) in targets[i].targets.iter().enumerate() {
            if t {
                out[[r, j]] = 1.0;
            }
        }
    }
    out
}

/// Gradient w.r.t. the context given `dL/dS` for a batch of image features.
pub fn context_grad_from_scores(
    bundle: &EncoderBundle,
    context: &PromptContext,
    tokens: &ConceptTokens,
    concept_features: &ConceptFeatures,
    images: ArrayView2<f64>,
    grad_scores: ArrayView2<f64>,
) -> Array2<f64> {
    // S = tau F G^T  =>  dL/dG = tau dS^T F
    let grad_features = grad_scores.t().dot(&images) * bundle.logit_scale;
    concept_features.context_gradient(bundle, context, tokens, grad_features.view())
}

fn mean_bce(
    bundle: &EncoderBundle,
    context: &PromptContext,
    tokens: &ConceptTokens,
    images: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<f64, Stage1Error> {
    let feats = encode_concepts(bundle, context, tokens)?;
    let scores = score_matrix(bundle.logit_scale, images.view(), feats.features.view());
    Ok(bce_with_grad(scores.view(), targets.view()).0)
}

pub fn train(
    bundle: &EncoderBundle,
    bank: &ConceptBank,
    space: &LabelSpace,
    train_pool: &[ImageSample],
    val_pool: &[ImageSample],
    config: &TrainConfig,
    access: Option<&AccessLog>,
) -> Result<TrainOutcome, Stage1Error> {
    config.validate()?;
    if train_pool.is_empty() {
        return Err(Stage1Error::EmptyTrainPool);
    }
    let encoder_fingerprint = bundle.fingerprint();
    let e = space.num_concepts();
    let train_targets = derive_concept_targets(train_pool, bank, space)?;
    let val_targets = derive_concept_targets(val_pool, bank, space)?;
    if let Some(log) = access {
        log.record_all(
            "stage1/train",
            train_pool.iter().map(|s| s.image_id.as_str()),
        );
        log.record_all("stage1/val", val_pool.iter().map(|s| s.image_id.as_str()));
    }
    let tokens = ConceptTokens::new(bundle, &space.concept_ids)?;
    let mut init_rng = SeededRng::for_label(config.seed, "stage1/context-init");
    let mut context = PromptContext::random(
        config.num_tokens,
        bundle.token_dim(),
        config.position,
        config.init_std,
        &mut init_rng,
    );

    let augment = config.augment && bundle.image.augments();
    let eval_train = if augment {
        None
    } else {
        Some(encode_images(
            bundle,
            train_pool,
            EncodeMode::Eval,
            config.seed,
        )?)
    };
    let val_images = encode_images(bundle, val_pool, EncodeMode::Eval, config.seed)?;
    let all_val: Vec<usize> = (0..val_pool.len()).collect();
    let val_matrix = targets_matrix(&val_targets, &all_val, e);

    let mut sgd = Sgd::new(context.vectors.dim(), config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..train_pool.len()).collect();
    let mut loss_history = Vec::new();
    let mut epoch_train_loss = Vec::with_capacity(config.epochs);
    let mut val_history = Vec::with_capacity(config.epochs);
    let mut lr_history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, context.clone());

    for epoch in 1..=config.epochs {
        let lr = learning_rate(
            config.schedule,
            config.lr,
            epoch,
            config.warmup_epochs,
            config.epochs,
        );
        lr_history.push(lr);
        let mut shuffle_rng = SeededRng::for_label(config.seed, &format!("stage1/shuffle/{epoch}"));
        shuffle_rng.shuffle(&mut order);
        let mut aug_rng = SeededRng::for_label(config.seed, &format!("stage1/augment/{epoch}"));
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let images = match &eval_train {
                Some(all) => ndarray::stack(
                    ndarray::Axis(0),
                    &batch.iter().map(|&i| all.row(i)).collect::<Vec<_>>(),
                )
                .expect("uniform feature dims"),
                None => {
                    let mut m = Array2::zeros((batch.len(), bundle.dim()));
                    for (r, &i) in batch.iter().enumerate() {
                        let f = bundle.encode_image(
                            &train_pool[i].image_ref,
                            EncodeMode::Train,
                            &mut aug_rng,
                        )?;
                        m.row_mut(r).assign(&f.values);
                    }
                    m
                }
            };
            let targets = targets_matrix(&train_targets, batch, e);
            let feats = encode_concepts(bundle, &context, &tokens)?;
            let scores = score_matrix(bundle.logit_scale, images.view(), feats.features.view());
            let (loss, grad_scores) = bce_with_grad(scores.view(), targets.view());
            if !loss.is_finite() || grad_scores.iter().any(|g| !g.is_finite()) {
                return Err(Stage1Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    lr,
                    images: batch
                        .iter()
                        .map(|&i| train_pool[i].image_id.as_str())
                        .collect::<Vec<_>>()
                        .join(","),
                });
            }
            let grad = context_grad_from_scores(
                bundle,
                &context,
                &tokens,
                &feats,
                images.view(),
                grad_scores.view(),
            );
            sgd.step(&mut context.vectors, &grad, lr);
            loss_history.push(loss);
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen as f64;
        epoch_train_loss.push(train_loss);
        let metric = if val_pool.is_empty() {
            train_loss
        } else {
            let v = mean_bce(bundle, &context, &tokens, &val_images, &val_matrix)?;
            val_history.push(v);
            v
        };
        if metric < best.0 {
            best = (metric, epoch, context.clone());
        }
        debug!("stage1 epoch {epoch}: lr {lr:.3e} train {train_loss:.5} select {metric:.5}");
    }
    info!(
        "stage1 finished: final train BCE {:.5}, best epoch {} ({:.5})",
        epoch_train_loss.last().copied().unwrap_or(f64::NAN),
        best.1,
        best.0
    );
    Ok(TrainOutcome {
        state: TrainState {
            context,
            epoch: config.epochs,
            best_val_metric: best.0,
            loss_history,
        },
        best_context: best.2,
        best_epoch: best.1,
        epoch_train_loss,
        val_history,
        lr_history,
        encoder_fingerprint,
    })
}

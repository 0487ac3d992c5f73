//! Joint training of the prompt context and an MLP head: disease loss plus
//! the concept BCE as an auxiliary term.

use ndarray::Array2;

use crate::concept_bank::ConceptBank;
use crate::data::{derive_concept_targets, AccessLog, ImageSample, LabelSpace};
use crate::encoders::{encode_concepts, ConceptTokens, EncodeMode, EncoderBundle, PromptContext};
use crate::rng::SeededRng;
use crate::stage1::{
    bce_with_grad, context_grad_from_scores, encode_images, learning_rate, score_matrix, sigmoid,
    targets_matrix, ConceptLogits, Sgd, TrainConfig,
};

use super::{
    disease_targets, Adam, InputKind, Mlp, ModelParams, Stage2Error, Stage2Hyper, Stage2Kind,
    Stage2Model, TaskMode,
};

pub struct EndToEndOutcome {
    pub context: PromptContext,
    pub model: Stage2Model,
    pub loss_history: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_end_to_end(
    bundle: &EncoderBundle,
    bank: &ConceptBank,
    space: &LabelSpace,
    train_pool: &[ImageSample],
    config: &TrainConfig,
    hyper: &Stage2Hyper,
    mode: TaskMode,
    concept_weight: f64,
    access: Option<&AccessLog>,
) -> Result<EndToEndOutcome, Stage2Error> {
    config.validate()?;
    if train_pool.is_empty() {
        return Err(Stage2Error::NoTrainingData);
    }
    if let Some(log) = access {
        log.record_all(
            "stage2/end_to_end",
            train_pool.iter().map(|s| s.image_id.as_str()),
        );
    }
    let e = space.num_concepts();
    let concept_targets = derive_concept_targets(train_pool, bank, space)?;
    let id_rows: Vec<ConceptLogits> = train_pool
        .iter()
        .map(|s| ConceptLogits {
            image_id: s.image_id.clone(),
            scores: Vec::new(),
        })
        .collect();
    let disease = disease_targets(&id_rows, train_pool, space, mode)?;
    let tokens = ConceptTokens::new(bundle, &space.concept_ids)?;
    let mut context = PromptContext::random(
        config.num_tokens,
        bundle.token_dim(),
        config.position,
        config.init_std,
        &mut SeededRng::for_label(config.seed, "stage1/context-init"),
    );
    let mut mlp = Mlp::new(
        e,
        hyper.mlp.hidden,
        space.num_diseases(),
        &mut SeededRng::for_label(hyper.seed, "stage2/mlp-e2e"),
    );
    let mut adam = Adam::new(&mlp, hyper.mlp.lr, hyper.mlp.weight_decay);
    let mut sgd = Sgd::new(context.vectors.dim(), config.momentum, config.weight_decay);
    let images = encode_images(bundle, train_pool, EncodeMode::Eval, config.seed)?;
    let mut order: Vec<usize> = (0..train_pool.len()).collect();
    let mut loss_history = Vec::new();

    for epoch in 1..=config.epochs {
        let lr = learning_rate(
            config.schedule,
            config.lr,
            epoch,
            config.warmup_epochs,
            config.epochs,
        );
        SeededRng::for_label(config.seed, &format!("e2e/shuffle/{epoch}")).shuffle(&mut order);
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let f = ndarray::stack(
                ndarray::Axis(0),
                &batch.iter().map(|&i| images.row(i)).collect::<Vec<_>>(),
            )
            .expect("uniform feature dims");
            let feats = encode_concepts(bundle, &context, &tokens)?;
            let scores = score_matrix(bundle.logit_scale, f.view(), feats.features.view());
            let (concept_loss, mut grad_scores) = bce_with_grad(
                scores.view(),
                targets_matrix(&concept_targets, batch, e).view(),
            );
            let inputs = match hyper.input {
                InputKind::Scores => scores.clone(),
                InputKind::Probabilities => scores.mapv(sigmoid),
            };
            let mut y = Array2::zeros((batch.len(), space.num_diseases()));
            for (r, &i) in batch.iter().enumerate() {
                y.row_mut(r).assign(&disease.row(i));
            }
            let (disease_loss, grads) = mlp.loss_and_grad(inputs.view(), y.view(), mode);
            let loss = disease_loss + concept_weight * concept_loss;
            if !loss.is_finite() {
                return Err(crate::stage1::Stage1Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    lr,
                    images: batch
                        .iter()
                        .map(|&i| train_pool[i].image_id.as_str())
                        .collect::<Vec<_>>()
                        .join(","),
                }
                .into());
            }
            grad_scores *= concept_weight;
            let through_mlp = match hyper.input {
                InputKind::Scores => grads.input.clone(),
                InputKind::Probabilities => &grads.input * &inputs.mapv(|p| p * (1.0 - p)),
            };
            grad_scores += &through_mlp;
            let grad = context_grad_from_scores(
                bundle,
                &context,
                &tokens,
                &feats,
                f.view(),
                grad_scores.view(),
            );
            adam.step(&mut mlp, &grads);
            sgd.step(&mut context.vectors, &grad, lr);
            loss_history.push(loss);
        }
    }
    mlp.map_params(|v| f64::from(v as f32));
    Ok(EndToEndOutcome {
        context,
        model: Stage2Model {
            kind: Stage2Kind::Mlp,
            mode,
            hyper: hyper.clone(),
            label_space: space.digest(),
            diseases: space.diseases.clone(),
            concept_ids: space.concept_ids.clone(),
            skipped: Vec::new(),
            params: ModelParams::Mlp(mlp),
        },
        loss_history,
    })
}

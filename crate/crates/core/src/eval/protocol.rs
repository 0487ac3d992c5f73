//! Few-shot, base-to-novel and ablation protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::concept_bank::ConceptBank;
use crate::data::{sample_episode, split_base_novel, AccessLog, ImageSample, LabelSpace, Split};
use crate::encoders::{EncoderBundle, PromptContext, TokenPosition};
use crate::stage1::{self, infer_concepts, sigmoid, ConceptLogits, TrainConfig};
use crate::stage2::{self, fit_end_to_end, DiseasePrediction, Stage2Hyper, Stage2Kind, TaskMode};

use super::metrics::{mean_average_precision, weighted_f1, MetricKind, MetricResult};
use super::EvalError;

/// A stage-2 classifier, or the MLP trained jointly with the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lr,
    Svm,
    Rf,
    Mlp,
    #[serde(rename = "mlp_e2e")]
    MlpEndToEnd,
}

impl Method {
    pub const STANDALONE: [Method; 4] = [Method::Lr, Method::Svm, Method::Rf, Method::Mlp];

    pub fn kind(self) -> Stage2Kind {
        match self {
            Method::Lr => Stage2Kind::LogisticRegression,
            Method::Svm => Stage2Kind::LinearSvm,
            Method::Rf => Stage2Kind::RandomForest,
            Method::Mlp | Method::MlpEndToEnd => Stage2Kind::Mlp,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Lr => "LR",
            Method::Svm => "SVM",
            Method::Rf => "RF",
            Method::Mlp => "MLP",
            Method::MlpEndToEnd => "MLP (end-to-end)",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lr => "lr",
            Method::Svm => "svm",
            Method::Rf => "rf",
            Method::Mlp => "mlp",
            Method::MlpEndToEnd => "mlp_e2e",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp_e2e" | "mlp_end_to_end" | "e2e" => Ok(Method::MlpEndToEnd),
            other => match other.parse::<Stage2Kind>()? {
                Stage2Kind::LogisticRegression => Ok(Method::Lr),
                Stage2Kind::LinearSvm => Ok(Method::Svm),
                Stage2Kind::RandomForest => Ok(Method::Rf),
                Stage2Kind::Mlp => Ok(Method::Mlp),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub method: Method,
    pub mode: TaskMode,
    /// Shot count for base-to-novel training and the position/token sweeps.
    pub sweep_shots: usize,
    /// Weight of the concept BCE in end-to-end training.
    pub concept_loss_weight: f64,
    /// Adds the end-to-end MLP row to stage-2 sweeps.
    pub include_end_to_end: bool,
    pub stage1: TrainConfig,
    pub stage2: Stage2Hyper,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            shots: vec![2, 4, 8, 16],
            seeds: (1..=5).collect(),
            method: Method::Lr,
            mode: TaskMode::SingleLabel,
            sweep_shots: 16,
            concept_loss_weight: 1.0,
            include_end_to_end: false,
            stage1: TrainConfig::default(),
            stage2: Stage2Hyper::default(),
        }
    }
}

/// Read-only inputs shared by every protocol.
#[derive(Clone, Copy)]
pub struct Dataset<'a> {
    pub bank: &'a ConceptBank,
    pub samples: &'a [ImageSample],
    pub space: &'a LabelSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub shots: usize,
    pub method: Method,
    pub map: f64,
    pub weighted_f1: f64,
    pub per_class_ap: Vec<(String, f64)>,
    pub excluded_classes: Vec<String>,
    pub tied_classes: Vec<String>,
    pub skipped_heads: Vec<String>,
    pub episode_size: usize,
    pub episode_shortfalls: BTreeMap<String, usize>,
    pub stage1_best_epoch: usize,
    pub stage1_final_train_bce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub shots: usize,
    pub method: Method,
    pub map: MetricResult,
    pub weighted_f1: MetricResult,
    pub seeds: Vec<SeedRun>,
}

fn truth_matrix(samples: &[ImageSample], classes: &[String]) -> Vec<Vec<bool>> {
    samples
        .iter()
        .map(|s| {
            classes
                .iter()
                .map(|d| s.disease_labels.contains(d))
                .collect()
        })
        .collect()
}

fn decisions_matrix(preds: &[DiseasePrediction], k: usize) -> Vec<Vec<bool>> {
    preds
        .iter()
        .map(|p| {
            let mut row = vec![false; k];
            for &d in &p.decision {
                row[d] = true;
            }
            row
        })
        .collect()
}

struct Scored {
    map: f64,
    f1: f64,
    per_class: Vec<(String, f64)>,
    excluded: Vec<String>,
    tied: Vec<String>,
}

fn score(
    scores: &[Vec<f64>],
    decisions: &[Vec<bool>],
    truth: &[Vec<bool>],
    classes: &[String],
) -> Result<Scored, EvalError> {
    let all: Vec<usize> = (0..classes.len()).collect();
    let map = mean_average_precision(scores, truth, &all)?;
    let f1 = weighted_f1(decisions, truth, &all)?;
    Ok(Scored {
        map: map.value,
        f1,
        per_class: map
            .per_class
            .iter()
            .map(|&(k, ap)| (classes[k].clone(), ap))
            .collect(),
        excluded: map.excluded.iter().map(|&k| classes[k].clone()).collect(),
        tied: map
            .tied_classes
            .iter()
            .map(|&k| classes[k].clone())
            .collect(),
    })
}

fn pool(samples: &[ImageSample], ids: &BTreeSet<String>) -> Vec<ImageSample> {
    samples
        .iter()
        .filter(|s| ids.contains(&s.image_id))
        .cloned()
        .collect()
}

fn split_of(samples: &[ImageSample], split: Split) -> Vec<ImageSample> {
    samples
        .iter()
        .filter(|s| s.split == split)
        .cloned()
        .collect()
}

/// One seed of the few-shot protocol: a single Stage-1 run shared by every
/// requested method.
#[allow(clippy::too_many_arguments)]
fn run_seed(
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    config: &ProtocolConfig,
    stage1_config: &TrainConfig,
    shots: usize,
    seed: u64,
    methods: &[Method],
) -> Result<Vec<SeedRun>, EvalError> {
    let episode = sample_episode(data.samples, data.space, shots, seed);
    let ids: BTreeSet<String> = episode.unique_ids().into_iter().collect();
    let train_pool = pool(data.samples, &ids);
    let val_pool = split_of(data.samples, Split::Val);
    let test_pool = split_of(data.samples, Split::Test);
    if test_pool.is_empty() {
        return Err(EvalError::EmptyTestPool);
    }
    let truth = truth_matrix(&test_pool, &data.space.diseases);
    let k = data.space.num_diseases();
    let s1 = TrainConfig {
        seed,
        ..stage1_config.clone()
    };
    let hyper = Stage2Hyper {
        seed,
        ..config.stage2.clone()
    };
    let standalone: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|m| *m != Method::MlpEndToEnd)
        .collect();
    let mut out = Vec::with_capacity(methods.len());
    let mut shared: Option<(Vec<ConceptLogits>, Vec<ConceptLogits>, usize, f64)> = None;
    for &method in methods {
        let (test_logits, best_epoch, final_bce, model) = if method == Method::MlpEndToEnd {
            let e2e = fit_end_to_end(
                bundle,
                data.bank,
                data.space,
                &train_pool,
                &s1,
                &hyper,
                config.mode,
                config.concept_loss_weight,
                None,
            )?;
            let test_logits = infer_concepts(bundle, &e2e.context, data.space, &test_pool)?;
            let last = e2e.loss_history.last().copied().unwrap_or(f64::NAN);
            (test_logits, s1.epochs, last, e2e.model)
        } else {
            if shared.is_none() && !standalone.is_empty() {
                let trained = stage1::train(
                    bundle,
                    data.bank,
                    data.space,
                    &train_pool,
                    &val_pool,
                    &s1,
                    None,
                )?;
                let ctx: &PromptContext = &trained.best_context;
                let train_logits = infer_concepts(bundle, ctx, data.space, &train_pool)?;
                let test_logits = infer_concepts(bundle, ctx, data.space, &test_pool)?;
                let final_bce = trained.epoch_train_loss.last().copied().unwrap_or(f64::NAN);
                shared = Some((train_logits, test_logits, trained.best_epoch, final_bce));
            }
            let (train_logits, test_logits, best_epoch, final_bce) =
                shared.clone().expect("stage 1 ran");
            let model = stage2::fit(
                method.kind(),
                &train_logits,
                &train_pool,
                data.space,
                config.mode,
                &hyper,
                None,
            )?;
            (test_logits, best_epoch, final_bce, model)
        };
        let preds = stage2::predict(&model, &test_logits)?;
        let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.scores.clone()).collect();
        let scored = score(
            &scores,
            &decisions_matrix(&preds, k),
            &truth,
            &data.space.diseases,
        )?;
        info!(
            "few-shot n={shots} seed={seed} {method}: mAP {:.4} wF1 {:.4}",
            scored.map, scored.f1
        );
        out.push(SeedRun {
            seed,
            shots,
            method,
            map: scored.map,
            weighted_f1: scored.f1,
            per_class_ap: scored.per_class,
            excluded_classes: scored.excluded,
            tied_classes: scored.tied,
            skipped_heads: model.skipped.clone(),
            episode_size: ids.len(),
            episode_shortfalls: episode.shortfalls.clone(),
            stage1_best_epoch: best_epoch,
            stage1_final_train_bce: final_bce,
        });
    }
    Ok(out)
}

fn aggregate(runs: &[SeedRun]) -> (MetricResult, MetricResult) {
    let mut map = MetricResult::from_seeds(MetricKind::Map, runs.iter().map(|r| r.map).collect());
    let f1 = MetricResult::from_seeds(
        MetricKind::WeightedF1,
        runs.iter().map(|r| r.weighted_f1).collect(),
    );
    let mut per_class: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (c, ap) in &r.per_class_ap {
            per_class.entry(c).or_default().push(*ap);
        }
    }
    map.per_class = Some(
        per_class
            .into_iter()
            .map(|(c, v)| (c.to_string(), v.iter().sum::<f64>() / v.len() as f64))
            .collect(),
    );
    (map, f1)
}

/// Runs every seed for one cell; on failure returns the runs completed so far.
#[allow(clippy::too_many_arguments)]
fn run_seeds(
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    config: &ProtocolConfig,
    stage1_config: &TrainConfig,
    shots: usize,
    methods: &[Method],
) -> Result<BTreeMap<Method, Vec<SeedRun>>, EvalError> {
    if config.seeds.is_empty() {
        return Err(EvalError::Config("at least one seed is required".into()));
    }
    let mut by_method: BTreeMap<Method, Vec<SeedRun>> = BTreeMap::new();
    for &seed in &config.seeds {
        match run_seed(data, bundle, config, stage1_config, shots, seed, methods) {
            Ok(runs) => {
                for r in runs {
                    by_method.entry(r.method).or_default().push(r);
                }
            }
            Err(source) => {
                return Err(EvalError::SeedFailed {
                    seed,
                    shots,
                    source: Box::new(source),
                    completed: by_method.into_values().flatten().collect(),
                })
            }
        }
    }
    Ok(by_method)
}

/// n-shot classification for every shot count in `config.shots`, evaluated
/// on the full test split.
pub fn run_few_shot(
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    config: &ProtocolConfig,
) -> Result<Vec<FewShotResult>, EvalError> {
    let mut results = Vec::new();
    for &shots in &config.shots {
        let mut runs = run_seeds(
            data,
            bundle,
            config,
            &config.stage1,
            shots,
            &[config.method],
        )?;
        let seeds = runs.remove(&config.method).unwrap_or_default();
        let (map, weighted_f1) = aggregate(&seeds);
        results.push(FewShotResult {
            shots,
            method: config.method,
            map,
            weighted_f1,
            seeds,
        });
    }
    Ok(results)
}

pub const NOVEL_SCORING_NOTE: &str = "novel-class score = mean sigmoid probability of the class's bank concepts minus the mean over all other concepts (bank-prior head); base classes use the fitted stage-2 model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseNovelSeed {
    pub seed: u64,
    pub novel_map: f64,
    pub novel_weighted_f1: f64,
    pub base_map: f64,
    pub per_class_ap: Vec<(String, f64)>,
    pub ids_read: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseNovelResult {
    pub base: Vec<String>,
    pub novel: Vec<String>,
    pub shots: usize,
    pub method: Method,
    pub novel_scoring: String,
    pub novel_map: MetricResult,
    pub novel_weighted_f1: MetricResult,
    pub base_map: MetricResult,
    pub excluded_novel: Vec<String>,
    /// Novel-labelled samples read during training or fitting; always zero
    /// for a completed run.
    pub novel_samples_read: usize,
    pub seeds: Vec<BaseNovelSeed>,
}

/// Bank-prior scores for `classes`: mean probability of each class's bank
/// concepts minus the mean probability of the remaining concepts.
pub fn bank_prior_scores(
    logits: &[ConceptLogits],
    bank: &ConceptBank,
    space: &LabelSpace,
    classes: &[String],
) -> Result<Vec<Vec<f64>>, EvalError> {
    let members: Vec<Vec<bool>> = classes
        .iter()
        .map(|d| {
            let entry = bank
                .disease(d)
                .ok_or_else(|| EvalError::Config(format!("disease `{d}` missing from bank")))?;
            Ok(space
                .concept_ids
                .iter()
                .map(|c| entry.concept_ids.contains(c))
                .collect())
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(logits
        .iter()
        .map(|row| {
            let p: Vec<f64> = row.scores.iter().map(|&s| sigmoid(s)).collect();
            members
                .iter()
                .map(|m| {
                    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
                    for (j, &pj) in p.iter().enumerate() {
                        if m[j] {
                            inside += pj;
                            n_in += 1;
                        } else {
                            outside += pj;
                            n_out += 1;
                        }
                    }
                    let a = if n_in > 0 { inside / n_in as f64 } else { 0.0 };
                    let b = if n_out > 0 {
                        outside / n_out as f64
                    } else {
                        0.0
                    };
                    a - b
                })
                .collect()
        })
        .collect())
}

fn decide(scores: &[Vec<f64>], mode: TaskMode) -> Vec<Vec<bool>> {
    scores
        .iter()
        .map(|row| match mode {
            TaskMode::SingleLabel => {
                let best = (0..row.len()).fold(0, |a, k| if row[k] > row[a] { k } else { a });
                (0..row.len()).map(|k| k == best).collect()
            }
            TaskMode::MultiLabel => row.iter().map(|&s| s >= 0.0).collect(),
        })
        .collect()
}

/// Trains on base classes only (full concept bank) and evaluates novel
/// classes on the test samples that carry them.
pub fn run_base_to_novel(
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    config: &ProtocolConfig,
) -> Result<BaseNovelResult, EvalError> {
    let split = split_base_novel(data.samples, data.space)?;
    let novel_set = split.novel_set();
    let mut base_sorted = split.base.clone();
    base_sorted.sort();
    let base_space = LabelSpace {
        diseases: base_sorted,
        concept_ids: data.space.concept_ids.clone(),
    };
    let base_only: Vec<ImageSample> = data
        .samples
        .iter()
        .filter(|s| split.is_base_only(s))
        .cloned()
        .collect();
    let novel_test: Vec<ImageSample> = data
        .samples
        .iter()
        .filter(|s| s.split == Split::Test && s.has_any(&novel_set))
        .cloned()
        .collect();
    if novel_test.is_empty() {
        return Err(EvalError::EmptyNovelTestPool);
    }
    let base_test = split_of(&base_only, Split::Test);
    let novel_truth = truth_matrix(&novel_test, &split.novel);
    let base_truth = truth_matrix(&base_test, &base_space.diseases);
    let novel_ids: BTreeSet<&str> = data
        .samples
        .iter()
        .filter(|s| s.has_any(&novel_set))
        .map(|s| s.image_id.as_str())
        .collect();

    let mut seeds = Vec::new();
    let mut excluded = BTreeSet::new();
    let kind = config.method.kind();
    for &seed in &config.seeds {
        let log = AccessLog::new();
        let episode = sample_episode(&base_only, &base_space, config.sweep_shots, seed);
        let ids: BTreeSet<String> = episode.unique_ids().into_iter().collect();
        let train_pool = pool(&base_only, &ids);
        let val_pool = split_of(&base_only, Split::Val);
        let s1 = TrainConfig {
            seed,
            ..config.stage1.clone()
        };
        let hyper = Stage2Hyper {
            seed,
            ..config.stage2.clone()
        };
        let trained = stage1::train(
            bundle,
            data.bank,
            &base_space,
            &train_pool,
            &val_pool,
            &s1,
            Some(&log),
        )?;
        let train_logits = infer_concepts(bundle, &trained.best_context, &base_space, &train_pool)?;
        let model = stage2::fit(
            kind,
            &train_logits,
            &train_pool,
            &base_space,
            config.mode,
            &hyper,
            Some(&log),
        )?;

        let leaked: Vec<String> = log
            .ids()
            .into_iter()
            .filter(|id| novel_ids.contains(id.as_str()))
            .collect();
        if !leaked.is_empty() {
            return Err(EvalError::ProtocolViolation(leaked));
        }

        let novel_logits = infer_concepts(bundle, &trained.best_context, data.space, &novel_test)?;
        let novel_scores = bank_prior_scores(&novel_logits, data.bank, data.space, &split.novel)?;
        let novel = score(
            &novel_scores,
            &decide(&novel_scores, config.mode),
            &novel_truth,
            &split.novel,
        )?;
        excluded.extend(novel.excluded.iter().cloned());

        let base_map = if base_test.is_empty() {
            0.0
        } else {
            let base_logits =
                infer_concepts(bundle, &trained.best_context, &base_space, &base_test)?;
            let preds = stage2::predict(&model, &base_logits)?;
            let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.scores.clone()).collect();
            score(
                &scores,
                &decisions_matrix(&preds, base_space.num_diseases()),
                &base_truth,
                &base_space.diseases,
            )?
            .map
        };
        info!(
            "base-to-novel seed={seed}: novel mAP {:.4} wF1 {:.4}",
            novel.map, novel.f1
        );
        seeds.push(BaseNovelSeed {
            seed,
            novel_map: novel.map,
            novel_weighted_f1: novel.f1,
            base_map,
            per_class_ap: novel.per_class,
            ids_read: log.ids().len(),
        });
    }
    for d in &excluded {
        warn!("novel class `{d}` has no test samples and was excluded");
    }
    Ok(BaseNovelResult {
        base: split.base.clone(),
        novel: split.novel.clone(),
        shots: config.sweep_shots,
        method: config.method,
        novel_scoring: NOVEL_SCORING_NOTE.into(),
        novel_map: MetricResult::from_seeds(
            MetricKind::Map,
            seeds.iter().map(|s| s.novel_map).collect(),
        ),
        novel_weighted_f1: MetricResult::from_seeds(
            MetricKind::WeightedF1,
            seeds.iter().map(|s| s.novel_weighted_f1).collect(),
        ),
        base_map: MetricResult::from_seeds(
            MetricKind::Map,
            seeds.iter().map(|s| s.base_map).collect(),
        ),
        excluded_novel: excluded.into_iter().collect(),
        novel_samples_read: 0,
        seeds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    TokenPosition,
    NumTokens,
    Stage2,
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "token-position" | "position" => Ok(Sweep::TokenPosition),
            "num-tokens" | "tokens" => Ok(Sweep::NumTokens),
            "stage2" | "stage-2" => Ok(Sweep::Stage2),
            other => Err(format!(
                "unknown sweep `{other}` (token-position|num-tokens|stage2)"
            )),
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sweep::TokenPosition => "token-position",
            Sweep::NumTokens => "num-tokens",
            Sweep::Stage2 => "stage2",
        })
    }
}

pub const TOKEN_GRID: [usize; 6] = [2, 4, 8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub map: MetricResult,
    pub weighted_f1: MetricResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: Method,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub sweep: Sweep,
    pub columns: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Sweeps one factor; rows are stage-2 methods, columns the swept values.
pub fn run_ablation(
    sweep: Sweep,
    data: Dataset<'_>,
    bundle: &EncoderBundle,
    config: &ProtocolConfig,
) -> Result<AblationTable, EvalError> {
    let mut methods = Method::STANDALONE.to_vec();
    if config.include_end_to_end {
        methods.push(Method::MlpEndToEnd);
    }
    let cells: Vec<(String, TrainConfig, usize)> = match sweep {
        Sweep::TokenPosition => TokenPosition::ALL
            .iter()
            .map(|&position| {
                (
                    position.to_string(),
                    TrainConfig {
                        position,
                        ..config.stage1.clone()
                    },
                    config.sweep_shots,
                )
            })
            .collect(),
        Sweep::NumTokens => TOKEN_GRID
            .iter()
            .map(|&m| {
                (
                    format!("M={m}"),
                    TrainConfig {
                        num_tokens: m,
                        ..config.stage1.clone()
                    },
                    config.sweep_shots,
                )
            })
            .collect(),
        Sweep::Stage2 => config
            .shots
            .iter()
            .map(|&n| (format!("n={n}"), config.stage1.clone(), n))
            .collect(),
    };
    let mut rows: Vec<AblationRow> = methods
        .iter()
        .map(|&method| AblationRow {
            method,
            cells: Vec::new(),
        })
        .collect();
    let mut columns = Vec::new();
    for (label, stage1_config, shots) in cells {
        let runs = run_seeds(data, bundle, config, &stage1_config, shots, &methods)?;
        for row in rows.iter_mut() {
            let seeds = runs.get(&row.method).cloned().unwrap_or_default();
            let (map, weighted_f1) = aggregate(&seeds);
            row.cells.push(AblationCell { map, weighted_f1 });
        }
        columns.push(label);
    }
    Ok(AblationTable {
        sweep,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, parse_manifest, SynthConfig, SyntheticDataset};
    use crate::encoders::{mock_bundle, MockConfig};
    use crate::stage2::{ForestParams, MlpParams};

    fn synth(k: usize) -> (SyntheticDataset, Vec<ImageSample>, LabelSpace) {
        let ds = generate_synthetic(&SynthConfig {
            k,
            ..Default::default()
        })
        .unwrap();
        let (samples, space) = parse_manifest(&ds.manifest_csv(), &ds.bank).unwrap();
        (ds, samples, space)
    }

    fn fast() -> ProtocolConfig {
        ProtocolConfig {
            shots: vec![2, 4],
            seeds: vec![7],
            stage1: TrainConfig {
                epochs: 4,
                warmup_epochs: 1,
                lr: 0.01,
                num_tokens: 4,
                ..Default::default()
            },
            stage2: Stage2Hyper {
                forest: ForestParams {
                    n_trees: 5,
                    ..Default::default()
                },
                mlp: MlpParams {
                    epochs: 20,
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn few_shot_is_deterministic() {
        let (ds, samples, space) = synth(4);
        let bundle = mock_bundle(&MockConfig::default()).unwrap();
        let data = Dataset {
            bank: &ds.bank,
            samples: &samples,
            space: &space,
        };
        let a = run_few_shot(data, &bundle, &fast()).unwrap();
        let b = run_few_shot(data, &bundle, &fast()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a
            .iter()
            .all(|r| r.map.is_consistent(1e-9) && r.seeds.len() == 1));
        assert_eq!(a[0].seeds[0].episode_size, 8);
    }

    #[test]
    fn ablation_tables_have_paper_shapes() {
        let (ds, samples, space) = synth(4);
        let bundle = mock_bundle(&MockConfig::default()).unwrap();
        let data = Dataset {
            bank: &ds.bank,
            samples: &samples,
            space: &space,
        };
        let cfg = fast();
        let pos = run_ablation(Sweep::TokenPosition, data, &bundle, &cfg).unwrap();
        assert_eq!(pos.columns, vec!["START", "MIDDLE", "END"]);
        assert_eq!(pos.rows.len(), 4);
        assert!(pos.rows.iter().all(|r| r.cells.len() == 3));
        let s2 = run_ablation(
            Sweep::Stage2,
            data,
            &bundle,
            &ProtocolConfig {
                shots: vec![2, 4, 8, 16],
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(s2.rows.len() * s2.columns.len(), 16);
        let with_e2e = ProtocolConfig {
            include_end_to_end: true,
            shots: vec![2],
            ..cfg
        };
        let t = run_ablation(Sweep::Stage2, data, &bundle, &with_e2e).unwrap();
        assert_eq!(t.rows.last().unwrap().method, Method::MlpEndToEnd);
    }

    #[test]
    fn num_tokens_sweep_has_six_columns() {
        let (ds, samples, space) = synth(4);
        let bundle = mock_bundle(&MockConfig::default()).unwrap();
        let data = Dataset {
            bank: &ds.bank,
            samples: &samples,
            space: &space,
        };
        let cfg = ProtocolConfig {
            stage1: TrainConfig {
                epochs: 2,
                ..fast().stage1
            },
            ..fast()
        };
        let t = run_ablation(Sweep::NumTokens, data, &bundle, &cfg).unwrap();
        assert_eq!(t.columns, vec!["M=2", "M=4", "M=8", "M=16", "M=32", "M=64"]);
    }

    #[test]
    fn base_to_novel_never_reads_novel_samples() {
        let (ds, samples, space) = synth(6);
        let bundle = mock_bundle(&MockConfig::default()).unwrap();
        let data = Dataset {
            bank: &ds.bank,
            samples: &samples,
            space: &space,
        };
        let r = run_base_to_novel(data, &bundle, &fast()).unwrap();
        assert_eq!(r.base.len(), 3);
        assert_eq!(r.novel.len(), 3);
        assert_eq!(r.novel_samples_read, 0);
        assert!(r.seeds[0].ids_read > 0);
    }

    #[test]
    fn base_to_novel_without_novel_test_samples_errors() {
        let (ds, mut samples, space) = synth(6);
        let split = split_base_novel(&samples, &space).unwrap();
        let novel = split.novel_set();
        samples.retain(|s| !(s.split == Split::Test && s.has_any(&novel)));
        let bundle = mock_bundle(&MockConfig::default()).unwrap();
        let data = Dataset {
            bank: &ds.bank,
            samples: &samples,
            space: &space,
        };
        assert!(matches!(
            run_base_to_novel(data, &bundle, &fast()),
            Err(EvalError::EmptyNovelTestPool)
        ));
    }

    #[test]
    fn bank_prior_hand_example() {
        let (ds, _, space) = synth(4);
        let d0 = space.diseases[0].clone();
        let members: Vec<usize> = ds
            .bank
            .disease(&d0)
            .unwrap()
            .concept_ids
            .iter()
            .map(|c| space.concept_index(c).unwrap())
            .collect();
        let mut scores = vec![-2.0; space.num_concepts()];
        for &j in &members {
            scores[j] = 2.0;
        }
        let row = ConceptLogits {
            image_id: "x".into(),
            scores,
        };
        let out = bank_prior_scores(&[row], &ds.bank, &space, &[d0]).unwrap();
        assert!((out[0][0] - (sigmoid(2.0) - sigmoid(-2.0))).abs() < 1e-15);
    }
}

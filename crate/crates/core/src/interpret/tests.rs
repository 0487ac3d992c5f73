use std::collections::BTreeSet;

use ndarray::{array, Array1, Array2};
use proptest::prelude::*;

use super::*;
use crate::data::{
    derive_concept_targets, generate_synthetic, parse_manifest, LabelSpace, Split, SynthConfig,
};
use crate::stage2::{fit, ModelParams, Stage2Hyper, Stage2Kind, TaskMode};

fn model(weights: Array2<f64>) -> Stage2Model {
    let (k, e) = weights.dim();
    let space = LabelSpace {
        diseases: (0..k).map(|d| format!("d{d}")).collect(),
        concept_ids: (0..e).map(|j| format!("c{j}")).collect(),
    };
    Stage2Model {
        kind: Stage2Kind::LogisticRegression,
        mode: TaskMode::SingleLabel,
        hyper: Stage2Hyper::default(),
        label_space: space.digest(),
        diseases: space.diseases,
        concept_ids: space.concept_ids,
        skipped: Vec::new(),
        params: ModelParams::Linear {
            bias: Array1::zeros(k),
            weights,
        },
    }
}

fn sample(id: &str, disease: &str) -> ImageSample {
    ImageSample {
        image_id: id.into(),
        image_ref: id.into(),
        disease_labels: [disease.to_string()].into_iter().collect(),
        split: Split::Test,
    }
}

fn row(id: &str, scores: &[f64]) -> ConceptLogits {
    ConceptLogits {
        image_id: id.into(),
        scores: scores.to_vec(),
    }
}

#[test]
fn hand_computed_contributions() {
    let m = model(array![[2.0, -1.0, 0.5], [0.0, 1.0, 0.0]]);
    let samples = vec![sample("a", "d0"), sample("b", "d0"), sample("c", "d1")];
    let logits = vec![
        row("a", &[1.0, 1.0, 2.0]),
        row("b", &[3.0, -1.0, 0.0]),
        row("c", &[9.0, 9.0, 9.0]),
    ];
    let r = contributions(&m, &logits, &samples, "d0", Normalization::Sum).unwrap();
    // raw: c0 = 2 * 2 = 4, c1 = -1 * 0 = 0, c2 = 0.5 * 1 = 0.5
    assert_eq!(r.sample_count, 2);
    let ids: Vec<&str> = r.entries.iter().map(|e| e.concept_id.as_str()).collect();
    assert_eq!(ids, ["c0", "c2", "c1"]);
    assert!((r.entries[0].raw - 4.0).abs() < 1e-12);
    assert!((r.entries[0].contribution - 4.0 / 4.5).abs() < 1e-12);
    assert!((r.entries[1].contribution - 0.5 / 4.5).abs() < 1e-12);
    assert_eq!(
        r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(),
        [1, 2, 3]
    );
    assert_eq!(r.attribution, ATTRIBUTION);

    let mm = contributions(&m, &logits, &samples, "d0", Normalization::MinMax).unwrap();
    assert_eq!(mm.entries[0].contribution, 1.0);
    assert_eq!(mm.entries[2].contribution, 0.0);
}

#[test]
fn negatives_stay_raw() {
    let m = model(array![[1.0, -3.0]]);
    let samples = vec![sample("a", "d0")];
    let r = contributions(
        &m,
        &[row("a", &[2.0, 1.0])],
        &samples,
        "d0",
        Normalization::Sum,
    )
    .unwrap();
    assert_eq!(r.entries[0].contribution, 1.0);
    assert_eq!(r.entries[1].contribution, -3.0);
}

#[test]
fn zero_weights_skip_normalization() {
    let m = model(Array2::zeros((1, 4)));
    let samples = vec![sample("a", "d0")];
    let r = contributions(
        &m,
        &[row("a", &[1.0, 2.0, 3.0, 4.0])],
        &samples,
        "d0",
        Normalization::Sum,
    )
    .unwrap();
    assert!(r.normalization_skipped);
    assert!(r.entries.iter().all(|e| e.contribution == 0.0));
}

#[test]
fn single_nonzero_weight_normalizes_to_one() {
    let m = model(array![[0.0, 0.7, 0.0]]);
    let samples = vec![sample("a", "d0")];
    let r = contributions(
        &m,
        &[row("a", &[5.0, 0.3, -2.0])],
        &samples,
        "d0",
        Normalization::Sum,
    )
    .unwrap();
    assert_eq!(r.entries[0].concept_id, "c1");
    assert_eq!(r.entries[0].contribution, 1.0);
}

#[test]
fn errors() {
    let m = model(array![[1.0]]);
    let samples = vec![sample("a", "d0")];
    assert!(matches!(
        contributions(&m, &[row("a", &[1.0])], &samples, "zz", Normalization::Sum),
        Err(InterpretError::UnknownDisease(_))
    ));
    assert!(matches!(
        contributions(&m, &[row("b", &[1.0])], &samples, "d0", Normalization::Sum),
        Err(InterpretError::NoSamples(_))
    ));
    assert!(matches!(
        contributions(
            &m,
            &[row("a", &[1.0, 2.0])],
            &samples,
            "d0",
            Normalization::Sum
        ),
        Err(InterpretError::Shape { found: 2, .. })
    ));
    let mut forest = m.clone();
    forest.kind = Stage2Kind::RandomForest;
    forest.params = ModelParams::Forest(vec![None]);
    assert!(matches!(
        contributions(
            &forest,
            &[row("a", &[1.0])],
            &samples,
            "d0",
            Normalization::Sum
        ),
        Err(InterpretError::Unsupported(
            Stage2Error::UnsupportedOperation(_)
        ))
    ));
}

#[test]
fn top_and_bottom_do_not_overlap() {
    let m = model(array![[5.0, 4.0, 3.0, 2.0, 1.0]]);
    let samples = vec![sample("a", "d0")];
    let r = contributions(
        &m,
        &[row("a", &[1.0; 5])],
        &samples,
        "d0",
        Normalization::Sum,
    )
    .unwrap();
    assert_eq!(r.top(2).len(), 2);
    assert_eq!(r.bottom(2, 2).len(), 2);
    assert_eq!(r.bottom(4, 2).len(), 3);
    assert_eq!(r.bottom(0, 2).len(), 0);
    assert_eq!(r.top(9).len(), 5);
    assert!(r.to_tsv(2, 2).lines().count() == 5 + 4);
}

fn two_disease_reports() -> Vec<ContributionReport> {
    let mut w = Array2::zeros((2, 12));
    for j in 0..12 {
        w[[0, j]] = 6.0 - j as f64;
        w[[1, j]] = j as f64 - 6.0;
    }
    let m = model(w);
    let samples = vec![sample("a", "d0"), sample("b", "d1")];
    let logits = vec![row("a", &[1.0; 12]), row("b", &[1.0; 12])];
    vec![
        contributions(&m, &logits, &samples, "d0", Normalization::Sum).unwrap(),
        contributions(&m, &logits, &samples, "d1", Normalization::Sum).unwrap(),
    ]
}

#[test]
fn sankey_four_plus_four() {
    let reports = two_disease_reports();
    let flow = export_sankey(&reports[..1], 4, 4);
    assert_eq!(flow.links.len(), 8);
    assert_eq!(flow.nodes.len(), 9);
    assert!(flow.links.iter().all(|l| l.target == 8 && l.value >= 0.0));
    assert_eq!(export_sankey(&reports[..1], 4, 0).links.len(), 4);
}

#[test]
fn sankey_shared_concept_has_two_links() {
    let reports = two_disease_reports();
    // c0 is top for d0 and bottom for d1
    let flow = export_sankey(&reports, 1, 1);
    let c0 = flow.nodes.iter().position(|n| n.name == "c0").unwrap();
    let out: Vec<_> = flow.links.iter().filter(|l| l.source == c0).collect();
    assert_eq!(out.len(), 2);
    assert_ne!(out[0].target, out[1].target);
    assert_eq!(flow.nodes.len(), 4);
}

#[test]
fn sankey_is_byte_deterministic() {
    let reports = two_disease_reports();
    assert_eq!(
        export_sankey(&reports, 5, 5).to_json(),
        export_sankey(&reports, 5, 5).to_json()
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&export_sankey(&reports, 2, 2).to_json()).unwrap();
    assert!(parsed["nodes"].is_array() && parsed["links"][0]["source"].is_number());
}

#[test]
fn bank_concepts_outrank_the_rest_on_noiseless_data() {
    for k in [3, 4, 6] {
        let ds = generate_synthetic(&SynthConfig {
            k,
            seed: k as u64,
            ..Default::default()
        })
        .unwrap();
        let (samples, space) = parse_manifest(&ds.manifest_csv(), &ds.bank).unwrap();
        let targets = derive_concept_targets(&samples, &ds.bank, &space).unwrap();
        let logits: Vec<ConceptLogits> = targets
            .iter()
            .map(|t| ConceptLogits {
                image_id: t.image_id.clone(),
                scores: t.as_f64(),
            })
            .collect();
        let train: Vec<ConceptLogits> = logits
            .iter()
            .zip(&samples)
            .filter(|(_, s)| s.split == Split::Train)
            .map(|(l, _)| l.clone())
            .collect();
        let test: Vec<ConceptLogits> = logits
            .iter()
            .zip(&samples)
            .filter(|(_, s)| s.split == Split::Test)
            .map(|(l, _)| l.clone())
            .collect();
        let m = fit(
            Stage2Kind::LogisticRegression,
            &train,
            &samples,
            &space,
            TaskMode::SingleLabel,
            &Stage2Hyper::default(),
            None,
        )
        .unwrap();
        for d in &space.diseases {
            let bank: BTreeSet<&str> = ds
                .bank
                .disease(d)
                .unwrap()
                .concept_ids
                .iter()
                .map(String::as_str)
                .collect();
            let r = contributions(&m, &test, &samples, d, Normalization::Sum).unwrap();
            let head: BTreeSet<&str> = r
                .top(bank.len())
                .iter()
                .map(|e| e.concept_id.as_str())
                .collect();
            assert_eq!(head, bank, "disease {d}");
            assert!(r.entries[bank.len() - 1].raw > r.entries[bank.len()].raw);
        }
    }
}

proptest! {
    #[test]
    fn sample_order_does_not_matter(
        w in prop::collection::vec(-3.0f64..3.0, 5),
        xs in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 5), 1..8),
        shift in 0usize..8,
    ) {
        let m = model(Array2::from_shape_vec((1, 5), w).unwrap());
        let samples: Vec<ImageSample> = (0..xs.len()).map(|i| sample(&format!("s{i}"), "d0")).collect();
        let logits: Vec<ConceptLogits> = xs.iter().enumerate().map(|(i, x)| row(&format!("s{i}"), x)).collect();
        let mut rotated = logits.clone();
        rotated.rotate_left(shift % logits.len());
        rotated.reverse();
        let a = contributions(&m, &logits, &samples, "d0", Normalization::Sum).unwrap();
        let b = contributions(&m, &rotated, &samples, "d0", Normalization::Sum).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            prop_assert!((x.raw - y.raw).abs() < 1e-12);
        }
        let pos: f64 = a.entries.iter().filter(|e| e.raw > 0.0).map(|e| e.contribution).sum();
        prop_assert!(a.normalization_skipped || (pos - 1.0).abs() < 1e-9);
        prop_assert!(a.entries.windows(2).all(|p| p[0].contribution >= p[1].contribution));
    }
}

use serde::{Deserialize, Serialize};

use crate::concept_bank::ConceptBank;

use super::{DataError, ImageSample, LabelSpace};

/// Binary concept-presence vector for one image, in label-space concept order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptTarget {
    pub image_id: String,
    pub targets: Vec<bool>,
}

impl ConceptTarget {
    pub fn as_f64(&self) -> Vec<f64> {
        self.targets
            .iter()
            .map(|&t| if t { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn count_ones(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }
}

/// targets[j] = 1 iff concept j belongs to the bank set of any of the image's diseases.
pub fn derive_concept_targets(
    samples: &[ImageSample],
    bank: &ConceptBank,
    space: &LabelSpace,
) -> Result<Vec<ConceptTarget>, DataError> {
    if !bank.frozen {
        return Err(DataError::BankNotFrozen);
    }
    samples
        .iter()
        .map(|sample| {
            let mut targets = vec![false; space.num_concepts()];
            for disease in &sample.disease_labels {
                let entry = bank
                    .disease(disease)
                    .ok_or_else(|| DataError::NotInLabelSpace(disease.clone()))?;
                if entry.concept_ids.is_empty() {
                    return Err(DataError::EmptyConceptSet(disease.clone()));
                }
                for id in &entry.concept_ids {
                    if let Some(j) = space.concept_index(id) {
                        targets[j] = true;
                    }
                }
            }
            Ok(ConceptTarget {
                image_id: sample.image_id.clone(),
                targets,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept_bank::{Concept, Decision};
    use crate::data::Split;
    use std::collections::{BTreeSet, HashSet};

    fn bank(sets: &[(&str, &[&str])]) -> ConceptBank {
        let mut bank = ConceptBank::new();
        for (disease, concepts) in sets {
            bank.add_concepts(
                disease,
                concepts.iter().map(|c| Concept::manual(c)).collect(),
            )
            .unwrap();
        }
        for id in bank.concepts().map(|c| c.id.clone()).collect::<Vec<_>>() {
            bank.validate_concept_at(&id, Decision::Validated, "r", false, "t")
                .unwrap();
        }
        bank.freeze();
        bank
    }

    fn sample(labels: &[&str]) -> ImageSample {
        ImageSample {
            image_id: "x".into(),
            image_ref: "x".into(),
            disease_labels: labels.iter().map(|s| s.to_string()).collect(),
            split: Split::Train,
        }
    }

    fn space(bank: &ConceptBank) -> LabelSpace {
        LabelSpace {
            diseases: bank.diseases().map(|d| d.name.clone()).collect(),
            concept_ids: bank.validated_ids(),
        }
    }

    #[test]
    fn single_disease_three_concepts() {
        let bank = bank(&[
            ("DR", &["microaneurysms", "hard exudates", "hemorrhages"]),
            ("Glaucoma", &["cupping"]),
        ]);
        let t = derive_concept_targets(&[sample(&["DR"])], &bank, &space(&bank)).unwrap();
        assert_eq!(t[0].count_ones(), 3);
    }

    #[test]
    fn disjoint_union() {
        let bank = bank(&[("A", &["a1", "a2"]), ("B", &["b1", "b2", "b3"])]);
        let t = derive_concept_targets(&[sample(&["A", "B"])], &bank, &space(&bank)).unwrap();
        assert_eq!(t[0].count_ones(), 5);
    }

    #[test]
    fn shared_concept_counted_once() {
        let sets: [(&str, &[&str]); 2] = [("A", &["s", "a2"]), ("B", &["s", "b2", "b3"])];
        let bank = bank(&sets);
        // set-union oracle
        let union: HashSet<&str> = sets.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        let t = derive_concept_targets(&[sample(&["A", "B"])], &bank, &space(&bank)).unwrap();
        assert_eq!(t[0].count_ones(), union.len());
        assert_eq!(t[0].count_ones(), 4);
    }

    #[test]
    fn requires_frozen_bank_and_nonempty_sets() {
        let mut open = ConceptBank::new();
        open.add_concepts("A", vec![Concept::manual("a")]).unwrap();
        let sp = LabelSpace::default();
        assert!(matches!(
            derive_concept_targets(&[sample(&["A"])], &open, &sp),
            Err(DataError::BankNotFrozen)
        ));
        // A's only concept is never validated, so freezing empties it
        open.freeze();
        assert!(matches!(
            derive_concept_targets(&[sample(&["A"])], &open, &sp),
            Err(DataError::EmptyConceptSet(d)) if d == "A"
        ));
        let _ = BTreeSet::<String>::new();
    }
}

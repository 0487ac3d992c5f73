//! Concept bank: the vocabulary of human-readable diagnostic concepts and the
//! disease -> concept mapping.
//!
//! Construction runs in three steps: each disease name is rendered into the
//! two elicitation templates ([`render_template`]), each template is sent to a
//! text generator several times ([`collect_generations`]), and only concepts
//! that recur across generations survive ([`intersect_generations`]). Every
//! surviving concept starts as `generated` and must be reviewed
//! ([`ConceptBank::validate_concept`]) before the bank is frozen for training.

mod canonical;
mod generator;
mod intersect;
mod io;
mod templates;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use canonical::canonicalize;
pub use generator::{
    collect_generations, parse_phrases, ConceptGenerator, FixtureGenerator, FixtureTable,
    GeneratorError, LiveGenerator, RawGeneration,
};
pub use intersect::{intersect_generations, MinSupport, SynonymMap};
pub use io::{load_bank, parse_bank, save_bank, to_bank_string, SCHEMA_VERSION};
pub use templates::{render_template, GenerationRequest, TemplateId, NORMAL_FUNDUS_CLAUSE};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("disease name is empty")]
    EmptyDiseaseName,
    #[error("at least 2 generations per template are required, got {0}")]
    TooFewRepeats(u32),
    #[error("intersection needs at least 2 generations, got {0}")]
    TooFewGenerations(usize),
    #[error("generator failed: {0}")]
    Generator(String),
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("concept `{id}` was already {status}; pass force to re-decide")]
    Conflict { id: String, status: ConceptStatus },
    #[error("concept `{id}` has support from {support} generation(s); validation needs 2 or a manual override")]
    InsufficientSupport { id: String, support: usize },
    #[error("bank is frozen for training")]
    Frozen,
    #[error("duplicate concept id `{0}`")]
    DuplicateConcept(String),
    #[error("duplicate disease `{0}`")]
    DuplicateDisease(String),
    #[error("concept `{id}` does not match its canonical display name (`{expected}`)")]
    NonCanonicalId { id: String, expected: String },
    #[error("disease `{disease}` references unknown concept `{id}`")]
    DanglingReference { disease: String, id: String },
    #[error("bank schema version {found} is not supported (expected {expected}); migrate the file first")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("malformed bank file: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptStatus {
    Generated,
    Validated,
    Rejected,
}

impl std::fmt::Display for ConceptStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConceptStatus::Generated => "generated",
            ConceptStatus::Validated => "validated",
            ConceptStatus::Rejected => "rejected",
        })
    }
}

/// A reviewer's verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Validated,
    Rejected,
}

impl std::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validated" => Ok(Decision::Validated),
            "rejected" => Ok(Decision::Rejected),
            other => Err(format!(
                "decision must be `validated` or `rejected`, got `{other}`"
            )),
        }
    }
}

/// Which generation mentioned a concept.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GenerationTag {
    pub disease: String,
    pub template_id: TemplateId,
    pub generation_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub decision: Decision,
    pub reviewer: String,
    pub timestamp: String,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub display_name: String,
    pub synonyms: Vec<String>,
    pub status: ConceptStatus,
    pub provenance: Vec<GenerationTag>,
    /// Lets a reviewer validate a concept that did not recur across generations.
    #[serde(default)]
    pub manual_override: bool,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

impl Concept {
    /// A concept added by hand rather than elicited.
    pub fn manual(display_name: &str) -> Self {
        Self {
            id: canonicalize(display_name),
            display_name: display_name.trim().to_string(),
            synonyms: Vec::new(),
            status: ConceptStatus::Generated,
            provenance: Vec::new(),
            manual_override: true,
            audit: Vec::new(),
        }
    }

    /// Number of distinct generations supporting this concept.
    pub fn support(&self) -> usize {
        self.provenance.iter().collect::<BTreeSet<_>>().len()
    }

    fn may_be_validated(&self) -> bool {
        self.manual_override || self.support() >= 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseEntry {
    pub name: String,
    pub concept_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptBank {
    pub version: u64,
    pub frozen: bool,
    concepts: BTreeMap<String, Concept>,
    diseases: BTreeMap<String, DiseaseEntry>,
}

impl Default for ConceptBank {
    fn default() -> Self {
        Self::new()
    }
}

impl ConceptBank {
    pub fn new() -> Self {
        Self {
            version: 1,
            frozen: false,
            concepts: BTreeMap::new(),
            diseases: BTreeMap::new(),
        }
    }

    pub(crate) fn from_parts(
        version: u64,
        frozen: bool,
        concepts: BTreeMap<String, Concept>,
        diseases: BTreeMap<String, DiseaseEntry>,
    ) -> Self {
        Self {
            version,
            frozen,
            concepts,
            diseases,
        }
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn diseases(&self) -> impl Iterator<Item = &DiseaseEntry> {
        self.diseases.values()
    }

    pub fn disease(&self, name: &str) -> Option<&DiseaseEntry> {
        self.diseases.get(name)
    }

    /// Number of validated concepts (E).
    pub fn num_validated(&self) -> usize {
        self.concepts
            .values()
            .filter(|c| c.status == ConceptStatus::Validated)
            .count()
    }

    /// Number of diseases (K).
    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    /// Validated concept ids in id order.
    pub fn validated_ids(&self) -> Vec<String> {
        self.concepts
            .values()
            .filter(|c| c.status == ConceptStatus::Validated)
            .map(|c| c.id.clone())
            .collect()
    }

    fn ensure_mutable(&self) -> Result<(), BankError> {
        if self.frozen {
            Err(BankError::Frozen)
        } else {
            Ok(())
        }
    }

    /// Adds (or merges) concepts and links them to `disease`.
    pub fn add_concepts(&mut self, disease: &str, concepts: Vec<Concept>) -> Result<(), BankError> {
        self.ensure_mutable()?;
        let disease = disease.trim();
        if disease.is_empty() {
            return Err(BankError::EmptyDiseaseName);
        }
        let entry = self
            .diseases
            .entry(disease.to_string())
            .or_insert_with(|| DiseaseEntry {
                name: disease.to_string(),
                concept_ids: BTreeSet::new(),
            });
        for concept in concepts {
            entry.concept_ids.insert(concept.id.clone());
            match self.concepts.get_mut(&concept.id) {
                Some(existing) => {
                    for tag in concept.provenance {
                        if !existing.provenance.contains(&tag) {
                            existing.provenance.push(tag);
                        }
                    }
                    existing.provenance.sort();
                    for s in concept.synonyms {
                        if !existing.synonyms.contains(&s) {
                            existing.synonyms.push(s);
                        }
                    }
                    existing.synonyms.sort();
                    existing.manual_override |= concept.manual_override;
                }
                None => {
                    self.concepts.insert(concept.id.clone(), concept);
                }
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Records a reviewer decision. Re-deciding an already decided concept
    /// needs `force`; every decision is kept in the concept's audit log.
    pub fn validate_concept(
        &mut self,
        id: &str,
        decision: Decision,
        reviewer: &str,
        force: bool,
    ) -> Result<(), BankError> {
        let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        self.validate_concept_at(id, decision, reviewer, force, &now)
    }

    pub fn validate_concept_at(
        &mut self,
        id: &str,
        decision: Decision,
        reviewer: &str,
        force: bool,
        timestamp: &str,
    ) -> Result<(), BankError> {
        self.ensure_mutable()?;
        let concept = self
            .concepts
            .get_mut(id)
            .ok_or_else(|| BankError::UnknownConcept(id.to_string()))?;
        if concept.status != ConceptStatus::Generated && !force {
            return Err(BankError::Conflict {
                id: id.to_string(),
                status: concept.status,
            });
        }
        if decision == Decision::Validated && !concept.may_be_validated() {
            return Err(BankError::InsufficientSupport {
                id: id.to_string(),
                support: concept.support(),
            });
        }
        concept.status = match decision {
            Decision::Validated => ConceptStatus::Validated,
            Decision::Rejected => ConceptStatus::Rejected,
        };
        concept.audit.push(AuditEntry {
            decision,
            reviewer: reviewer.to_string(),
            timestamp: timestamp.to_string(),
            forced: force,
        });
        self.version += 1;
        Ok(())
    }

    /// Marks the bank read-only. Disease entries drop every reference to a
    /// concept that is not validated; the dropped (disease, concept) pairs are
    /// returned.
    pub fn freeze(&mut self) -> Vec<(String, String)> {
        if self.frozen {
            return Vec::new();
        }
        let mut pruned = Vec::new();
        for entry in self.diseases.values_mut() {
            let keep: BTreeSet<String> = entry
                .concept_ids
                .iter()
                .filter(|id| {
                    self.concepts
                        .get(*id)
                        .is_some_and(|c| c.status == ConceptStatus::Validated)
                })
                .cloned()
                .collect();
            for id in entry.concept_ids.difference(&keep) {
                pruned.push((entry.name.clone(), id.clone()));
            }
            entry.concept_ids = keep;
        }
        self.frozen = true;
        self.version += 1;
        pruned
    }

    /// Checks the structural invariants (ids canonical, references resolve,
    /// validated concepts adequately supported, frozen banks reference only
    /// validated concepts).
    pub fn check_invariants(&self) -> Result<(), BankError> {
        for (key, concept) in &self.concepts {
            if key != &concept.id {
                return Err(BankError::Format(format!(
                    "concept key `{key}` != id `{}`",
                    concept.id
                )));
            }
            let expected = canonicalize(&concept.display_name);
            if concept.id != expected {
                return Err(BankError::NonCanonicalId {
                    id: concept.id.clone(),
                    expected,
                });
            }
            if concept.status == ConceptStatus::Validated && !concept.may_be_validated() {
                return Err(BankError::InsufficientSupport {
                    id: concept.id.clone(),
                    support: concept.support(),
                });
            }
        }
        for entry in self.diseases.values() {
            for id in &entry.concept_ids {
                match self.concepts.get(id) {
                    None => {
                        return Err(BankError::DanglingReference {
                            disease: entry.name.clone(),
                            id: id.clone(),
                        })
                    }
                    Some(c) if self.frozen && c.status != ConceptStatus::Validated => {
                        return Err(BankError::Format(format!(
                            "frozen bank: disease `{}` references {} concept `{id}`",
                            entry.name, c.status
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}

/// Options for [`build_bank`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub repeats_per_template: u32,
    pub min_support: MinSupport,
    pub synonyms: SynonymMap,
    pub max_attempts: u32,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            repeats_per_template: 2,
            min_support: MinSupport::All,
            synonyms: SynonymMap::new(),
            max_attempts: 3,
        }
    }
}

/// Runs collection and intersection for every disease. Returns the new bank
/// (all concepts `generated`) together with the verbatim raw generations.
pub fn build_bank(
    diseases: &[String],
    generator: &dyn ConceptGenerator,
    options: &BuildOptions,
) -> Result<(ConceptBank, Vec<RawGeneration>), BankError> {
    let mut bank = ConceptBank::new();
    let mut raw = Vec::new();
    for disease in diseases {
        let generations = collect_generations(
            disease,
            generator,
            options.repeats_per_template,
            options.max_attempts,
        )?;
        let concepts = intersect_generations(&generations, &options.synonyms, options.min_support)?;
        bank.add_concepts(disease, concepts)?;
        raw.extend(generations);
    }
    Ok((bank, raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(i: u32) -> GenerationTag {
        GenerationTag {
            disease: "D".into(),
            template_id: TemplateId::ExplicitConcepts,
            generation_index: i,
        }
    }

    fn concept(name: &str, support: u32) -> Concept {
        Concept {
            id: canonicalize(name),
            display_name: name.into(),
            synonyms: vec![],
            status: ConceptStatus::Generated,
            provenance: (0..support).map(tag).collect(),
            manual_override: false,
            audit: vec![],
        }
    }

    fn bank() -> ConceptBank {
        let mut bank = ConceptBank::new();
        bank.add_concepts(
            "D",
            vec![concept("asteroid bodies", 4), concept("shadowing", 1)],
        )
        .unwrap();
        bank
    }

    #[test]
    fn validation_bumps_version() {
        let mut bank = bank();
        let v = bank.version;
        bank.validate_concept("asteroid bodies", Decision::Validated, "dr a", false)
            .unwrap();
        assert_eq!(
            bank.concept("asteroid bodies").unwrap().status,
            ConceptStatus::Validated
        );
        assert_eq!(bank.version, v + 1);
        assert_eq!(bank.num_validated(), 1);
    }

    #[test]
    fn re_deciding_needs_force() {
        let mut bank = bank();
        bank.validate_concept("asteroid bodies", Decision::Validated, "a", false)
            .unwrap();
        assert!(matches!(
            bank.validate_concept("asteroid bodies", Decision::Rejected, "a", false),
            Err(BankError::Conflict { .. })
        ));
    }

    #[test]
    fn reject_then_force_validate_keeps_audit() {
        let mut bank = bank();
        bank.validate_concept("asteroid bodies", Decision::Rejected, "a", false)
            .unwrap();
        bank.validate_concept("asteroid bodies", Decision::Validated, "b", true)
            .unwrap();
        let c = bank.concept("asteroid bodies").unwrap();
        assert_eq!(c.status, ConceptStatus::Validated);
        let decisions: Vec<_> = c.audit.iter().map(|a| (a.decision, a.forced)).collect();
        assert_eq!(
            decisions,
            vec![(Decision::Rejected, false), (Decision::Validated, true)]
        );
    }

    #[test]
    fn single_support_needs_override() {
        let mut bank = bank();
        assert!(matches!(
            bank.validate_concept("shadowing", Decision::Validated, "a", false),
            Err(BankError::InsufficientSupport { support: 1, .. })
        ));
        bank.add_concepts("D", vec![Concept::manual("Shadowing")])
            .unwrap();
        bank.validate_concept("shadowing", Decision::Validated, "a", false)
            .unwrap();
    }

    #[test]
    fn freeze_prunes_and_locks() {
        let mut bank = bank();
        bank.validate_concept("asteroid bodies", Decision::Validated, "a", false)
            .unwrap();
        let pruned = bank.freeze();
        assert_eq!(pruned, vec![("D".to_string(), "shadowing".to_string())]);
        assert_eq!(
            bank.disease("D")
                .unwrap()
                .concept_ids
                .iter()
                .collect::<Vec<_>>(),
            vec!["asteroid bodies"]
        );
        assert!(matches!(
            bank.validate_concept("shadowing", Decision::Rejected, "a", false),
            Err(BankError::Frozen)
        ));
        bank.check_invariants().unwrap();
    }

    #[test]
    fn unknown_concept() {
        let mut bank = bank();
        assert!(matches!(
            bank.validate_concept("nope", Decision::Validated, "a", false),
            Err(BankError::UnknownConcept(_))
        ));
    }

    #[test]
    fn fixture_build_for_three_diseases() {
        let diseases: Vec<String> = [
            "Asteroid Hyalosis",
            "Diabetic Retinopathy",
            "Central Retinal Vein Occlusion",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut options = BuildOptions::default();
        options
            .synonyms
            .insert("calcific deposits", "calcium deposits");
        options
            .synonyms
            .insert("dot and blot hemorrhages", "hemorrhages");
        options.synonyms.insert("flame hemorrhages", "hemorrhages");
        let (bank, raw) = build_bank(&diseases, &FixtureGenerator::retinal(), &options).unwrap();
        assert_eq!(raw.len(), 12);
        let ah: Vec<_> = bank
            .disease("Asteroid Hyalosis")
            .unwrap()
            .concept_ids
            .iter()
            .cloned()
            .collect();
        assert_eq!(
            ah,
            vec!["asteroid bodies", "calcium deposits", "vitreous opacities"]
        );
        let dr: Vec<_> = bank
            .disease("Diabetic Retinopathy")
            .unwrap()
            .concept_ids
            .iter()
            .cloned()
            .collect();
        assert_eq!(dr, vec!["hard exudates", "hemorrhages", "microaneurysms"]);
        // hemorrhages is shared between DR and CRVO
        let crvo = &bank
            .disease("Central Retinal Vein Occlusion")
            .unwrap()
            .concept_ids;
        assert!(crvo.contains("hemorrhages"));
        assert_eq!(bank.concept("hemorrhages").unwrap().support(), 8);
    }
}

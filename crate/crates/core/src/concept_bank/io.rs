//! Bank file format: pretty-printed JSON with the fields `schema_version`,
//! `bank_version`, `frozen`, `concepts[]` and `diseases[]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BankError, Concept, ConceptBank, DiseaseEntry};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankFile {
    schema_version: u32,
    bank_version: u64,
    #[serde(default)]
    frozen: bool,
    concepts: Vec<Concept>,
    diseases: Vec<DiseaseFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct DiseaseFileEntry {
    name: String,
    concept_ids: Vec<String>,
}

pub fn to_bank_string(bank: &ConceptBank) -> String {
    let file = BankFile {
        schema_version: SCHEMA_VERSION,
        bank_version: bank.version,
        frozen: bank.frozen,
        concepts: bank.concepts().cloned().collect(),
        diseases: bank
            .diseases()
            .map(|d| DiseaseFileEntry {
                name: d.name.clone(),
                concept_ids: d.concept_ids.iter().cloned().collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("bank serialises");
    text.push('\n');
    text
}

pub fn parse_bank(text: &str) -> Result<ConceptBank, BankError> {
    // check the schema version before committing to the full layout
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| BankError::Format(e.to_string()))?;
    let found = probe
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| BankError::Format("missing schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(BankError::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let file: BankFile =
        serde_json::from_value(probe).map_err(|e| BankError::Format(e.to_string()))?;

    let mut concepts = BTreeMap::new();
    for concept in file.concepts {
        if concepts.contains_key(&concept.id) {
            return Err(BankError::DuplicateConcept(concept.id));
        }
        concepts.insert(concept.id.clone(), concept);
    }
    let mut diseases = BTreeMap::new();
    for entry in file.diseases {
        if diseases.contains_key(&entry.name) {
            return Err(BankError::DuplicateDisease(entry.name));
        }
        let concept_ids: BTreeSet<String> = entry.concept_ids.into_iter().collect();
        diseases.insert(
            entry.name.clone(),
            DiseaseEntry {
                name: entry.name,
                concept_ids,
            },
        );
    }
    let bank = ConceptBank::from_parts(file.bank_version, file.frozen, concepts, diseases);
    bank.check_invariants()?;
    Ok(bank)
}

pub fn save_bank(bank: &ConceptBank, path: &Path) -> Result<(), BankError> {
    std::fs::write(path, to_bank_string(bank)).map_err(|e| BankError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_bank(path: &Path) -> Result<ConceptBank, BankError> {
    let text = std::fs::read_to_string(path).map_err(|e| BankError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_bank(&text)
}

//! Retention rule: keep only concepts that recur across generations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::canonical::canonicalize;
use super::generator::RawGeneration;
use super::{BankError, Concept, ConceptStatus, GenerationTag};

/// How many generations must mention a concept for it to be retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MinSupport {
    /// Every generation (the strict "common across all prompts" rule).
    #[default]
    All,
    AtLeast(usize),
}

impl MinSupport {
    pub fn required(self, generations: usize) -> usize {
        match self {
            MinSupport::All => generations,
            MinSupport::AtLeast(n) => n.clamp(2, generations.max(2)),
        }
    }
}

impl std::str::FromStr for MinSupport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(MinSupport::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 2 => Ok(MinSupport::AtLeast(n)),
            _ => Err(format!(
                "min support must be `all` or an integer >= 2, got `{s}`"
            )),
        }
    }
}

/// Explicit surface-form -> concept-id map, applied after canonicalisation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymMap(BTreeMap<String, String>);

impl SynonymMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, target: &str) {
        self.0.insert(canonicalize(surface), canonicalize(target));
    }

    pub fn resolve(&self, surface: &str) -> String {
        let key = canonicalize(surface);
        self.0.get(&key).cloned().unwrap_or(key)
    }
}

impl<S: AsRef<str>, T: AsRef<str>> FromIterator<(S, T)> for SynonymMap {
    fn from_iter<I: IntoIterator<Item = (S, T)>>(iter: I) -> Self {
        let mut map = SynonymMap::new();
        for (s, t) in iter {
            map.insert(s.as_ref(), t.as_ref());
        }
        map
    }
}

/// Emits every concept whose id (after synonym mapping) appears in at least
/// `min_support` of the generations. Output is sorted by id.
pub fn intersect_generations(
    raw_lists: &[RawGeneration],
    synonyms: &SynonymMap,
    min_support: MinSupport,
) -> Result<Vec<Concept>, BankError> {
    if raw_lists.len() < 2 {
        return Err(BankError::TooFewGenerations(raw_lists.len()));
    }
    let required = min_support.required(raw_lists.len());

    struct Tally {
        support: BTreeSet<GenerationTag>,
        surfaces: BTreeSet<String>,
    }
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for generation in raw_lists {
        let tag = GenerationTag {
            disease: generation.disease.clone(),
            template_id: generation.template_id,
            generation_index: generation.generation_index,
        };
        for phrase in &generation.phrases {
            let id = synonyms.resolve(phrase);
            if id.is_empty() {
                continue;
            }
            let tally = tallies.entry(id).or_insert_with(|| Tally {
                support: BTreeSet::new(),
                surfaces: BTreeSet::new(),
            });
            tally.support.insert(tag.clone());
            tally.surfaces.insert(canonicalize(phrase));
        }
    }

    Ok(tallies
        .into_iter()
        .filter(|(_, t)| t.support.len() >= required)
        .map(|(id, t)| Concept {
            display_name: id.clone(),
            synonyms: t.surfaces.into_iter().filter(|s| *s != id).collect(),
            status: ConceptStatus::Generated,
            provenance: t.support.into_iter().collect(),
            manual_override: false,
            audit: Vec::new(),
            id,
        })
        .collect())
}

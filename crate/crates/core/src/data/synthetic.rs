//! Synthetic datasets for desk-scale checks.
//!
//! Every synthetic image carries its *visual* concept signature in its id
//! (`syn00012~vorel_quint+abra_cado`), which the mock image encoder decodes.
//! With `noise = 0` the signature equals the image's concept targets; with
//! noise each concept's visual presence is flipped independently.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::concept_bank::{
    Concept, ConceptBank, ConceptStatus, Decision, GenerationTag, TemplateId,
};
use crate::rng::SeededRng;

use super::{write_manifest, DataError, ImageSample, Split};

/// Scheme prefix of synthetic image references.
pub const SYNTH_SCHEME: &str = "synth:";
const SIGNATURE_SEP: char = '~';
const EMPTY_SIGNATURE: &str = "none";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub k: usize,
    pub concepts_per_disease: usize,
    /// Fraction of each disease's concepts borrowed from its neighbour, in [0, 1).
    pub shared_fraction: f64,
    pub images_per_disease: usize,
    /// Per-concept probability of flipping visual presence.
    pub noise: f64,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 4,
            concepts_per_disease: 3,
            shared_fraction: 0.0,
            images_per_disease: 20,
            noise: 0.0,
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub bank: ConceptBank,
    pub samples: Vec<ImageSample>,
}

impl SyntheticDataset {
    pub fn manifest_csv(&self) -> String {
        write_manifest(&self.samples)
    }
}

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut SeededRng) -> String {
    let syllables = 2 + rng.below(2);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS[rng.below(ONSETS.len())],
                VOWELS[rng.below(VOWELS.len())]
            )
        })
        .collect()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset, DataError> {
    let bad = |m: &str| Err(DataError::SynthConfig(m.to_string()));
    if config.k == 0 || config.concepts_per_disease == 0 || config.images_per_disease == 0 {
        return bad("k, concepts_per_disease and images_per_disease must be positive");
    }
    if !(0.0..1.0).contains(&config.shared_fraction) {
        return bad("shared_fraction must lie in [0, 1)");
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return bad("noise must lie in [0, 1]");
    }
    if config.val_fraction < 0.0
        || config.test_fraction < 0.0
        || config.val_fraction + config.test_fraction >= 1.0
    {
        return bad("val_fraction + test_fraction must lie in [0, 1)");
    }

    let cpd = config.concepts_per_disease;
    let n_shared = if config.k > 1 {
        ((config.shared_fraction * cpd as f64).round() as usize).min(cpd / 2)
    } else {
        0
    };
    let own = cpd - n_shared;

    let mut names_rng = SeededRng::for_label(config.seed, "synthetic/concept-names");
    let mut used = BTreeSet::new();
    let mut own_concepts: Vec<Vec<String>> = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let mut list = Vec::with_capacity(own);
        while list.len() < own {
            let name = format!(
                "{} {}",
                pseudo_word(&mut names_rng),
                pseudo_word(&mut names_rng)
            );
            if used.insert(name.clone()) {
                list.push(name);
            }
        }
        own_concepts.push(list);
    }
    let disease_names: Vec<String> = (0..config.k).map(|d| format!("disease_{d:02}")).collect();
    let disease_concepts: Vec<Vec<String>> = (0..config.k)
        .map(|d| {
            let mut list = own_concepts[d].clone();
            let neighbour = (d + config.k - 1) % config.k;
            list.extend(own_concepts[neighbour].iter().take(n_shared).cloned());
            list
        })
        .collect();

    let mut bank = ConceptBank::new();
    for (d, name) in disease_names.iter().enumerate() {
        let concepts = disease_concepts[d]
            .iter()
            .map(|c| Concept {
                id: c.clone(),
                display_name: c.clone(),
                synonyms: Vec::new(),
                status: ConceptStatus::Generated,
                provenance: synthetic_provenance(name),
                manual_override: false,
                audit: Vec::new(),
            })
            .collect();
        bank.add_concepts(name, concepts)
            .expect("fresh bank accepts concepts");
    }
    for id in bank.concepts().map(|c| c.id.clone()).collect::<Vec<_>>() {
        bank.validate_concept_at(
            &id,
            Decision::Validated,
            "synthetic",
            false,
            "1970-01-01T00:00:00Z",
        )
        .expect("synthetic concepts have full support");
    }
    bank.freeze();

    let all_ids = bank.validated_ids();
    let mut samples = Vec::with_capacity(config.k * config.images_per_disease);
    let n = config.images_per_disease;
    let n_test = (config.test_fraction * n as f64).round() as usize;
    let n_val = ((config.val_fraction * n as f64).round() as usize).min(n - n_test);
    for (d, disease) in disease_names.iter().enumerate() {
        let truth: BTreeSet<&str> = disease_concepts[d].iter().map(String::as_str).collect();
        let mut split_rng =
            SeededRng::for_label(config.seed, &format!("synthetic/split/{disease}"));
        let mut order: Vec<usize> = (0..n).collect();
        split_rng.shuffle(&mut order);
        let mut splits = vec![Split::Train; n];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < n_test {
                Split::Test
            } else if rank < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
        }
        let mut noise_rng =
            SeededRng::for_label(config.seed, &format!("synthetic/noise/{disease}"));
        for (i, split) in splits.into_iter().enumerate() {
            let visible: Vec<&str> = all_ids
                .iter()
                .map(String::as_str)
                .filter(|id| truth.contains(id) != noise_rng.bernoulli(config.noise))
                .collect();
            let image_id = format!(
                "syn{:05}{SIGNATURE_SEP}{}",
                d * n + i,
                encode_signature(&visible)
            );
            samples.push(ImageSample {
                image_ref: format!("{SYNTH_SCHEME}{image_id}"),
                image_id,
                disease_labels: [disease.clone()].into_iter().collect(),
                split,
            });
        }
    }
    Ok(SyntheticDataset { bank, samples })
}

fn synthetic_provenance(disease: &str) -> Vec<GenerationTag> {
    TemplateId::ALL
        .iter()
        .flat_map(|&t| {
            (0..2).map(move |i| GenerationTag {
                disease: disease.to_string(),
                template_id: t,
                generation_index: i,
            })
        })
        .collect()
}

fn encode_signature(concepts: &[&str]) -> String {
    if concepts.is_empty() {
        return EMPTY_SIGNATURE.to_string();
    }
    concepts
        .iter()
        .map(|c| c.replace(' ', "_"))
        .collect::<Vec<_>>()
        .join("+")
}

/// Decodes the visual concept ids from a synthetic image reference or id.
/// Returns `None` for anything that is not synthetic.
pub fn parse_signature(image_ref: &str) -> Option<Vec<String>> {
    let id = image_ref.strip_prefix(SYNTH_SCHEME).unwrap_or(image_ref);
    let (_, signature) = id.split_once(SIGNATURE_SEP)?;
    if signature == EMPTY_SIGNATURE {
        return Some(Vec::new());
    }
    Some(signature.split('+').map(|c| c.replace('_', " ")).collect())
}

/// Per-disease concept lists of a synthetic bank, keyed by disease.
pub fn synthetic_concept_sets(bank: &ConceptBank) -> BTreeMap<String, BTreeSet<String>> {
    bank.diseases()
        .map(|d| (d.name.clone(), d.concept_ids.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_concept_targets, parse_manifest};

    #[test]
    fn basic_shape() {
        let ds = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(ds.bank.num_validated(), 12);
        assert_eq!(ds.bank.num_diseases(), 4);
        assert_eq!(ds.samples.len(), 80);
        let train = ds
            .samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .count();
        assert_eq!(train, 64);
    }

    #[test]
    fn noiseless_signature_matches_targets() {
        let ds = generate_synthetic(&SynthConfig {
            shared_fraction: 0.34,
            ..SynthConfig::default()
        })
        .unwrap();
        let (samples, space) = parse_manifest(&ds.manifest_csv(), &ds.bank).unwrap();
        let targets = derive_concept_targets(&samples, &ds.bank, &space).unwrap();
        for (s, t) in samples.iter().zip(&targets) {
            let sig: BTreeSet<String> =
                parse_signature(&s.image_ref).unwrap().into_iter().collect();
            let truth: BTreeSet<String> = space
                .concept_ids
                .iter()
                .zip(&t.targets)
                .filter(|(_, &on)| on)
                .map(|(c, _)| c.clone())
                .collect();
            assert_eq!(sig, truth);
        }
    }

    #[test]
    fn shared_fraction_links_neighbours() {
        let ds = generate_synthetic(&SynthConfig {
            k: 3,
            concepts_per_disease: 4,
            shared_fraction: 0.5,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(ds.bank.num_validated(), 6);
        let sets = synthetic_concept_sets(&ds.bank);
        assert!(sets.values().all(|s| s.len() == 4));
        assert_eq!(
            sets["disease_00"].intersection(&sets["disease_01"]).count(),
            2
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&SynthConfig::default()).unwrap();
        let b = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(a.manifest_csv(), b.manifest_csv());
        let c = generate_synthetic(&SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.manifest_csv(), c.manifest_csv());
    }

    #[test]
    fn noise_flips_some_concepts() {
        let ds = generate_synthetic(&SynthConfig {
            noise: 0.3,
            ..SynthConfig::default()
        })
        .unwrap();
        let flipped = ds
            .samples
            .iter()
            .filter(|s| parse_signature(&s.image_ref).unwrap().len() != 3)
            .count();
        assert!(flipped > 0);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig {
                k: 0,
                ..SynthConfig::default()
            },
            SynthConfig {
                shared_fraction: 1.0,
                ..SynthConfig::default()
            },
            SynthConfig {
                noise: -0.1,
                ..SynthConfig::default()
            },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn non_synthetic_refs_have_no_signature() {
        assert_eq!(parse_signature("images/a.png"), None);
        assert_eq!(parse_signature("synth:syn00001~none"), Some(vec![]));
    }
}

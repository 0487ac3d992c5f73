//! n-shot episode sampling.
//!
//! Each disease draws from its own train pool with a stream seeded by
//! `(seed, disease name)`; pools are sorted by image id first so the draw only
//! depends on pool content. A multi-label image counts toward every disease it
//! carries but appears once in the episode.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

use super::{manifest_hash, ImageSample, LabelSpace, Split};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotEpisode {
    pub n_shots: usize,
    pub seed: u64,
    pub manifest_hash: String,
    /// Per disease (label-space order), the drawn image ids in draw order.
    pub selected_ids: BTreeMap<String, Vec<String>>,
    /// Diseases whose pool held fewer than `n_shots` images, with the pool size.
    pub shortfalls: BTreeMap<String, usize>,
}

impl FewShotEpisode {
    /// Distinct image ids, ordered by first appearance over diseases.
    pub fn unique_ids(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ids in self.selected_ids.values() {
            for id in ids {
                if seen.insert(id.as_str()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Number of id slots before de-duplication.
    pub fn slot_count(&self) -> usize {
        self.selected_ids.values().map(Vec::len).sum()
    }

    /// Per-disease count of episode images carrying the disease (after
    /// de-duplication an image drawn for one disease also serves the others).
    pub fn effective_counts(&self, samples: &[ImageSample]) -> BTreeMap<String, usize> {
        let ids: BTreeSet<String> = self.unique_ids().into_iter().collect();
        let mut counts: BTreeMap<String, usize> =
            self.selected_ids.keys().map(|d| (d.clone(), 0)).collect();
        for s in samples.iter().filter(|s| ids.contains(&s.image_id)) {
            for d in &s.disease_labels {
                if let Some(c) = counts.get_mut(d) {
                    *c += 1;
                }
            }
        }
        counts
    }
}

/// Draws `min(n_shots, available)` train images per disease without replacement.
pub fn sample_episode(
    samples: &[ImageSample],
    space: &LabelSpace,
    n_shots: usize,
    seed: u64,
) -> FewShotEpisode {
    let mut selected_ids = BTreeMap::new();
    let mut shortfalls = BTreeMap::new();
    for disease in &space.diseases {
        let mut pool: Vec<&str> = samples
            .iter()
            .filter(|s| s.split == Split::Train && s.disease_labels.contains(disease))
            .map(|s| s.image_id.as_str())
            .collect();
        pool.sort_unstable();
        if pool.len() < n_shots {
            shortfalls.insert(disease.clone(), pool.len());
        }
        let mut rng = SeededRng::for_label(seed, disease);
        let picked = rng
            .sample_indices(pool.len(), n_shots)
            .into_iter()
            .map(|i| pool[i].to_string())
            .collect();
        selected_ids.insert(disease.clone(), picked);
    }
    FewShotEpisode {
        n_shots,
        seed,
        manifest_hash: manifest_hash(samples),
        selected_ids,
        shortfalls,
    }
}

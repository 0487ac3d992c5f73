use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DataError, ImageSample, LabelSpace, Split};

/// Base diseases are the `ceil(K/2)` most frequent by train count (ties by
/// name); the rest are novel. Both lists are in ranking order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseNovelSplit {
    pub base: Vec<String>,
    pub novel: Vec<String>,
    /// Train-split image ids whose labels are all base diseases.
    pub base_train_ids: Vec<String>,
}

impl BaseNovelSplit {
    pub fn base_set(&self) -> BTreeSet<String> {
        self.base.iter().cloned().collect()
    }

    pub fn novel_set(&self) -> BTreeSet<String> {
        self.novel.iter().cloned().collect()
    }

    /// True when every label of the sample is a base disease.
    pub fn is_base_only(&self, sample: &ImageSample) -> bool {
        sample.disease_labels.iter().all(|d| self.base.contains(d))
    }
}

pub fn split_base_novel(
    samples: &[ImageSample],
    space: &LabelSpace,
) -> Result<BaseNovelSplit, DataError> {
    let train: Vec<&ImageSample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    if train.is_empty() {
        return Err(DataError::EmptyTrainSplit);
    }
    let mut counts: BTreeMap<&str, usize> =
        space.diseases.iter().map(|d| (d.as_str(), 0)).collect();
    for s in &train {
        for d in &s.disease_labels {
            if let Some(c) = counts.get_mut(d.as_str()) {
                *c += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n_base = ranked.len().div_ceil(2);
    let base: Vec<String> = ranked[..n_base]
        .iter()
        .map(|(d, _)| d.to_string())
        .collect();
    let novel: Vec<String> = ranked[n_base..]
        .iter()
        .map(|(d, _)| d.to_string())
        .collect();
    let base_set: BTreeSet<&str> = base.iter().map(String::as_str).collect();
    let base_train_ids = train
        .iter()
        .filter(|s| {
            s.disease_labels
                .iter()
                .all(|d| base_set.contains(d.as_str()))
        })
        .map(|s| s.image_id.clone())
        .collect();
    Ok(BaseNovelSplit {
        base,
        novel,
        base_train_ids,
    })
}

//! Average precision, mAP, support-weighted F1 and seed aggregation.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApOutcome {
    pub value: f64,
    pub had_ties: bool,
    pub no_positives: bool,
}

/// All-points, non-interpolated AP over the score-descending ranking. Ties
/// keep input order; an input without positives scores 0.
pub fn average_precision_detailed(
    scores: &[f64],
    relevance: &[bool],
) -> Result<ApOutcome, EvalError> {
    if scores.len() != relevance.len() {
        return Err(EvalError::Metric(format!(
            "{} scores vs {} relevance labels",
            scores.len(),
            relevance.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let had_ties = order.windows(2).any(|w| scores[w[0]] == scores[w[1]]);
    let positives = relevance.iter().filter(|&&r| r).count();
    if positives == 0 {
        return Ok(ApOutcome {
            value: 0.0,
            had_ties,
            no_positives: true,
        });
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevance[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ApOutcome {
        value: sum / positives as f64,
        had_ties,
        no_positives: false,
    })
}

pub fn average_precision(scores: &[f64], relevance: &[bool]) -> Result<f64, EvalError> {
    let out = average_precision_detailed(scores, relevance)?;
    if out.no_positives {
        warn!("average precision requested without positives; defined as 0");
    }
    Ok(out.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOutcome {
    pub value: f64,
    /// `(class index, AP)` for every class that entered the mean.
    pub per_class: Vec<(usize, f64)>,
    /// Classes without a positive in the ground truth.
    pub excluded: Vec<usize>,
    pub tied_classes: Vec<usize>,
}

/// Macro mAP over `classes`. `scores[i][k]`, `truth[i][k]` per sample and class.
pub fn mean_average_precision(
    scores: &[Vec<f64>],
    truth: &[Vec<bool>],
    classes: &[usize],
) -> Result<MapOutcome, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::Metric(format!(
            "{} score rows vs {} truth rows",
            scores.len(),
            truth.len()
        )));
    }
    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    let mut tied_classes = Vec::new();
    for &k in classes {
        let column: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let rel: Vec<bool> = truth.iter().map(|r| r[k]).collect();
        let out = average_precision_detailed(&column, &rel)?;
        if out.no_positives {
            excluded.push(k);
            continue;
        }
        if out.had_ties {
            tied_classes.push(k);
        }
        per_class.push((k, out.value));
    }
    let value = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(MapOutcome {
        value,
        per_class,
        excluded,
        tied_classes,
    })
}

/// Per-class F1 over binary decisions, averaged with weights equal to class
/// support. Classes outside `classes` are ignored.
pub fn weighted_f1(
    decisions: &[Vec<bool>],
    truth: &[Vec<bool>],
    classes: &[usize],
) -> Result<f64, EvalError> {
    if decisions.len() != truth.len() {
        return Err(EvalError::Metric(format!(
            "{} decision rows vs {} truth rows",
            decisions.len(),
            truth.len()
        )));
    }
    let mut total_support = 0usize;
    let mut acc = 0.0;
    for &k in classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (d, t) in decisions.iter().zip(truth) {
            match (d[k], t[k]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        acc += f1 * support as f64;
        total_support += support;
    }
    Ok(if total_support == 0 {
        0.0
    } else {
        acc / total_support as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[serde(rename = "mAP")]
    Map,
    WeightedF1,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Map => "mAP",
            MetricKind::WeightedF1 => "weighted_f1",
        })
    }
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub metric: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_class: Option<Vec<(String, f64)>>,
}

impl MetricResult {
    pub fn from_seeds(metric: MetricKind, per_seed: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_seed);
        Self {
            metric,
            mean,
            std,
            per_seed,
            per_class: None,
        }
    }

    /// Whether `mean`/`std` agree with `per_seed` to `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        let (mean, std) = mean_std(&self.per_seed);
        (mean - self.mean).abs() <= tol && (std - self.std).abs() <= tol
    }

    /// `mean±std` in percent with one decimal.
    pub fn percent(&self) -> String {
        format!("{:.1}±{:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7, 0.6], &[false, true, false, true]).unwrap(),
            0.5
        );
        assert_eq!(average_precision(&[0.3], &[true]).unwrap(), 1.0);
        assert_eq!(
            average_precision(&[0.3, 0.2], &[false, false]).unwrap(),
            0.0
        );
        assert!(average_precision(&[0.3], &[true, false]).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        let out = average_precision_detailed(&[0.5, 0.5], &[false, true]).unwrap();
        assert!(out.had_ties);
        assert_eq!(out.value, 0.5);
        let out = average_precision_detailed(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(out.value, 1.0);
    }

    #[test]
    fn map_excludes_classes_without_positives() {
        let scores = vec![
            vec![0.9, 0.1, 0.3],
            vec![0.8, 0.7, 0.2],
            vec![0.1, 0.9, 0.4],
        ];
        let truth = vec![
            vec![true, false, false],
            vec![false, true, false],
            vec![false, true, false],
        ];
        let out = mean_average_precision(&scores, &truth, &[0, 1, 2]).unwrap();
        assert_eq!(out.excluded, vec![2]);
        // class 0: AP 1; class 1: ranking [s2, s1, s0] -> AP 1
        assert_eq!(out.value, 1.0);
        let truth = vec![
            vec![false, true, false],
            vec![true, false, false],
            vec![false, true, false],
        ];
        let out = mean_average_precision(&scores, &truth, &[0, 1]).unwrap();
        // class 0 positive ranked 2nd -> 0.5; class 1: ranking s2 (+), s1 (-), s0 (+) -> (1 + 2/3)/2
        assert!((out.value - (0.5 + (1.0 + 2.0 / 3.0) / 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn f1_examples() {
        let truth = vec![
            vec![true, false],
            vec![true, false],
            vec![true, false],
            vec![false, true],
        ];
        assert_eq!(weighted_f1(&truth, &truth, &[0, 1]).unwrap(), 1.0);
        let wrong: Vec<Vec<bool>> = truth
            .iter()
            .map(|r| r.iter().map(|b| !b).collect())
            .collect();
        assert_eq!(weighted_f1(&wrong, &truth, &[0, 1]).unwrap(), 0.0);
        // class 0 (support 3) perfect, class 1 (support 1) never predicted
        let decisions = vec![vec![true, false]; 3]
            .into_iter()
            .chain([vec![false, false]])
            .collect::<Vec<_>>();
        let f1 = weighted_f1(&decisions, &truth, &[0, 1]).unwrap();
        assert!((f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn aggregation_uses_population_std() {
        let r = MetricResult::from_seeds(MetricKind::Map, vec![0.8, 0.9, 1.0]);
        assert!((r.mean - 0.9).abs() < 1e-15);
        assert!((r.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(r.is_consistent(1e-9));
        assert_eq!(r.percent(), "90.0±8.2");
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(
            rows in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 3), proptest::collection::vec(any::<bool>(), 3), proptest::collection::vec(any::<bool>(), 3)), 1..12)
        ) {
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let truth: Vec<Vec<bool>> = rows.iter().map(|r| r.1.clone()).collect();
            let dec: Vec<Vec<bool>> = rows.iter().map(|r| r.2.clone()).collect();
            let m = mean_average_precision(&scores, &truth, &[0, 1, 2]).unwrap().value;
            let f = weighted_f1(&dec, &truth, &[0, 1, 2]).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}

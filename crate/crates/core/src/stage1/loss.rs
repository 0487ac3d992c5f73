//! Concept scores and the mean binary cross-entropy over concepts.

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::Stage1Error;

/// Clamp applied inside the logarithms.
pub const BCE_EPS: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `logit_scale * <image_feature, concept_feature_j>` for every concept row.
pub fn concept_scores(
    logit_scale: f64,
    image_feature: ArrayView1<f64>,
    concept_features: ArrayView2<f64>,
) -> Result<Vec<f64>, Stage1Error> {
    if image_feature.len() != concept_features.ncols() {
        return Err(Stage1Error::Shape(format!(
            "image feature dim {} != concept feature dim {}",
            image_feature.len(),
            concept_features.ncols()
        )));
    }
    Ok(concept_features
        .dot(&image_feature)
        .iter()
        .map(|v| logit_scale * v)
        .collect())
}

/// `B x E` score matrix for a batch of image features (`B x D`).
pub fn score_matrix(
    logit_scale: f64,
    images: ArrayView2<f64>,
    concepts: ArrayView2<f64>,
) -> Array2<f64> {
    images.dot(&concepts.t()) * logit_scale
}

/// Mean BCE over concepts for a single image.
pub fn concept_bce(probabilities: &[f64], targets: &[f64]) -> Result<f64, Stage1Error> {
    if probabilities.len() != targets.len() {
        return Err(Stage1Error::Shape(format!(
            "{} probabilities vs {} targets",
            probabilities.len(),
            targets.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Stage1Error::Shape("empty concept vector".into()));
    }
    let sum: f64 = probabilities
        .iter()
        .zip(targets)
        .map(|(&p, &c)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(c * p.ln() + (1.0 - c) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / probabilities.len() as f64)
}

/// Batch loss (mean over images of the per-image concept BCE) and its
/// gradient w.r.t. the scores.
pub fn bce_with_grad(scores: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let (b, e) = scores.dim();
    let denom = (b * e) as f64;
    let mut grad = Array2::zeros((b, e));
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..e {
            let p = sigmoid(scores[[i, j]]);
            let c = targets[[i, j]];
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= c * pc.ln() + (1.0 - c) * (1.0 - pc).ln();
            grad[[i, j]] = (p - c) / denom;
        }
    }
    (loss / denom, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    #[test]
    fn bce_examples() {
        let oracle = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        let got = concept_bce(&[0.8, 0.3], &[1.0, 0.0]).unwrap();
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - 0.289909).abs() < 1e-6);
        let half = concept_bce(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(concept_bce(&[0.5], &[1.0, 0.0]).is_err());
        assert!(concept_bce(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
    }

    #[test]
    fn scores_examples() {
        let concepts = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let orth = Array1::from(vec![0.0, 0.0, 1.0]);
        let s = concept_scores(10.0, orth.view(), concepts.view()).unwrap();
        assert!(s.iter().all(|&v| sigmoid(v) == 0.5));
        let same = Array1::from(vec![1.0, 0.0, 0.0]);
        let s = concept_scores(10.0, same.view(), concepts.view()).unwrap();
        assert!((sigmoid(s[0]) - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
        assert!(concept_scores(10.0, Array1::zeros(2).view(), concepts.view()).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let scores = array![[0.3, -1.2, 2.0], [0.0, 0.7, -0.4]];
        let targets = array![[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let (_, grad) = bce_with_grad(scores.view(), targets.view());
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut p = scores.clone();
                p[[i, j]] += h;
                let mut m = scores.clone();
                m[[i, j]] -= h;
                let num = (bce_with_grad(p.view(), targets.view()).0
                    - bce_with_grad(m.view(), targets.view()).0)
                    / (2.0 * h);
                assert!((num - grad[[i, j]]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn bce_is_ln2_at_half_for_any_targets(bits in proptest::collection::vec(any::<bool>(), 1..=64)) {
            let t: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let p = vec![0.5; t.len()];
            prop_assert!((concept_bce(&p, &t).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
        }

        #[test]
        fn bce_non_negative(p in proptest::collection::vec(0.0f64..=1.0, 1..20), seed in any::<u64>()) {
            let t: Vec<f64> = (0..p.len()).map(|i| ((seed >> (i % 64)) & 1) as f64).collect();
            prop_assert!(concept_bce(&p, &t).unwrap() >= 0.0);
        }
    }
}

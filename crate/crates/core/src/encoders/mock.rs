//! Deterministic, seeded stand-in for a pretrained vision-language pair.
//!
//! Text encoder: `h = sum_t a_t x_t`, `z = P h + W2 tanh(W1 h + b1)`,
//! `g = z / |z|`, with fixed per-position weights `a_t`. Token embeddings come
//! from a hashed vocabulary table.
//!
//! Image encoder: a synthetic image whose id carries a concept signature `S`
//! maps to `normalize(mean_{j in S} anchor_j + beta * b + jitter)`, where
//! `anchor_j` is the text feature of concept `j`'s bare tokens and `b` a shared
//! image-domain direction. Image files on disk are preprocessed, pooled and
//! randomly projected.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::parse_signature;
use crate::digest::Fingerprinter;
use crate::rng::{derive_seed, fnv1a64, SeededRng};

use super::{
    EncodeMode, EncoderBundle, EncoderError, FeatureVector, ImageEncoder, Preprocessor,
    TextActivation, TextEncoder, Tokenizer,
};

const POOL: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub dim: usize,
    pub max_len: usize,
    pub vocab: usize,
    pub seed: u64,
    pub logit_scale: f64,
    /// Weight of the shared image-domain direction.
    pub domain_weight: f64,
    /// Norm scale of the fixed per-image perturbation.
    pub jitter: f64,
    /// Norm scale of the extra perturbation drawn in train mode.
    pub train_noise: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            max_len: 77,
            vocab: 8192,
            seed: 0,
            logit_scale: 10.0,
            domain_weight: 0.0,
            jitter: 0.05,
            train_noise: 0.02,
        }
    }
}

pub fn mock_bundle(config: &MockConfig) -> Result<EncoderBundle, EncoderError> {
    if config.dim == 0 || config.vocab == 0 || config.max_len < 2 {
        return Err(EncoderError::Config(format!(
            "mock encoder needs dim >= 1, vocab >= 1, max_len >= 2 (got {config:?})"
        )));
    }
    if !(config.logit_scale.is_finite() && config.logit_scale > 0.0) {
        return Err(EncoderError::Config(format!(
            "logit scale must be positive, got {}",
            config.logit_scale
        )));
    }
    let tokenizer = Arc::new(MockTokenizer::new(config));
    let text = Arc::new(MockTextEncoder::new(config));
    let image = MockImageEncoder::new(config, Arc::clone(&text), Arc::clone(&tokenizer));
    Ok(EncoderBundle {
        name: "mock".into(),
        image: Box::new(image),
        text,
        tokenizer,
        logit_scale: config.logit_scale,
    })
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.normal())
}

fn normalize(v: &mut Array1<f64>) {
    let n = v.dot(v).sqrt();
    if n > 0.0 {
        *v /= n;
    }
}

pub struct MockTokenizer {
    table: Array2<f64>,
}

impl MockTokenizer {
    fn new(config: &MockConfig) -> Self {
        let mut rng = SeededRng::for_label(config.seed, "mock/token-embedding");
        let std = 1.0 / (config.dim as f64).sqrt();
        Self {
            table: gaussian_matrix(config.vocab, config.dim, std, &mut rng),
        }
    }
}

impl Tokenizer for MockTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, EncoderError> {
        let vocab = self.table.nrows() as u64;
        let ids: Vec<u32> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| (fnv1a64(w.to_lowercase().as_bytes()) % vocab) as u32)
            .collect();
        if ids.is_empty() {
            return Err(EncoderError::Tokenize {
                concept: text.to_string(),
                reason: "no word tokens".into(),
            });
        }
        Ok(ids)
    }

    fn embed(&self, ids: &[u32]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.table.ncols()));
        for (row, &id) in ids.iter().enumerate() {
            out.row_mut(row).assign(&self.table.row(id as usize));
        }
        out
    }

    fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    fn fingerprint(&self, fp: &mut Fingerprinter) {
        fp.str("mock-tokenizer").f64s(self.table.iter());
    }
}

pub struct MockTextEncoder {
    position_weights: Array1<f64>,
    proj: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
}

struct MockCache {
    len: usize,
    hidden: Array1<f64>,
    unnormalized_norm: f64,
}

impl MockTextEncoder {
    fn new(config: &MockConfig) -> Self {
        let d = config.dim;
        let h = 2 * d;
        let mut rng = SeededRng::for_label(config.seed, "mock/text-encoder");
        let position_weights = Array1::from_shape_simple_fn(config.max_len, || 0.5 + rng.uniform());
        let inv = 1.0 / (d as f64).sqrt();
        let proj = gaussian_matrix(d, d, inv, &mut rng);
        let w1 = gaussian_matrix(h, d, 2.0 * inv, &mut rng);
        let b1 = Array1::from_shape_simple_fn(h, || 0.1 * rng.normal());
        let w2 = gaussian_matrix(d, h, 1.0 / (h as f64).sqrt(), &mut rng);
        Self {
            position_weights,
            proj,
            w1,
            b1,
            w2,
        }
    }
}

impl TextEncoder for MockTextEncoder {
    fn output_dim(&self) -> usize {
        self.proj.nrows()
    }

    fn token_dim(&self) -> usize {
        self.proj.ncols()
    }

    fn max_len(&self) -> usize {
        self.position_weights.len()
    }

    fn forward(&self, sequence: ArrayView2<f64>) -> Result<TextActivation, EncoderError> {
        let len = sequence.nrows();
        if len > self.max_len() {
            return Err(EncoderError::SequenceTooLong {
                len,
                max: self.max_len(),
            });
        }
        if sequence.ncols() != self.token_dim() {
            return Err(EncoderError::Shape(format!(
                "token dim {} != {}",
                sequence.ncols(),
                self.token_dim()
            )));
        }
        let pooled = self
            .position_weights
            .slice(ndarray::s![..len])
            .dot(&sequence);
        let hidden = (self.w1.dot(&pooled) + &self.b1).mapv(f64::tanh);
        let z = self.proj.dot(&pooled) + self.w2.dot(&hidden);
        let norm = z.dot(&z).sqrt().max(f64::MIN_POSITIVE);
        Ok(TextActivation {
            feature: z / norm,
            cache: Box::new(MockCache {
                len,
                hidden,
                unnormalized_norm: norm,
            }),
        })
    }

    fn backward(&self, activation: &TextActivation, grad_feature: ArrayView1<f64>) -> Array2<f64> {
        let cache = activation
            .cache
            .downcast_ref::<MockCache>()
            .expect("activation produced by the mock text encoder");
        let g = &activation.feature;
        let dz = (&grad_feature - &(g * g.dot(&grad_feature))) / cache.unnormalized_norm;
        let dhidden = self.w2.t().dot(&dz) * cache.hidden.mapv(|a| 1.0 - a * a);
        let dpooled = self.proj.t().dot(&dz) + self.w1.t().dot(&dhidden);
        let mut out = Array2::zeros((cache.len, self.token_dim()));
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&(&dpooled * self.position_weights[t]));
        }
        out
    }

    fn fingerprint(&self, fp: &mut Fingerprinter) {
        fp.str("mock-text")
            .f64s(self.position_weights.iter())
            .f64s(self.proj.iter())
            .f64s(self.w1.iter())
            .f64s(self.b1.iter())
            .f64s(self.w2.iter());
    }
}

pub struct MockImageEncoder {
    seed: u64,
    domain: Array1<f64>,
    pixel_proj: Array2<f64>,
    domain_weight: f64,
    jitter: f64,
    train_noise: f64,
    text: Arc<MockTextEncoder>,
    tokenizer: Arc<MockTokenizer>,
    preprocessor: Preprocessor,
    anchors: Mutex<HashMap<String, Array1<f64>>>,
}

impl MockImageEncoder {
    fn new(config: &MockConfig, text: Arc<MockTextEncoder>, tokenizer: Arc<MockTokenizer>) -> Self {
        let mut rng = SeededRng::for_label(config.seed, "mock/image-encoder");
        let mut domain = Array1::from_shape_simple_fn(config.dim, || rng.normal());
        normalize(&mut domain);
        let pixel_proj = gaussian_matrix(config.dim, 3 * POOL * POOL, 1.0, &mut rng);
        Self {
            seed: config.seed,
            domain,
            pixel_proj,
            domain_weight: config.domain_weight,
            jitter: config.jitter,
            train_noise: config.train_noise,
            text,
            tokenizer,
            preprocessor: Preprocessor::default(),
            anchors: Mutex::new(HashMap::new()),
        }
    }

    fn anchor(&self, concept: &str) -> Result<Array1<f64>, EncoderError> {
        if let Some(a) = self.anchors.lock().expect("anchor cache").get(concept) {
            return Ok(a.clone());
        }
        let ids = self.tokenizer.tokenize(concept)?;
        let tokens = self.tokenizer.embed(&ids);
        let anchor = self.text.forward(tokens.view())?.feature;
        self.anchors
            .lock()
            .expect("anchor cache")
            .insert(concept.to_string(), anchor.clone());
        Ok(anchor)
    }

    fn noise(&self, rng: &mut SeededRng, scale: f64) -> Array1<f64> {
        let d = self.domain.len();
        let std = scale / (d as f64).sqrt();
        Array1::from_shape_simple_fn(d, || std * rng.normal())
    }

    fn pixel_feature(&self, tensor: &Array3<f32>) -> Array1<f64> {
        let (_, h, w) = tensor.dim();
        let mut pooled = Array1::<f64>::zeros(3 * POOL * POOL);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let cell = (y * POOL / h) * POOL + x * POOL / w;
                    pooled[c * POOL * POOL + cell] += f64::from(tensor[[c, y, x]]);
                }
            }
        }
        pooled /= (h * w) as f64 / (POOL * POOL) as f64;
        self.pixel_proj.dot(&pooled)
    }
}

impl ImageEncoder for MockImageEncoder {
    fn output_dim(&self) -> usize {
        self.domain.len()
    }

    fn encode(
        &self,
        image_ref: &str,
        mode: EncodeMode,
        rng: &mut SeededRng,
    ) -> Result<FeatureVector, EncoderError> {
        let mut v = if let Some(signature) = parse_signature(image_ref) {
            let mut acc = Array1::<f64>::zeros(self.domain.len());
            for concept in &signature {
                acc += &self.anchor(concept)?;
            }
            if !signature.is_empty() {
                acc /= signature.len() as f64;
            }
            acc + &(&self.domain * self.domain_weight)
        } else {
            let path = Path::new(image_ref);
            if !path.is_file() {
                return Err(EncoderError::Image {
                    image: image_ref.to_string(),
                    reason: "not a synthetic reference and no such file".into(),
                });
            }
            let tensor = self.preprocessor.load(path, mode, rng)?;
            self.pixel_feature(&tensor)
        };
        let mut fixed = SeededRng::new(derive_seed(self.seed, image_ref));
        v += &self.noise(&mut fixed, self.jitter);
        if mode == EncodeMode::Train && self.train_noise > 0.0 {
            v += &self.noise(rng, self.train_noise);
        }
        Ok(FeatureVector::normalized(v))
    }

    fn augments(&self) -> bool {
        self.train_noise > 0.0
    }

    fn fingerprint(&self, fp: &mut Fingerprinter) {
        fp.str("mock-image")
            .u64(self.seed)
            .f64s(self.domain.iter())
            .f64s(self.pixel_proj.iter())
            .f64s([self.domain_weight, self.jitter, self.train_noise].iter());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_concepts, ConceptTokens, PromptContext, TokenPosition};

    fn small() -> EncoderBundle {
        mock_bundle(&MockConfig {
            dim: 16,
            ..Default::default()
        })
        .unwrap()
    }

    /// Scalar loss L = sum_j <c_j, g_j> for fixed random c, checked against
    /// central differences over every context coordinate.
    fn gradient_check(m: usize, position: TokenPosition) -> f64 {
        let bundle = small();
        let concepts: Vec<String> = [
            "asteroid bodies",
            "calcium deposits",
            "hard exudates",
            "drusen",
            "cotton wool spots",
            "vitreous opacities",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let tokens = ConceptTokens::new(&bundle, &concepts).unwrap();
        let mut rng = SeededRng::new(11);
        let ctx = PromptContext::random(m, 16, position, 0.3, &mut rng);
        let coef = Array2::from_shape_simple_fn((concepts.len(), 16), || rng.normal());
        let loss = |c: &PromptContext| {
            let f = encode_concepts(&bundle, c, &tokens).unwrap();
            (&f.features * &coef).sum()
        };
        let feats = encode_concepts(&bundle, &ctx, &tokens).unwrap();
        let analytic = feats.context_gradient(&bundle, &ctx, &tokens, coef.view());
        let h = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..m {
            for k in 0..16 {
                let mut plus = ctx.clone();
                plus.vectors[[i, k]] += h;
                let mut minus = ctx.clone();
                minus.vectors[[i, k]] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[[i, k]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn context_gradient_matches_finite_differences() {
        for position in TokenPosition::ALL {
            for m in [2, 8] {
                let err = gradient_check(m, position);
                assert!(err < 1e-4, "{position} M={m}: rel err {err}");
            }
        }
    }

    #[test]
    fn features_are_unit_and_deterministic() {
        let a = small();
        let b = small();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut rng = SeededRng::new(0);
        let f1 = a
            .encode_image(
                "synth:syn00001~asteroid_bodies+drusen",
                EncodeMode::Eval,
                &mut rng,
            )
            .unwrap();
        let f2 = b
            .encode_image(
                "synth:syn00001~asteroid_bodies+drusen",
                EncodeMode::Eval,
                &mut rng,
            )
            .unwrap();
        assert_eq!(f1, f2);
        assert!((f1.values.dot(&f1.values) - 1.0).abs() < 1e-12);
        let t = a
            .encode_image(
                "synth:syn00001~asteroid_bodies+drusen",
                EncodeMode::Train,
                &mut rng,
            )
            .unwrap();
        assert_ne!(t, f1);
    }

    #[test]
    fn seed_changes_fingerprint() {
        let other = mock_bundle(&MockConfig {
            dim: 16,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(small().fingerprint(), other.fingerprint());
    }

    #[test]
    fn concept_permutation_equivariance() {
        let bundle = small();
        let concepts: Vec<String> = ["a b", "c", "d e f"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let reversed: Vec<String> = concepts.iter().rev().cloned().collect();
        let ctx = PromptContext::random(4, 16, TokenPosition::End, 0.02, &mut SeededRng::new(3));
        let fa = encode_concepts(
            &bundle,
            &ctx,
            &ConceptTokens::new(&bundle, &concepts).unwrap(),
        )
        .unwrap();
        let fb = encode_concepts(
            &bundle,
            &ctx,
            &ConceptTokens::new(&bundle, &reversed).unwrap(),
        )
        .unwrap();
        for j in 0..3 {
            assert_eq!(fa.features.row(j), fb.features.row(2 - j));
        }
    }

    #[test]
    fn unknown_refs_and_pretrained_names_error() {
        let bundle = small();
        assert!(bundle
            .encode_image(
                "/no/such/file.png",
                EncodeMode::Eval,
                &mut SeededRng::new(0)
            )
            .is_err());
        assert!(matches!(
            crate::encoders::load_bundle("ViT-B/16", &MockConfig::default()),
            Err(EncoderError::Unavailable(_))
        ));
    }

    #[test]
    fn image_files_are_encoded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        image::RgbImage::from_fn(40, 30, |x, y| image::Rgb([x as u8 * 6, y as u8 * 8, 50]))
            .save(&path)
            .unwrap();
        let f = small()
            .encode_image(
                path.to_str().unwrap(),
                EncodeMode::Eval,
                &mut SeededRng::new(0),
            )
            .unwrap();
        assert_eq!(f.dim(), 16);
    }
}

//! JSON model file: a header (kind, K, E, label-space digest,
//! hyperparameters) and the parameters as float32 arrays.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    Forest, Mlp, ModelParams, Stage2Error, Stage2Hyper, Stage2Kind, Stage2Model, TaskMode,
};

const FORMAT: &str = "cgp-stage2 v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    header: Header,
    params: ParamsFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: Stage2Kind,
    mode: TaskMode,
    num_diseases: usize,
    num_concepts: usize,
    label_space: String,
    diseases: Vec<String>,
    concept_ids: Vec<String>,
    skipped: Vec<String>,
    hyper: Stage2Hyper,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ParamsFile {
    Linear {
        weights: Vec<Vec<f32>>,
        bias: Vec<f32>,
    },
    Forest {
        forests: Vec<Option<Forest>>,
    },
    Mlp {
        w1: Vec<Vec<f32>>,
        b1: Vec<f32>,
        w2: Vec<Vec<f32>>,
        b2: Vec<f32>,
    },
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f32>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect()
}

fn vec32(v: &Array1<f64>) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn matrix(rows: &[Vec<f32>], shape: (usize, usize), what: &str) -> Result<Array2<f64>, String> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(format!("{what} must be {}x{}", shape.0, shape.1));
    }
    Ok(Array2::from_shape_fn(shape, |(i, j)| f64::from(rows[i][j])))
}

fn vector(v: &[f32], len: usize, what: &str) -> Result<Array1<f64>, String> {
    if v.len() != len {
        return Err(format!("{what} must have length {len}"));
    }
    Ok(v.iter().map(|&x| f64::from(x)).collect())
}

pub fn model_to_json(model: &Stage2Model) -> String {
    let params = match &model.params {
        ModelParams::Linear { weights, bias } => ParamsFile::Linear {
            weights: rows(weights),
            bias: vec32(bias),
        },
        ModelParams::Forest(forests) => ParamsFile::Forest {
            forests: forests.clone(),
        },
        ModelParams::Mlp(mlp) => ParamsFile::Mlp {
            w1: rows(&mlp.w1),
            b1: vec32(&mlp.b1),
            w2: rows(&mlp.w2),
            b2: vec32(&mlp.b2),
        },
    };
    let file = ModelFile {
        format: FORMAT.into(),
        header: Header {
            kind: model.kind,
            mode: model.mode,
            num_diseases: model.num_diseases(),
            num_concepts: model.num_concepts(),
            label_space: model.label_space.clone(),
            diseases: model.diseases.clone(),
            concept_ids: model.concept_ids.clone(),
            skipped: model.skipped.clone(),
            hyper: model.hyper.clone(),
        },
        params,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serialises");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<Stage2Model, String> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if file.format != FORMAT {
        return Err(format!("unsupported format `{}`", file.format));
    }
    let h = file.header;
    let (k, e) = (h.num_diseases, h.num_concepts);
    if h.diseases.len() != k || h.concept_ids.len() != e {
        return Err("header counts disagree with disease/concept lists".into());
    }
    let params = match (h.kind, file.params) {
        (
            Stage2Kind::LogisticRegression | Stage2Kind::LinearSvm,
            ParamsFile::Linear { weights, bias },
        ) => ModelParams::Linear {
            weights: matrix(&weights, (k, e), "weights")?,
            bias: vector(&bias, k, "bias")?,
        },
        (Stage2Kind::RandomForest, ParamsFile::Forest { forests }) => {
            if forests.len() != k {
                return Err(format!("expected {k} forests"));
            }
            let bad = forests
                .iter()
                .flatten()
                .flat_map(|f| &f.trees)
                .any(|t| t.nodes.is_empty() || t.max_feature().is_some_and(|m| m >= e));
            if bad {
                return Err("forest references features outside the concept axis".into());
            }
            ModelParams::Forest(forests)
        }
        (Stage2Kind::Mlp, ParamsFile::Mlp { w1, b1, w2, b2 }) => {
            let hidden = b1.len();
            ModelParams::Mlp(Mlp {
                w1: matrix(&w1, (hidden, e), "w1")?,
                b1: vector(&b1, hidden, "b1")?,
                w2: matrix(&w2, (k, hidden), "w2")?,
                b2: vector(&b2, k, "b2")?,
            })
        }
        (kind, _) => return Err(format!("parameters do not match model kind `{kind}`")),
    };
    Ok(Stage2Model {
        kind: h.kind,
        mode: h.mode,
        hyper: h.hyper,
        label_space: h.label_space,
        diseases: h.diseases,
        concept_ids: h.concept_ids,
        skipped: h.skipped,
        params,
    })
}

pub fn save_model(path: &Path, model: &Stage2Model) -> Result<(), Stage2Error> {
    std::fs::write(path, model_to_json(model)).map_err(|e| Stage2Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_model(path: &Path) -> Result<Stage2Model, Stage2Error> {
    let err = |message: String| Stage2Error::Format {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    model_from_json(&text).map_err(err)
}

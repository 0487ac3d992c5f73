//! Run configuration: a TOML file (or a named preset) with dotted-key
//! overrides layered on top. Overrides win.
//!
//! The digest is the sha256 of the resolved config serialized as canonical
//! JSON (sorted keys). `output_dir` is left out so moving the output does not
//! change what a report claims to be.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::encoders::MockConfig;
use crate::error::{Error, Result};
use crate::eval::{ProtocolConfig, Sweep};
use crate::interpret::Normalization;

pub const PRESETS: &[&str] = &["quickstart"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Files { manifest: PathBuf, bank: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub name: String,
    pub mock: MockConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            name: "mock".into(),
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub few_shot: bool,
    pub base_novel: bool,
    pub ablations: Vec<Sweep>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            few_shot: true,
            base_novel: false,
            ablations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub enabled: bool,
    pub top_k: usize,
    pub bottom_k: usize,
    pub normalization: Normalization,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            top_k: 5,
            bottom_k: 5,
            normalization: Normalization::Sum,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub encoder: EncoderConfig,
    pub tasks: TaskConfig,
    pub protocol: ProtocolConfig,
    pub interpret: InterpretConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

const QUICKSTART: &str = r#"
[data]
kind = "synthetic"
k = 4
concepts_per_disease = 3
images_per_disease = 20

[encoder]
name = "mock"
mock = { dim = 32 }

[tasks]
few_shot = true
base_novel = true

[protocol]
shots = [4, 16]
seeds = [1, 2, 3]
sweep_shots = 16

[protocol.stage1]
epochs = 30
num_tokens = 16
"#;

/// TOML text of a named preset.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "quickstart" => Some(QUICKSTART),
        _ => None,
    }
}

impl RunConfig {
    /// Loads `source` (a preset name or a TOML path), applies `key=value`
    /// overrides in order, then validates.
    pub fn load(source: &str, overrides: &[(String, String)]) -> Result<Self> {
        let text = match preset(source) {
            Some(t) => t.to_string(),
            None => {
                let path = Path::new(source);
                std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
            }
        };
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        for (key, value) in overrides {
            set_key(&mut table, key, value)?;
        }
        Self::from_table(table)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.protocol;
        if p.shots.is_empty() || p.shots.contains(&0) {
            return Err(Error::Config(
                "protocol.shots must be non-empty and positive".into(),
            ));
        }
        if p.seeds.is_empty() {
            return Err(Error::Config("protocol.seeds must be non-empty".into()));
        }
        p.stage1
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.tasks.few_shot || self.tasks.base_novel || !self.tasks.ablations.is_empty()) {
            return Err(Error::Config(
                "no task enabled (tasks.few_shot, tasks.base_novel, tasks.ablations)".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }

    /// Hex sha256 of the canonical JSON form, without `output_dir`.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes to json");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::Config(format!("override {s:?} has an empty key")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Sets a dotted key. The value is read as a TOML literal when it parses as
/// one (numbers, booleans, arrays, inline tables), else as a string.
pub fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = parse_literal(raw);
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for part in parents {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: `{part}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Method;

    #[test]
    fn quickstart_parses() {
        let cfg = RunConfig::load("quickstart", &[]).unwrap();
        assert_eq!(cfg.encoder.mock.dim, 32);
        assert_eq!(cfg.protocol.stage1.epochs, 30);
        assert_eq!(cfg.protocol.stage1.lr, 1e-3);
        assert!(matches!(cfg.data, DataSource::Synthetic(ref s) if s.k == 4));
    }

    #[test]
    fn overrides_win() {
        let o = vec![
            parse_override("protocol.stage1.epochs=8").unwrap(),
            parse_override("protocol.seeds=[9]").unwrap(),
            parse_override("encoder.name=mock").unwrap(),
            parse_override("protocol.method=svm").unwrap(),
        ];
        let cfg = RunConfig::load("quickstart", &o).unwrap();
        assert_eq!(cfg.protocol.stage1.epochs, 8);
        assert_eq!(cfg.protocol.seeds, vec![9]);
        assert_eq!(cfg.protocol.method, Method::Svm);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let o = vec![parse_override("protocol.stage1.epoch=5").unwrap()];
        assert!(RunConfig::load("quickstart", &o).is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn digest_is_stable_and_ignores_output_dir() {
        let a = RunConfig::load("quickstart", &[]).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = RunConfig::load(
            "quickstart",
            &[parse_override("protocol.stage1.epochs=31").unwrap()],
        )
        .unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn toml_round_trip() {
        let a = RunConfig::load("quickstart", &[]).unwrap();
        let b = RunConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_configs() {
        assert!(RunConfig::load(
            "quickstart",
            &[parse_override("protocol.shots=[]").unwrap()]
        )
        .is_err());
        assert!(RunConfig::load(
            "quickstart",
            &[
                parse_override("tasks.few_shot=false").unwrap(),
                parse_override("tasks.base_novel=false").unwrap()
            ]
        )
        .is_err());
        assert!(matches!(
            RunConfig::load("/nonexistent/x.toml", &[]),
            Err(Error::Io { .. })
        ));
    }
}

//! Deterministic JSON report: provenance digests, protocol, per-seed results,
//! aggregates and warnings. No timestamps or host details.

use serde::{Deserialize, Serialize};

use super::protocol::{AblationTable, BaseNovelResult, FewShotResult, ProtocolConfig};

pub const REPORT_FORMAT: &str = "cgp-report v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub bank_version: u64,
    pub label_space: String,
    pub manifest_hash: String,
    pub encoder: String,
    pub encoder_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportResults {
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub few_shot: Vec<FewShotResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_to_novel: Option<BaseNovelResult>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub ablations: Vec<AblationTable>,
    /// Interpretation output, embedded as produced by the interpret module.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interpret: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub task: String,
    pub provenance: Provenance,
    pub protocol: ProtocolConfig,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub results: ReportResults,
}

impl Report {
    pub fn new(task: &str, provenance: Provenance, protocol: ProtocolConfig) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            task: task.into(),
            provenance,
            protocol,
            notes: Vec::new(),
            warnings: Vec::new(),
            results: ReportResults::default(),
        }
    }

    /// Collects warnings carried by the results (excluded classes, ties,
    /// skipped heads, episode shortfalls), de-duplicated and sorted.
    pub fn collect_warnings(&mut self) {
        let mut w: std::collections::BTreeSet<String> = self.warnings.drain(..).collect();
        let seed_runs = self.results.few_shot.iter().flat_map(|r| r.seeds.iter());
        for run in seed_runs {
            for c in &run.excluded_classes {
                w.insert(format!(
                    "n={} seed={}: class `{c}` has no test positives; excluded from mAP",
                    run.shots, run.seed
                ));
            }
            for c in &run.tied_classes {
                w.insert(format!(
                    "n={} seed={}: tied scores in class `{c}`; ranked by input order",
                    run.shots, run.seed
                ));
            }
            for c in &run.skipped_heads {
                w.insert(format!(
                    "n={} seed={}: stage-2 head `{c}` skipped (no positives)",
                    run.shots, run.seed
                ));
            }
            for (d, have) in &run.episode_shortfalls {
                w.insert(format!(
                    "n={} seed={}: `{d}` has only {have} training images",
                    run.shots, run.seed
                ));
            }
        }
        if let Some(b) = &self.results.base_to_novel {
            for d in &b.excluded_novel {
                w.insert(format!("novel class `{d}` has no test samples; excluded"));
            }
        }
        self.warnings = w.into_iter().collect();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

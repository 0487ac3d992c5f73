//! Row/column tables for diffing against the published layouts.

use serde::{Deserialize, Serialize};

use super::protocol::{AblationTable, BaseNovelResult, FewShotResult, Sweep};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    /// `(row label, cells)`.
    pub rows: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(label);
            for c in cells {
                out.push('\t');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("**{}**\n\n| {} |\n|", self.title, self.columns.join(" | "));
        for _ in &self.columns {
            out.push_str("---|");
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(&format!("| {} | {} |\n", label, cells.join(" | ")));
        }
        out
    }

    /// Few-shot mAP by shot count (one row per method).
    pub fn few_shot(results: &[FewShotResult]) -> Self {
        let mut columns = vec!["method".to_string()];
        columns.extend(results.iter().map(|r| format!("n={}", r.shots)));
        let mut rows: Vec<(String, Vec<String>)> = Vec::new();
        for r in results {
            let label = r.method.label().to_string();
            match rows.iter_mut().find(|(l, _)| *l == label) {
                Some((_, cells)) => cells.push(r.map.percent()),
                None => rows.push((label, vec![r.map.percent()])),
            }
        }
        Self {
            title: "Few-shot classification, mAP (mean±std over seeds)".into(),
            columns,
            rows,
        }
    }

    pub fn base_to_novel(result: &BaseNovelResult) -> Self {
        Self {
            title: format!(
                "Base-to-novel ({} base / {} novel), novel classes only",
                result.base.len(),
                result.novel.len()
            ),
            columns: vec!["method".into(), "mAP".into(), "weighted F1".into()],
            rows: vec![(
                result.method.label().to_string(),
                vec![
                    result.novel_map.percent(),
                    result.novel_weighted_f1.percent(),
                ],
            )],
        }
    }

    pub fn ablation(table: &AblationTable) -> Self {
        let title = match table.sweep {
            Sweep::TokenPosition => "Concept token position, mAP",
            Sweep::NumTokens => "Number of context tokens, mAP",
            Sweep::Stage2 => "Stage-2 classifier by shot count, mAP",
        };
        let mut columns = vec!["method".to_string()];
        columns.extend(table.columns.iter().cloned());
        Self {
            title: title.into(),
            columns,
            rows: table
                .rows
                .iter()
                .map(|r| {
                    (
                        r.method.label().to_string(),
                        r.cells.iter().map(|c| c.map.percent()).collect(),
                    )
                })
                .collect(),
        }
    }
}

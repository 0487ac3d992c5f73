//! Sankey flow export: concept nodes feed disease nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ContributionReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Concept,
    Disease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyNode {
    pub name: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyLink {
    pub source: usize,
    pub target: usize,
    /// Link width: absolute normalized contribution.
    pub value: f64,
    pub contribution: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SankeyFlow {
    pub attribution: String,
    pub nodes: Vec<SankeyNode>,
    pub links: Vec<SankeyLink>,
}

impl SankeyFlow {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("flow serializes");
        s.push('\n');
        s
    }
}

/// Concept nodes come first in order of first appearance, then one node per
/// report's disease in report order.
pub fn export_sankey(reports: &[ContributionReport], top_k: usize, bottom_k: usize) -> SankeyFlow {
    let mut nodes = Vec::new();
    let mut concept_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut picked = Vec::with_capacity(reports.len());
    for report in reports {
        let top = report.top(top_k);
        let entries: Vec<_> = top
            .iter()
            .chain(report.bottom(bottom_k, top.len()))
            .collect();
        for e in &entries {
            concept_index
                .entry(e.concept_id.as_str())
                .or_insert_with(|| {
                    nodes.push(SankeyNode {
                        name: e.concept_id.clone(),
                        kind: NodeKind::Concept,
                    });
                    nodes.len() - 1
                });
        }
        picked.push(entries);
    }
    let mut links = Vec::new();
    for (report, entries) in reports.iter().zip(picked) {
        nodes.push(SankeyNode {
            name: report.disease.clone(),
            kind: NodeKind::Disease,
        });
        let target = nodes.len() - 1;
        for e in entries {
            links.push(SankeyLink {
                source: concept_index[e.concept_id.as_str()],
                target,
                value: e.contribution.abs(),
                contribution: e.contribution,
                raw: e.raw,
            });
        }
    }
    SankeyFlow {
        attribution: reports
            .first()
            .map(|r| r.attribution.clone())
            .unwrap_or_else(|| super::ATTRIBUTION.to_string()),
        nodes,
        links,
    }
}

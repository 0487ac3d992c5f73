//! The two concept-elicitation prompt templates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BankError;

const DISEASE_SLOT: &str = "{disease}";

const EXPLICIT_CONCEPTS: &str =
    "You are assisting an ophthalmologist. List the key visual concepts \
that characterize {disease} in a color retinal fundus image. Answer with a comma-separated list \
of short noun phrases and nothing else.";

const VS_NORMAL_COMPARISON: &str = "You are assisting an ophthalmologist. Compared with a normal \
retinal fundus image, which diagnostic concepts would indicate {disease} in a color fundus \
photograph? Answer with a comma-separated list of short noun phrases and nothing else.";

/// The clause that distinguishes the comparison template.
pub const NORMAL_FUNDUS_CLAUSE: &str = "Compared with a normal retinal fundus image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ExplicitConcepts,
    VsNormalComparison,
}

impl TemplateId {
    pub const ALL: [TemplateId; 2] = [TemplateId::ExplicitConcepts, TemplateId::VsNormalComparison];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ExplicitConcepts => "explicit_concepts",
            TemplateId::VsNormalComparison => "vs_normal_comparison",
        }
    }

    fn text(self) -> &'static str {
        match self {
            TemplateId::ExplicitConcepts => EXPLICIT_CONCEPTS,
            TemplateId::VsNormalComparison => VS_NORMAL_COMPARISON,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = BankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit_concepts" | "1" => Ok(TemplateId::ExplicitConcepts),
            "vs_normal_comparison" | "2" => Ok(TemplateId::VsNormalComparison),
            other => Err(BankError::UnknownTemplate(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub disease_name: String,
    pub template_id: TemplateId,
    pub rendered_prompt: String,
}

pub fn render_template(
    disease_name: &str,
    template_id: TemplateId,
) -> Result<GenerationRequest, BankError> {
    let disease = disease_name.trim();
    if disease.is_empty() {
        return Err(BankError::EmptyDiseaseName);
    }
    Ok(GenerationRequest {
        disease_name: disease.to_string(),
        template_id,
        rendered_prompt: template_id.text().replacen(DISEASE_SLOT, disease, 1),
    })
}

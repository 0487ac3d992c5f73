//! Text-generation backends used to elicit candidate concepts.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::canonicalize;
use super::templates::{render_template, TemplateId};
use super::BankError;

#[derive(Debug, Clone, Error)]
pub enum GeneratorError {
    /// Network or service failure; worth retrying.
    #[error("transport: {0}")]
    Transport(String),
    #[error("generator misconfigured: {0}")]
    Config(String),
}

/// Anything that can answer a rendered prompt with free text.
pub trait ConceptGenerator: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, GeneratorError>;
}

/// One generator call and what came back, stored verbatim for review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub disease: String,
    pub template_id: TemplateId,
    pub generation_index: u32,
    pub prompt: String,
    pub response: String,
    pub phrases: Vec<String>,
    /// Set when the response could not be parsed into any phrase.
    pub warning: Option<String>,
}

/// Splits a response into phrases. Accepts a JSON string array or a newline /
/// comma / semicolon separated list, with optional bullets or numbering.
pub fn parse_phrases(response: &str) -> Vec<String> {
    let trimmed = response.trim();
    if trimmed.starts_with('[') {
        if let Ok(items) = serde_json::from_str::<Vec<String>>(trimmed) {
            return items.into_iter().filter_map(clean_phrase).collect();
        }
    }
    let body = trimmed.trim_start_matches('[').trim_end_matches(']');
    body.split(['\n', ',', ';'])
        .filter_map(clean_phrase)
        .collect()
}

fn clean_phrase(raw: impl AsRef<str>) -> Option<String> {
    let mut s = raw.as_ref().trim();
    s = s.trim_start_matches(|c: char| c == '-' || c == '*' || c == '•' || c.is_whitespace());
    // "1." / "2)" numbering
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            s = r.trim_start();
        }
    }
    if let Some(r) = s.strip_prefix("and ") {
        s = r;
    }
    let s = s.trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    let words = s.split_whitespace().count();
    if canonicalize(s).is_empty() || words > 8 {
        None
    } else {
        Some(s.to_string())
    }
}

/// Calls `generator` `repeats_per_template` times per template. Output is
/// ordered by (template, generation_index).
pub fn collect_generations(
    disease_name: &str,
    generator: &dyn ConceptGenerator,
    repeats_per_template: u32,
    max_attempts: u32,
) -> Result<Vec<RawGeneration>, BankError> {
    if repeats_per_template < 2 {
        return Err(BankError::TooFewRepeats(repeats_per_template));
    }
    let mut out = Vec::with_capacity(2 * repeats_per_template as usize);
    for template in TemplateId::ALL {
        let request = render_template(disease_name, template)?;
        for generation_index in 0..repeats_per_template {
            let response =
                complete_with_retries(generator, &request.rendered_prompt, max_attempts)?;
            let phrases = parse_phrases(&response);
            let warning = if phrases.is_empty() {
                warn!(
                    "{disease_name}: {template}#{generation_index} produced no parseable phrases"
                );
                Some("unparseable or empty response".to_string())
            } else {
                None
            };
            out.push(RawGeneration {
                disease: request.disease_name.clone(),
                template_id: template,
                generation_index,
                prompt: request.rendered_prompt.clone(),
                response,
                phrases,
                warning,
            });
        }
    }
    Ok(out)
}

fn complete_with_retries(
    generator: &dyn ConceptGenerator,
    prompt: &str,
    max_attempts: u32,
) -> Result<String, BankError> {
    let attempts = max_attempts.max(1);
    let mut last = None;
    for attempt in 1..=attempts {
        match generator.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(GeneratorError::Transport(msg)) => {
                warn!("generator attempt {attempt}/{attempts} failed: {msg}");
                last = Some(msg);
            }
            Err(e @ GeneratorError::Config(_)) => return Err(BankError::Generator(e.to_string())),
        }
    }
    Err(BankError::Generator(format!(
        "gave up after {attempts} attempts: {}",
        last.unwrap_or_default()
    )))
}

/// Canned responses: canonical disease name -> template -> responses.
pub type FixtureTable = BTreeMap<String, BTreeMap<TemplateId, Vec<String>>>;

/// Offline generator with canned answers keyed by disease and template.
///
/// Successive calls for the same (disease, template) cycle through the listed
/// responses, so repeated generations can differ the way a sampled model does.
/// Prompts that match no entry get `fallback`.
#[derive(Debug, Default)]
pub struct FixtureGenerator {
    table: FixtureTable,
    fallback: String,
    calls: Mutex<BTreeMap<(String, TemplateId), usize>>,
}

impl FixtureGenerator {
    pub fn new(table: FixtureTable, fallback: impl Into<String>) -> Self {
        let table = table
            .into_iter()
            .map(|(disease, per_template)| (canonicalize(&disease), per_template))
            .collect();
        Self {
            table,
            fallback: fallback.into(),
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    /// Answers every prompt with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        Self::new(FixtureTable::new(), response)
    }

    /// Built-in answers for a few retinal diseases.
    pub fn retinal() -> Self {
        let mut table = FixtureTable::new();
        let mut add = |disease: &str, explicit: &[&str], comparison: &[&str]| {
            let mut per = BTreeMap::new();
            per.insert(
                TemplateId::ExplicitConcepts,
                explicit.iter().map(|s| s.to_string()).collect(),
            );
            per.insert(
                TemplateId::VsNormalComparison,
                comparison.iter().map(|s| s.to_string()).collect(),
            );
            table.insert(disease.to_string(), per);
        };
        add(
            "Asteroid Hyalosis",
            &[
                "asteroid bodies, vitreous opacities, calcific deposits",
                "1. Asteroid bodies\n2. Vitreous opacities\n3. Calcific deposits\n4. Refractile particles",
            ],
            &[
                "calcium deposits, loss of retinal detail visualization, shadowing, vitreous opacities, asteroid bodies",
                "Asteroid bodies; vitreous opacities; calcium deposits; and shadowing",
            ],
        );
        add(
            "Diabetic Retinopathy",
            &[
                "microaneurysms, hard exudates, hemorrhages, cotton wool spots",
                "- Microaneurysms\n- Hemorrhages\n- Hard exudates\n- Neovascularization",
            ],
            &[
                "microaneurysms, dot and blot hemorrhages, hard exudates, venous beading",
                "hard exudates, microaneurysms, hemorrhages",
            ],
        );
        add(
            "Central Retinal Vein Occlusion",
            &[
                "venous engorgement, hemorrhages, macular edema, venous changes",
                "flame hemorrhages, venous changes, venous engorgement, optic disc swelling",
            ],
            &[
                "tortuous veins, hemorrhages, venous changes, venous engorgement",
                "venous engorgement, hemorrhages, cotton wool spots, venous changes",
            ],
        );
        Self::new(table, "[]")
    }

    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let table: FixtureTable =
            serde_json::from_str(text).map_err(|e| GeneratorError::Config(e.to_string()))?;
        Ok(Self::new(table, "[]"))
    }

    fn lookup(&self, prompt: &str) -> Option<(String, TemplateId, &Vec<String>)> {
        self.table.iter().find_map(|(disease, per_template)| {
            per_template.iter().find_map(|(&template, responses)| {
                matches_ignoring_disease_case(prompt, template, disease)
                    .then(|| (disease.clone(), template, responses))
            })
        })
    }
}

fn matches_ignoring_disease_case(
    prompt: &str,
    template: TemplateId,
    canonical_disease: &str,
) -> bool {
    let Ok(probe) = render_template("\u{0}", template) else {
        return false;
    };
    let Some((head, tail)) = probe.rendered_prompt.split_once('\u{0}') else {
        return false;
    };
    prompt
        .strip_prefix(head)
        .and_then(|rest| rest.strip_suffix(tail))
        .is_some_and(|disease| canonicalize(disease) == canonical_disease)
}

impl ConceptGenerator for FixtureGenerator {
    fn complete(&self, prompt: &str) -> Result<String, GeneratorError> {
        let Some((disease, template, responses)) = self.lookup(prompt) else {
            return Ok(self.fallback.clone());
        };
        if responses.is_empty() {
            return Ok(self.fallback.clone());
        }
        let mut calls = self.calls.lock().expect("fixture call counter poisoned");
        let counter = calls.entry((disease, template)).or_insert(0);
        let response = responses[*counter % responses.len()].clone();
        *counter += 1;
        Ok(response)
    }
}

/// Chat-completion client configured from the environment:
/// `CGP_LLM_ENDPOINT` (default the OpenAI chat-completions URL),
/// `CGP_LLM_API_KEY` (falls back to `OPENAI_API_KEY`) and
/// `CGP_LLM_MODEL` (default `gpt-3.5-turbo`).
#[derive(Debug, Clone)]
pub struct LiveGenerator {
    endpoint: String,
    api_key: String,
    model: String,
    timeout: Duration,
}

impl LiveGenerator {
    pub fn from_env() -> Result<Self, GeneratorError> {
        let api_key = std::env::var("CGP_LLM_API_KEY")
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .map_err(|_| GeneratorError::Config("CGP_LLM_API_KEY is not set".into()))?;
        Ok(Self {
            endpoint: std::env::var("CGP_LLM_ENDPOINT")
                .unwrap_or_else(|_| "https://api.openai.com/v1/chat/completions".into()),
            api_key,
            model: std::env::var("CGP_LLM_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into()),
            timeout: Duration::from_secs(60),
        })
    }
}

impl ConceptGenerator for LiveGenerator {
    fn complete(&self, prompt: &str) -> Result<String, GeneratorError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut response = agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| GeneratorError::Transport(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GeneratorError::Transport("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn parses_common_list_shapes() {
        assert_eq!(parse_phrases("a, b, and c."), vec!["a", "b", "c"]);
        assert_eq!(
            parse_phrases("1. Foo bar\n2) baz\n- qux"),
            vec!["Foo bar", "baz", "qux"]
        );
        assert_eq!(parse_phrases(r#"["x y", "z"]"#), vec!["x y", "z"]);
        assert!(parse_phrases("[]").is_empty());
        assert!(parse_phrases("   ").is_empty());
    }

    #[test]
    fn fixture_cycles_per_template() {
        let fixture = FixtureGenerator::retinal();
        let t1 = render_template("Asteroid Hyalosis", TemplateId::ExplicitConcepts).unwrap();
        let a = fixture.complete(&t1.rendered_prompt).unwrap();
        let b = fixture.complete(&t1.rendered_prompt).unwrap();
        let c = fixture.complete(&t1.rendered_prompt).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, c);
        // casing of the disease name does not matter
        let lower = render_template("asteroid hyalosis", TemplateId::ExplicitConcepts).unwrap();
        assert_ne!(fixture.complete(&lower.rendered_prompt).unwrap(), "[]");
    }

    #[test]
    fn collects_two_by_two_with_tags() {
        let fixture = FixtureGenerator::retinal();
        let gens = collect_generations("Asteroid Hyalosis", &fixture, 2, 3).unwrap();
        let tags: Vec<_> = gens
            .iter()
            .map(|g| (g.template_id, g.generation_index))
            .collect();
        assert_eq!(
            tags,
            vec![
                (TemplateId::ExplicitConcepts, 0),
                (TemplateId::ExplicitConcepts, 1),
                (TemplateId::VsNormalComparison, 0),
                (TemplateId::VsNormalComparison, 1),
            ]
        );
        let t1: Vec<String> = gens[0].phrases.iter().map(|p| canonicalize(p)).collect();
        for expected in ["asteroid bodies", "vitreous opacities", "calcific deposits"] {
            assert!(t1.contains(&expected.to_string()));
        }
        let t2: Vec<String> = gens[2].phrases.iter().map(|p| canonicalize(p)).collect();
        for expected in [
            "calcium deposits",
            "shadowing",
            "loss of retinal detail visualization",
        ] {
            assert!(t2.contains(&expected.to_string()));
        }
    }

    #[test]
    fn empty_responses_set_warning_flags() {
        let fixture = FixtureGenerator::constant("[]");
        let gens = collect_generations("Anything", &fixture, 2, 1).unwrap();
        assert_eq!(gens.len(), 4);
        assert!(gens
            .iter()
            .all(|g| g.phrases.is_empty() && g.warning.is_some()));
    }

    #[test]
    fn requires_two_repeats() {
        let fixture = FixtureGenerator::constant("a");
        assert!(matches!(
            collect_generations("X", &fixture, 1, 1),
            Err(BankError::TooFewRepeats(1))
        ));
    }

    struct Flaky {
        failures_left: AtomicU32,
    }

    impl ConceptGenerator for Flaky {
        fn complete(&self, _prompt: &str) -> Result<String, GeneratorError> {
            if self.failures_left.load(Ordering::SeqCst) > 0 {
                self.failures_left.fetch_sub(1, Ordering::SeqCst);
                Err(GeneratorError::Transport("connection reset".into()))
            } else {
                Ok("a, b".into())
            }
        }
    }

    #[test]
    fn transport_errors_are_retried_then_surface() {
        let flaky = Flaky {
            failures_left: AtomicU32::new(2),
        };
        assert!(collect_generations("X", &flaky, 2, 3).is_ok());
        let hopeless = Flaky {
            failures_left: AtomicU32::new(100),
        };
        assert!(matches!(
            collect_generations("X", &hopeless, 2, 3),
            Err(BankError::Generator(_))
        ));
    }
}

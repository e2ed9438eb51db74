use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Theme;
use crate::error::{Error, Result};
use crate::transport::JsonClient;

/// Zero-shot multi-label scorer: one score in [0, 1] per label.
pub trait ThemeClassifier: Send + Sync {
    fn score(&self, text: &str, labels: &[String]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedTheme {
    pub label: String,
    #[serde(default)]
    pub description: String,
}

/// Generative model that proposes themes from sample texts.
pub trait ThemeGenerator: Send + Sync {
    fn generate(&self, samples: &[String], existing: &[Theme]) -> Result<Vec<ProposedTheme>>;
}

pub(super) fn check_scores(scores: Vec<f64>, labels: &[String], raw: impl FnOnce() -> String) -> Result<Vec<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Parse {
            message: format!("expected {} scores, got {}", labels.len(), scores.len()),
            raw: raw(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Parse {
            message: format!("score {bad} outside [0, 1]"),
            raw: raw(),
        });
    }
    Ok(scores)
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
    labels: &'a [String],
    multi_label: bool,
}

#[derive(Serialize, Deserialize)]
struct ClassifyResponse {
    scores: Vec<f64>,
}

pub struct HttpClassifier {
    client: JsonClient,
}

impl HttpClassifier {
    pub const ENV_URL: &'static str = "CLASSIFY_URL";

    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            client: JsonClient::new(url, timeout),
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let url = std::env::var(Self::ENV_URL).map_err(|_| Error::Config(format!("{} is not set", Self::ENV_URL)))?;
        Ok(Self::new(&url, timeout))
    }
}

impl ThemeClassifier for HttpClassifier {
    fn score(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        let resp: ClassifyResponse = self.client.post(&ClassifyRequest {
            text,
            labels,
            multi_label: true,
        })?;
        let raw = || serde_json::json!({ "scores": &resp.scores }).to_string();
        check_scores(resp.scores.clone(), labels, raw)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    samples: &'a [String],
    existing_themes: Vec<ProposedTheme>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    themes: Vec<ProposedTheme>,
}

pub struct HttpGenerator {
    client: JsonClient,
}

impl HttpGenerator {
    pub const ENV_URL: &'static str = "GENERATE_URL";

    pub fn new(url: &str, timeout: Duration) -> Self {
        Self {
            client: JsonClient::new(url, timeout),
        }
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let url = std::env::var(Self::ENV_URL).map_err(|_| Error::Config(format!("{} is not set", Self::ENV_URL)))?;
        Ok(Self::new(&url, timeout))
    }
}

impl ThemeGenerator for HttpGenerator {
    fn generate(&self, samples: &[String], existing: &[Theme]) -> Result<Vec<ProposedTheme>> {
        let existing_themes = existing
            .iter()
            .map(|t| ProposedTheme {
                label: t.label.clone(),
                description: t.description.clone(),
            })
            .collect();
        let resp: GenerateResponse = self.client.post(&GenerateRequest { samples, existing_themes })?;
        Ok(resp.themes)
    }
}

/// Deterministic classifier: the score for a label is the fraction of the
/// label's words that occur in the text (case-insensitive). Texts listed in
/// `fixed` return their table scores instead.
#[derive(Debug, Clone, Default)]
pub struct KeywordClassifier {
    pub fixed: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ThemeClassifier for KeywordClassifier {
    fn score(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        if let Some(table) = self.fixed.get(text) {
            return Ok(labels.iter().map(|l| table.get(l).copied().unwrap_or(0.0)).collect());
        }
        let words: std::collections::HashSet<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        Ok(labels
            .iter()
            .map(|l| {
                let parts: Vec<String> = l
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase)
                    .collect();
                if parts.is_empty() {
                    return 0.0;
                }
                parts.iter().filter(|p| words.contains(*p)).count() as f64 / parts.len() as f64
            })
            .collect())
    }
}

/// Returns a fixed theme list regardless of input.
#[derive(Debug, Clone, Default)]
pub struct StaticGenerator {
    pub themes: Vec<ProposedTheme>,
}

impl ThemeGenerator for StaticGenerator {
    fn generate(&self, _samples: &[String], _existing: &[Theme]) -> Result<Vec<ProposedTheme>> {
        Ok(self.themes.clone())
    }
}

//! Theme dictionaries, multi-label classification, coverage scoring and
//! confidence calibration.

mod analytics;
mod provider;

pub use analytics::{dominant_theme_flow, theme_cooccurrence, theme_series, FlowRecord, PairStat, SeriesPoint, ThemeSeries, ThemedUnit};
pub use provider::{
    HttpClassifier, HttpGenerator, KeywordClassifier, ProposedTheme, StaticGenerator, ThemeClassifier, ThemeGenerator,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Timestep;
use crate::error::{Error, Result};

pub const DEFAULT_CONFIDENCE: f64 = 0.7;
pub const DEFAULT_RECALL_FLOOR: f64 = 0.5;
pub const DEFAULT_CALIBRATION_SAMPLE: usize = 200;
pub const DEFAULT_DICTIONARY_RUNS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theme {
    pub label: String,
    pub description: String,
    pub emerged_at: Timestep,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThemeDictionary {
    pub themes: Vec<Theme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcs: Option<f64>,
    pub generation_run: u32,
}

impl ThemeDictionary {
    pub fn labels(&self) -> Vec<String> {
        self.themes.iter().map(|t| t.label.clone()).collect()
    }

    pub fn get(&self, label: &str) -> Option<&Theme> {
        let key = fold(label);
        self.themes.iter().find(|t| fold(&t.label) == key)
    }
}

fn fold(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Per-unit label scores. Which labels count as assigned depends on the
/// confidence threshold applied downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeAssignment {
    pub unit_id: String,
    pub scores: BTreeMap<String, f64>,
}

impl ThemeAssignment {
    pub fn assigned(&self, threshold: f64) -> BTreeSet<String> {
        self.scores
            .iter()
            .filter(|(_, s)| **s >= threshold)
            .map(|(l, _)| l.clone())
            .collect()
    }

    fn max_over(&self, labels: &[String]) -> Option<f64> {
        labels.iter().filter_map(|l| self.scores.get(l)).copied().reduce(f64::max)
    }
}

/// Merges provider output into `existing`: known labels (case-folded) keep
/// their emergence timestep, new labels emerge at `t`.
pub fn propose_themes(
    generator: &dyn ThemeGenerator,
    samples: &[String],
    existing: &ThemeDictionary,
    t: Timestep,
    run: u32,
) -> Result<ThemeDictionary> {
    let proposed = generator.generate(samples, &existing.themes)?;
    let mut themes = existing.themes.clone();
    let mut known: HashSet<String> = themes.iter().map(|th| fold(&th.label)).collect();
    for p in proposed {
        let key = fold(&p.label);
        if key.is_empty() {
            return Err(Error::Parse {
                message: "theme with empty label".into(),
                raw: serde_json::to_string(&p).unwrap_or_default(),
            });
        }
        if known.contains(&key) {
            if let Some(th) = themes.iter_mut().find(|th| fold(&th.label) == key) {
                if !p.description.is_empty() {
                    th.description = p.description;
                }
            }
            continue;
        }
        known.insert(key);
        themes.push(Theme {
            label: p.label.trim().to_string(),
            description: p.description,
            emerged_at: t,
        });
    }
    Ok(ThemeDictionary {
        themes,
        tcs: None,
        generation_run: run,
    })
}

pub fn classify(classifier: &dyn ThemeClassifier, unit_id: &str, text: &str, themes: &[Theme]) -> Result<ThemeAssignment> {
    if themes.is_empty() {
        return Err(Error::Domain("cannot classify against an empty theme list".into()));
    }
    let labels: Vec<String> = themes.iter().map(|t| t.label.clone()).collect();
    let scores = provider::check_scores(classifier.score(text, &labels)?, &labels, || {
        format!("scores for {unit_id}")
    })?;
    Ok(ThemeAssignment {
        unit_id: unit_id.to_string(),
        scores: labels.into_iter().zip(scores).collect(),
    })
}

/// Classifies `(unit_id, text)` pairs with at most `max_in_flight`
/// concurrent provider calls, preserving input order.
pub fn classify_all(
    classifier: &dyn ThemeClassifier,
    units: &[(String, String)],
    themes: &[Theme],
    max_in_flight: usize,
) -> Result<Vec<ThemeAssignment>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("classifier pool: {e}")))?;
    pool.install(|| {
        units
            .par_iter()
            .map(|(id, text)| classify(classifier, id, text, themes))
            .collect()
    })
}

/// Theme coverage score: share of units whose best score over the
/// dictionary's labels reaches `threshold`.
pub fn tcs(dictionary: &ThemeDictionary, corpus: &[ThemeAssignment], threshold: f64) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Domain("coverage of an empty corpus".into()));
    }
    let labels = dictionary.labels();
    if labels.is_empty() {
        return Ok(0.0);
    }
    let covered = corpus
        .iter()
        .filter(|a| a.max_over(&labels).is_some_and(|m| m >= threshold))
        .count();
    Ok(covered as f64 / corpus.len() as f64)
}

/// Highest-coverage dictionary; ties go to fewer themes, then the earliest
/// generation run. The returned dictionary carries its score.
pub fn select_dictionary(candidates: &[ThemeDictionary], corpus: &[ThemeAssignment], threshold: f64) -> Result<ThemeDictionary> {
    let mut scored = candidates
        .iter()
        .map(|d| {
            Ok(ThemeDictionary {
                tcs: Some(tcs(d, corpus, threshold)?),
                ..d.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        b.tcs
            .unwrap_or(0.0)
            .total_cmp(&a.tcs.unwrap_or(0.0))
            .then(a.themes.len().cmp(&b.themes.len()))
            .then(a.generation_run.cmp(&b.generation_run))
    });
    scored
        .into_iter()
        .next()
        .ok_or_else(|| Error::Domain("no candidate dictionaries".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when no candidate reached the recall floor and the
    /// max-precision threshold was returned instead.
    pub meets_recall_floor: bool,
}

fn precision_recall(labeled: &[(f64, bool)], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for &(score, yes) in labeled {
        let predicted = score >= threshold;
        pos += usize::from(yes);
        match (predicted, yes) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    (precision, recall)
}

/// Threshold maximizing precision subject to recall ≥ `recall_floor`;
/// ties prefer the higher threshold. `labeled` holds (score, human yes/no).
pub fn calibrate_confidence(labeled: &[(f64, bool)], candidates: &[f64], recall_floor: f64) -> Result<Calibration> {
    if labeled.is_empty() {
        return Err(Error::Domain("calibration needs at least one labeled example".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate thresholds".into()));
    }
    let evals: Vec<Calibration> = candidates
        .iter()
        .map(|&th| {
            let (precision, recall) = precision_recall(labeled, th);
            Calibration {
                threshold: th,
                precision,
                recall,
                meets_recall_floor: recall >= recall_floor,
            }
        })
        .collect();
    let best = |pool: Vec<&Calibration>| -> Option<Calibration> {
        pool.into_iter()
            .max_by(|a, b| a.precision.total_cmp(&b.precision).then(a.threshold.total_cmp(&b.threshold)))
            .copied()
    };
    if let Some(c) = best(evals.iter().filter(|c| c.meets_recall_floor).collect()) {
        return Ok(c);
    }
    Ok(best(evals.iter().collect()).expect("candidates nonempty"))
}

//! End-to-end timestep loop over a workspace with checkpointed resume.
//!
//! Per timestep: embed the batch, fit clusters, write the snapshot and
//! assignment log, write the trend report, advance every narrative (apply
//! logged decisions, discover candidates, re-attach), optionally classify
//! new narrative units against the theme dictionary, then write the
//! checkpoint. The checkpoint is written last; on restart everything after
//! the newest checkpoint is discarded and recomputed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterState, EmbeddedUnit, Timestep};
use crate::embed::{EmbeddingCache, EmbeddingGateway, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::ingest::DocUnit;
use crate::narrative::Narrative;
use crate::themes::{classify_all, ThemeClassifier, ThemeDictionary};
use crate::trend::{sample_cluster, top_trending, TrendRecord};
use crate::workspace::{read_json, sha256_file, write_json, Checkpoint, ReviewMode, Workspace};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Recompute from this timestep even if later checkpoints exist.
    pub from: Option<Timestep>,
    /// Stop after this timestep.
    pub to: Option<Timestep>,
    /// Simulated crash: fail after writing this timestep's artifacts but
    /// before its checkpoint.
    pub fail_before_checkpoint: Option<Timestep>,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed { last: Option<Timestep> },
    /// Blocking review mode: candidates await a decision.
    Paused { at: Timestep, pending: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub resumed_from: Option<Timestep>,
    pub processed: Vec<Timestep>,
    pub trend_reports: Vec<PathBuf>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleText {
    pub unit_id: String,
    pub text: String,
    pub similarity: f64,
    pub near_centroid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendEntry {
    #[serde(flatten)]
    pub record: TrendRecord,
    pub samples: Vec<SampleText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub timestep: Timestep,
    pub config_hash: String,
    /// Snapshots the report was computed from (current, then previous).
    pub lineage: Vec<ArtifactRef>,
    pub trending: Vec<TrendEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// One line of `themes/assignments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeRecord {
    pub unit_id: String,
    pub scores: BTreeMap<String, f64>,
    pub classified_at: Timestep,
}

pub const THEME_DICTIONARY: &str = "themes/dictionary.json";
pub const THEME_ASSIGNMENTS: &str = "themes/assignments.jsonl";

fn artifact(ws: &Workspace, path: PathBuf) -> Result<ArtifactRef> {
    let rel = path.strip_prefix(ws.root()).unwrap_or(&path).display().to_string();
    Ok(ArtifactRef {
        sha256: sha256_file(&path)?,
        path: rel,
    })
}

fn units_by_step(units: &[DocUnit]) -> BTreeMap<Timestep, Vec<&DocUnit>> {
    let mut by: BTreeMap<Timestep, Vec<&DocUnit>> = BTreeMap::new();
    for u in units {
        by.entry(u.timestep).or_default().push(u);
    }
    by
}

struct Runner<'a, P: EmbeddingProvider> {
    ws: &'a Workspace,
    gateway: EmbeddingGateway<P>,
    classifier: Option<&'a dyn ThemeClassifier>,
    units: HashMap<&'a str, &'a DocUnit>,
    max_in_flight: usize,
}

impl<P: EmbeddingProvider> Runner<'_, P> {
    fn embed(&self, batch: &[&DocUnit]) -> Result<Vec<EmbeddedUnit>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = batch.iter().map(|u| u.text.clone()).collect();
        let vectors = self.gateway.embed_batch(&texts).map_err(|e| match e {
            Error::Transport(m) => Error::Transport(format!(
                "{m}; embeddings are missing for timestep {} — start the embedding service or run `narrative embed` first",
                batch[0].timestep
            )),
            other => other,
        })?;
        Ok(batch
            .iter()
            .zip(vectors)
            .map(|(u, vector)| EmbeddedUnit {
                unit_id: u.unit_id.clone(),
                vector,
            })
            .collect())
    }

    fn text(&self, unit_id: &str) -> String {
        self.units.get(unit_id).map(|u| u.text.clone()).unwrap_or_default()
    }

    fn trend_report(&self, state: &ClusterState, t: Timestep) -> Result<TrendReport> {
        let cfg = &self.ws.config().trend;
        let mut lineage = vec![artifact(self.ws, self.ws.snapshot_path(t))?];
        if t > 0 {
            lineage.push(artifact(self.ws, self.ws.snapshot_path(t - 1))?);
        }
        let (records, note) = if t == 0 {
            (Vec::new(), Some("first timestep: no preceding inflow to compare against".to_string()))
        } else {
            (top_trending(state, t, cfg.top_k)?, None)
        };
        let trending = records
            .into_iter()
            .map(|record| {
                let samples = sample_cluster(state, record.cluster_id, t, cfg.near, cfg.random, self.ws.config().seed)?
                    .into_iter()
                    .map(|s| SampleText {
                        text: self.text(&s.unit_id),
                        unit_id: s.unit_id,
                        similarity: s.similarity,
                        near_centroid: s.near_centroid,
                    })
                    .collect();
                Ok(TrendEntry { record, samples })
            })
            .collect::<Result<_>>()?;
        Ok(TrendReport {
            timestep: t,
            config_hash: self.ws.config_hash(),
            lineage,
            trending,
            note,
        })
    }

    /// Classifies narrative units (through `t`) that have no theme record yet.
    fn classify(&self, state: &ClusterState, narratives: &[Narrative], t: Timestep) -> Result<()> {
        let Some(classifier) = self.classifier else {
            return Ok(());
        };
        let dict_path = self.ws.path(THEME_DICTIONARY);
        if !dict_path.exists() {
            return Ok(());
        }
        let dict: ThemeDictionary = read_json(&dict_path)?;
        if dict.themes.is_empty() {
            return Ok(());
        }
        let path = self.ws.path(THEME_ASSIGNMENTS);
        let done: BTreeSet<String> = self
            .ws
            .read_jsonl::<ThemeRecord>(&path)?
            .into_iter()
            .map(|r| r.unit_id)
            .collect();
        let mut todo: BTreeSet<&str> = BTreeSet::new();
        for n in narratives {
            for s in 0..=t {
                todo.extend(n.units_at(state, s).into_iter().filter(|u| !done.contains(*u)));
            }
        }
        let work: Vec<(String, String)> = todo.into_iter().map(|u| (u.to_string(), self.text(u))).collect();
        if work.is_empty() {
            return Ok(());
        }
        let records: Vec<ThemeRecord> = classify_all(classifier, &work, &dict.themes, self.max_in_flight)?
            .into_iter()
            .map(|a| ThemeRecord {
                unit_id: a.unit_id,
                scores: a.scores,
                classified_at: t,
            })
            .collect();
        self.ws.append_jsonl(&path, &records)
    }
}

/// Removes theme records classified after `keep`.
fn truncate_theme_records(ws: &Workspace, keep: Option<Timestep>) -> Result<()> {
    let path = ws.path(THEME_ASSIGNMENTS);
    if !path.exists() {
        return Ok(());
    }
    crate::ingest::repair_jsonl_tail(&path)?;
    let kept: Vec<ThemeRecord> = ws
        .read_jsonl::<ThemeRecord>(&path)?
        .into_iter()
        .filter(|r| keep.is_some_and(|k| r.classified_at <= k))
        .collect();
    std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
    ws.append_jsonl(&path, &kept)
}

/// Brings narratives in line with the definitions on disk: new definitions
/// start once their seed cluster exists.
fn sync_narratives(ws: &Workspace, state: &ClusterState, mut narratives: Vec<Narrative>) -> Result<Vec<Narrative>> {
    for (id, def) in ws.narratives()? {
        if narratives.iter().any(|n| n.id == id) {
            continue;
        }
        if state.cluster(def.initial_seed).is_some() {
            narratives.push(Narrative::from_definition(id, def));
        }
    }
    narratives.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(narratives)
}

pub fn run_pipeline<P: EmbeddingProvider>(
    ws: &Workspace,
    provider: P,
    classifier: Option<&dyn ThemeClassifier>,
    opts: &RunOptions,
) -> Result<RunReport> {
    let _lock = ws.lock()?;
    let config = ws.config();
    let units = ws.read_units()?;
    let by_step = units_by_step(&units);
    let cache = EmbeddingCache::open(ws.embeddings_path())?;
    let gateway = EmbeddingGateway::new(provider, cache)?.with_batch_size(config.embedding.batch_size);
    let runner = Runner {
        ws,
        gateway,
        classifier,
        units: units.iter().map(|u| (u.unit_id.as_str(), u)).collect(),
        max_in_flight: opts.max_in_flight.max(1),
    };

    if let Some(from) = opts.from {
        let keep = from.checked_sub(1);
        if let Some(k) = keep {
            if !ws.checkpoint_path(k).exists() {
                return Err(Error::NotFound(format!("no checkpoint for timestep {k} to restart from")));
            }
        }
        ws.truncate_after(keep)?;
        truncate_theme_records(ws, keep)?;
    }

    let checkpoint = ws.latest_checkpoint()?;
    let resumed_from = checkpoint.as_ref().map(|c| c.timestep);
    ws.truncate_after(resumed_from)?;
    truncate_theme_records(ws, resumed_from)?;
    let (mut state, mut narratives) = match checkpoint {
        Some(cp) => {
            let mut state = cp.state;
            state.attach_vectors(|id| {
                let u = runner.units.get(id)?;
                runner.gateway.cache().get_text(&u.text)
            })?;
            (state, cp.narratives)
        }
        None => (ClusterState::new(config.cluster.clone())?, Vec::new()),
    };

    let last = by_step.keys().next_back().copied();
    let end = match (last, opts.to) {
        (Some(l), Some(to)) => Some(l.min(to)),
        (l, _) => l,
    };
    let mut report = RunReport {
        resumed_from,
        processed: Vec::new(),
        trend_reports: Vec::new(),
        status: RunStatus::Completed { last: resumed_from },
    };
    let Some(end) = end else {
        return Ok(report);
    };
    let empty = Vec::new();
    for t in state.next_timestep()..=end {
        let batch = runner.embed(by_step.get(&t).unwrap_or(&empty))?;
        let fit = state.incremental_fit(&batch)?;
        runner.gateway.cache().flush()?;

        let mut snapshot = state.snapshot(t);
        snapshot.config_hash = Some(ws.config_hash());
        write_json(&ws.snapshot_path(t), &snapshot)?;
        ws.append_jsonl(&ws.assignments_path(), &fit.assignments())?;

        let trend = runner.trend_report(&state, t)?;
        write_json(&ws.trend_path(t), &trend)?;
        report.trend_reports.push(ws.trend_path(t));

        narratives = sync_narratives(ws, &state, narratives)?;
        let log = ws.decisions()?;
        for n in &mut narratives {
            n.step(&state, t, &log);
        }
        runner.classify(&state, &narratives, t)?;

        if opts.fail_before_checkpoint == Some(t) {
            return Err(Error::Integrity(format!("simulated failure before checkpoint t{t}")));
        }
        ws.write_checkpoint(Checkpoint {
            timestep: t,
            config_hash: ws.config_hash(),
            state: state.clone(),
            narratives: narratives.clone(),
            checksum: String::new(),
        })?;
        report.processed.push(t);
        report.status = RunStatus::Completed { last: Some(t) };

        if config.review_mode == ReviewMode::Blocking {
            let pending: usize = narratives.iter().map(|n| n.pending().count()).sum();
            if pending > 0 {
                report.status = RunStatus::Paused { at: t, pending };
                return Ok(report);
            }
        }
    }
    Ok(report)
}

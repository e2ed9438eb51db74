//! On-disk workspace: configuration, inputs, per-timestep artifacts,
//! checkpoints, narrative definitions and the decision log.
//!
//! ```text
//! config.json             run configuration (hashed into every artifact)
//! units.jsonl             ingested document units
//! embeddings.jsonl        embedding cache
//! snapshots/tNNNN.json    cluster snapshot per timestep
//! trends/tNNNN.json       trend report per timestep
//! checkpoints/tNNNN.json  resumable state; written last, marks a timestep done
//! assignments.jsonl       first cluster assignment of every unit
//! narratives/<id>.json    narrative definitions
//! decisions.jsonl         append-only review decisions
//! themes/                 dictionary and theme assignments
//! run.lock                held while a pipeline run is active
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{ClusterConfig, ClusterState, Timestep};
use crate::error::{Error, Result};
use crate::ingest::{read_jsonl, DocUnit};
use crate::narrative::{DecisionRecord, Narrative, NarrativeDefinition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewMode {
    /// Keep processing; decisions are applied retroactively when they land.
    #[default]
    NonBlocking,
    /// Stop after a timestep that leaves candidates pending.
    Blocking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// `hash` (built-in feature hashing) or `http`.
    pub provider: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: "hash".into(),
            dim: 256,
            url: None,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub top_k: usize,
    pub near: usize,
    pub random: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            top_k: crate::trend::DEFAULT_TOP_K,
            near: crate::trend::DEFAULT_NEAR,
            random: crate::trend::DEFAULT_RANDOM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    pub corpus_start: DateTime<Utc>,
    pub window_days: u32,
    pub cluster: ClusterConfig,
    pub embedding: EmbeddingConfig,
    pub trend: TrendConfig,
    pub review_mode: ReviewMode,
    pub review_sample: usize,
    /// Confidence threshold for theme assignment.
    pub theme_confidence: f64,
    pub seed: u64,
}

impl WorkspaceConfig {
    pub fn new(corpus_start: DateTime<Utc>) -> Self {
        Self {
            corpus_start,
            window_days: 7,
            cluster: ClusterConfig::default(),
            embedding: EmbeddingConfig::default(),
            trend: TrendConfig::default(),
            review_mode: ReviewMode::default(),
            review_sample: crate::narrative::DEFAULT_SAMPLE,
            theme_confidence: crate::themes::DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }

    /// sha256 of the canonical (key-sorted, compact) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn window(&self) -> chrono::Duration {
        chrono::Duration::days(i64::from(self.window_days))
    }
}

/// Resumable state written after each completed timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub timestep: Timestep,
    pub config_hash: String,
    pub state: ClusterState,
    pub narratives: Vec<Narrative>,
    /// sha256 over the serialized fields above.
    #[serde(default)]
    pub checksum: String,
}

impl Checkpoint {
    fn digest(&self) -> String {
        let body = serde_json::json!({
            "timestep": self.timestep,
            "config_hash": self.config_hash,
            "state": self.state,
            "narratives": self.narratives,
        });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }

    pub fn seal(mut self) -> Self {
        self.checksum = self.digest();
        self
    }

    pub fn verify(&self) -> Result<()> {
        if self.checksum != self.digest() {
            return Err(Error::Integrity(format!("checkpoint t{} fails its checksum", self.timestep)));
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::json(path.display().to_string(), e))
}

fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    match File::open(path) {
        Ok(f) => read_jsonl(BufReader::new(f), &path.display().to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn step_name(t: Timestep) -> String {
    format!("t{t:04}.json")
}

fn parse_step(name: &str) -> Option<Timestep> {
    name.strip_prefix('t')?.strip_suffix(".json")?.parse().ok()
}

/// Held for the duration of a pipeline run.
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn lock_is_stale(path: &Path) -> bool {
    if !cfg!(target_os = "linux") {
        return false;
    }
    match fs::read_to_string(path).ok().and_then(|s| s.trim().parse::<u32>().ok()) {
        Some(pid) => pid != std::process::id() && !Path::new(&format!("/proc/{pid}")).exists(),
        None => false,
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    config: WorkspaceConfig,
}

impl Workspace {
    pub fn init(root: impl Into<PathBuf>, config: WorkspaceConfig) -> Result<Self> {
        let root = root.into();
        for dir in ["snapshots", "trends", "checkpoints", "narratives", "themes"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_json(&root.join("config.json"), &config)?;
        Ok(Self { root, config })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let config = read_json(&root.join("config.json"))?;
        Ok(Self { root, config })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.config
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn units_path(&self) -> PathBuf {
        self.path("units.jsonl")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.path("embeddings.jsonl")
    }

    pub fn assignments_path(&self) -> PathBuf {
        self.path("assignments.jsonl")
    }

    pub fn decisions_path(&self) -> PathBuf {
        self.path("decisions.jsonl")
    }

    pub fn snapshot_path(&self, t: Timestep) -> PathBuf {
        self.root.join("snapshots").join(step_name(t))
    }

    pub fn trend_path(&self, t: Timestep) -> PathBuf {
        self.root.join("trends").join(step_name(t))
    }

    pub fn checkpoint_path(&self, t: Timestep) -> PathBuf {
        self.root.join("checkpoints").join(step_name(t))
    }

    pub fn narrative_path(&self, id: &str) -> PathBuf {
        self.root.join("narratives").join(format!("{id}.json"))
    }

    /// Takes the advisory run lock. A lock left by a process that no longer
    /// exists (checked via `/proc` on Linux) is reclaimed.
    pub fn lock(&self) -> Result<RunLock> {
        let path = self.path("run.lock");
        let open = || OpenOptions::new().write(true).create_new(true).open(&path);
        let mut f = match open() {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                if !lock_is_stale(&path) {
                    return Err(Error::Locked(path));
                }
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
                open().map_err(|e| match e.kind() {
                    std::io::ErrorKind::AlreadyExists => Error::Locked(path.clone()),
                    _ => Error::io(&path, e),
                })?
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunLock { path })
    }

    pub fn write_units(&self, units: &[DocUnit]) -> Result<()> {
        let path = self.units_path();
        let mut buf = Vec::new();
        crate::ingest::write_units(&mut buf, units).map_err(|e| Error::io(&path, e))?;
        write_atomic(&path, &buf)
    }

    pub fn read_units(&self) -> Result<Vec<DocUnit>> {
        let path = self.units_path();
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        crate::ingest::read_units(BufReader::new(f))
    }

    pub fn save_narrative(&self, id: &str, def: &NarrativeDefinition) -> Result<()> {
        if id.is_empty() || id.contains(['/', '\\', ':']) {
            return Err(Error::Config(format!("invalid narrative id {id:?}")));
        }
        write_json(&self.narrative_path(id), def)
    }

    /// Narrative definitions sorted by id.
    pub fn narratives(&self) -> Result<Vec<(String, NarrativeDefinition)>> {
        let dir = self.path("narratives");
        let mut out = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".json") {
                out.push((id.to_string(), read_json(&entry.path())?));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn decisions(&self) -> Result<Vec<DecisionRecord>> {
        read_jsonl_file(&self.decisions_path())
    }

    /// Appends one record with a single write.
    pub fn append_decision(&self, record: &DecisionRecord) -> Result<()> {
        let path = self.decisions_path();
        let mut line = serde_json::to_vec(record).map_err(|e| Error::json("decision", e))?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    pub fn append_jsonl<T: Serialize>(&self, path: &Path, records: &[T]) -> Result<()> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::json(path.display().to_string(), e))?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, path: &Path) -> Result<Vec<T>> {
        read_jsonl_file(path)
    }

    /// Timesteps with a checkpoint file, ascending.
    pub fn checkpoint_steps(&self) -> Result<Vec<Timestep>> {
        let dir = self.path("checkpoints");
        let mut steps: Vec<Timestep> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| parse_step(&e.file_name().to_string_lossy()))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(&dir, e)),
        };
        steps.sort_unstable();
        Ok(steps)
    }

    pub fn write_checkpoint(&self, cp: Checkpoint) -> Result<()> {
        let path = self.checkpoint_path(cp.timestep);
        write_json(&path, &cp.seal())
    }

    /// Latest checkpoint, verified against its checksum and config hash.
    pub fn latest_checkpoint(&self) -> Result<Option<Checkpoint>> {
        let Some(&t) = self.checkpoint_steps()?.last() else {
            return Ok(None);
        };
        let cp: Checkpoint = read_json(&self.checkpoint_path(t))?;
        cp.verify()?;
        if cp.config_hash != self.config_hash() {
            return Err(Error::Integrity(format!(
                "checkpoint t{t} was written under a different configuration"
            )));
        }
        Ok(Some(cp))
    }

    /// Removes per-timestep artifacts after `keep` (all of them if `None`)
    /// and drops later records from the assignment log.
    pub fn truncate_after(&self, keep: Option<Timestep>) -> Result<()> {
        let beyond = |t: Timestep| keep.is_none_or(|k| t > k);
        for dir in ["snapshots", "trends", "checkpoints"] {
            let d = self.path(dir);
            let Ok(entries) = fs::read_dir(&d) else { continue };
            for e in entries.filter_map(|e| e.ok()) {
                let name = e.file_name().to_string_lossy().into_owned();
                let stale = parse_step(&name).is_some_and(beyond) || name.ends_with(".tmp");
                if stale {
                    fs::remove_file(e.path()).map_err(|err| Error::io(e.path(), err))?;
                }
            }
        }
        let path = self.assignments_path();
        if path.exists() {
            crate::ingest::repair_jsonl_tail(&path)?;
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut kept = Vec::new();
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: crate::cluster::AssignmentRecord =
                    serde_json::from_str(&line).map_err(|e| Error::json(path.display().to_string(), e))?;
                if !beyond(rec.timestep) {
                    kept.extend_from_slice(line.as_bytes());
                    kept.push(b'\n');
                }
            }
            write_atomic(&path, &kept)?;
        }
        let theme_path = self.path("themes/assignments.jsonl");
        if keep.is_none() && theme_path.exists() {
            fs::remove_file(&theme_path).map_err(|e| Error::io(&theme_path, e))?;
        }
        Ok(())
    }
}

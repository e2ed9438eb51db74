//! HTTP review API over a workspace.
//!
//! The served view is the newest checkpoint with the decision log replayed
//! on top and attachments recomputed, so decisions steer the narrative
//! centroid immediately. The view is rebuilt whenever a newer checkpoint
//! or a longer decision log shows up on disk (e.g. a concurrent run).

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cluster::{ClusterId, ClusterState, Timestep};
use crate::embed::cosine_similarity;
use crate::error::{Error, Result};
use crate::narrative::{parse_candidate_id, Decision, DecisionRecord, Narrative, SeedCandidate};
use crate::workspace::Workspace;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Domain(_) | Error::Range(_) | Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::Locked(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// Disk state the view was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stamp {
    checkpoint: Option<Timestep>,
    log_len: u64,
}

/// Newest checkpoint with the decision log replayed on top.
pub struct View {
    stamp: Stamp,
    pub state: ClusterState,
    pub narratives: Vec<Narrative>,
}

impl View {
    pub fn latest(&self) -> Option<Timestep> {
        self.stamp.checkpoint
    }

    pub fn narrative(&self, id: &str) -> Result<&Narrative> {
        self.narratives
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| Error::NotFound(format!("narrative {id}")))
    }
}

pub struct AppState {
    ws: Workspace,
    texts: HashMap<String, String>,
    view: RwLock<View>,
    /// Serializes decision writes.
    write: Mutex<()>,
}

fn stamp(ws: &Workspace) -> Result<Stamp> {
    let log_len = match std::fs::metadata(ws.decisions_path()) {
        Ok(m) => m.len(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
        Err(e) => return Err(Error::io(ws.decisions_path(), e)),
    };
    Ok(Stamp {
        checkpoint: ws.checkpoint_steps()?.last().copied(),
        log_len,
    })
}

pub fn load_view(ws: &Workspace) -> Result<View> {
    let mut stamp = stamp(ws)?;
    let (state, mut narratives) = match ws.latest_checkpoint()? {
        Some(cp) => {
            stamp.checkpoint = Some(cp.timestep);
            (cp.state, cp.narratives)
        }
        None => (ClusterState::new(ws.config().cluster.clone())?, Vec::new()),
    };
    let log = ws.decisions()?;
    for n in &mut narratives {
        n.apply_decisions(&log);
        if let Some(t) = stamp.checkpoint {
            n.recompute(&state, t);
        }
    }
    Ok(View {
        stamp,
        state,
        narratives,
    })
}

impl AppState {
    pub fn new(ws: Workspace) -> Result<Self> {
        let texts = if ws.units_path().exists() {
            ws.read_units()?.into_iter().map(|u| (u.unit_id, u.text)).collect()
        } else {
            HashMap::new()
        };
        let view = load_view(&ws)?;
        Ok(Self {
            ws,
            texts,
            view: RwLock::new(view),
            write: Mutex::new(()),
        })
    }

    fn refresh(&self) -> Result<()> {
        let now = stamp(&self.ws)?;
        if self.view.read().expect("view lock").stamp == now {
            return Ok(());
        }
        let fresh = load_view(&self.ws)?;
        *self.view.write().expect("view lock") = fresh;
        Ok(())
    }

    fn read<T>(&self, f: impl FnOnce(&View) -> Result<T>) -> Result<T> {
        self.refresh()?;
        f(&self.view.read().expect("view lock"))
    }

    /// Validates, logs and applies one decision.
    pub fn decide(&self, candidate: &str, decision: Decision, reviewer: &str) -> Result<(DecisionRecord, SeedCandidate)> {
        let (narrative, cluster) = parse_candidate_id(candidate)?;
        if reviewer.trim().is_empty() {
            return Err(Error::Domain("reviewer must not be empty".into()));
        }
        let _guard = self.write.lock().expect("write lock");
        self.refresh()?;
        let mut view = self.view.write().expect("view lock");
        let latest = view.latest();
        let View { state, narratives, stamp } = &mut *view;
        let n = narratives
            .iter_mut()
            .find(|n| n.id == narrative)
            .ok_or_else(|| Error::NotFound(format!("narrative {narrative}")))?;
        let mut updated = n.clone();
        let record = updated.record_decision(cluster, decision, reviewer, Utc::now())?;
        self.ws.append_decision(&record)?;
        if let Some(t) = latest {
            updated.recompute(state, t);
        }
        let cand = updated.candidate(cluster).cloned().expect("candidate just decided");
        *n = updated;
        *stamp = self::stamp(&self.ws)?;
        Ok((record, cand))
    }
}

#[derive(Serialize)]
struct NarrativeSummary {
    id: String,
    name: String,
    initial_seed: ClusterId,
    approved_seeds: Vec<ClusterId>,
    pending: usize,
    candidates: usize,
    latest_timestep: Option<Timestep>,
}

async fn list_narratives(State(app): State<Arc<AppState>>) -> ApiResult<Vec<NarrativeSummary>> {
    Ok(Json(app.read(|v| {
        Ok(v.narratives
            .iter()
            .map(|n| NarrativeSummary {
                id: n.id.clone(),
                name: n.definition.name.clone(),
                initial_seed: n.definition.initial_seed,
                approved_seeds: n.approved_seeds.iter().copied().collect(),
                pending: n.pending().count(),
                candidates: n.candidates.len(),
                latest_timestep: v.latest(),
            })
            .collect())
    })?))
}

#[derive(Deserialize)]
struct CandidateQuery {
    status: Option<String>,
    timestep: Option<Timestep>,
}

async fn list_candidates(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Vec<SeedCandidate>> {
    let status: Option<Decision> = q.status.as_deref().map(str::parse).transpose()?;
    Ok(Json(app.read(|v| {
        Ok(v.narrative(&id)?
            .candidates
            .iter()
            .filter(|c| status.is_none_or(|s| c.decision == s))
            .filter(|c| q.timestep.is_none_or(|t| c.discovered_at == t))
            .cloned()
            .collect())
    })?))
}

#[derive(Deserialize)]
struct SampleQuery {
    n: Option<usize>,
}

#[derive(Serialize)]
struct SampleUnit {
    unit_id: String,
    text: String,
}

#[derive(Serialize)]
struct SampleResponse {
    candidate: SeedCandidate,
    units: Vec<SampleUnit>,
}

async fn candidate_sample(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<SampleResponse> {
    let cap = app.ws.config().review_sample;
    let n = q.n.unwrap_or(cap).min(cap);
    let (narrative, cluster) = parse_candidate_id(&id)?;
    let seed = app.ws.config().seed;
    Ok(Json(app.read(|v| {
        let nar = v.narrative(narrative)?;
        let candidate = nar
            .candidate(cluster)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("candidate {id}")))?;
        let units = nar
            .review_sample(&v.state, cluster, n, seed)?
            .into_iter()
            .map(|u| SampleUnit {
                text: app.texts.get(&u).cloned().unwrap_or_default(),
                unit_id: u,
            })
            .collect();
        Ok(SampleResponse { candidate, units })
    })?))
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: String,
    reviewer: String,
}

#[derive(Serialize)]
struct DecisionResponse {
    record: DecisionRecord,
    candidate: SeedCandidate,
}

async fn post_decision(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<DecisionResponse> {
    let decision: Decision = body.decision.parse()?;
    let (record, candidate) = app.decide(&id, decision, &body.reviewer)?;
    Ok(Json(DecisionResponse { record, candidate }))
}

#[derive(Serialize)]
struct CentroidPoint {
    timestep: Timestep,
    centroid: Vec<f32>,
    /// Cosine similarity to the previous recorded centroid.
    drift: Option<f64>,
    attached_clusters: usize,
    units: usize,
}

#[derive(Serialize)]
struct CentroidSeries {
    narrative: String,
    approved_seeds: Vec<ClusterId>,
    series: Vec<CentroidPoint>,
}

async fn centroid_series(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<CentroidSeries> {
    Ok(Json(app.read(|v| {
        let n = v.narrative(&id)?;
        let mut prev: Option<&Vec<f32>> = None;
        let mut series = Vec::with_capacity(n.centroid_history.len());
        for (&t, c) in &n.centroid_history {
            series.push(CentroidPoint {
                timestep: t,
                centroid: c.clone(),
                drift: prev.map(|p| cosine_similarity(p, c)).transpose()?,
                attached_clusters: n.attached.get(&t).map_or(0, |s| s.len()),
                units: n.units_at(&v.state, t).len(),
            });
            prev = Some(c);
        }
        Ok(CentroidSeries {
            narrative: n.id.clone(),
            approved_seeds: n.approved_seeds.iter().copied().collect(),
            series,
        })
    })?))
}

#[derive(Deserialize)]
struct AttachedQuery {
    timestep: Option<Timestep>,
}

#[derive(Serialize)]
struct AttachedCluster {
    id: ClusterId,
    similarity: f64,
    size: usize,
    seed: bool,
}

#[derive(Serialize)]
struct AttachedResponse {
    timestep: Timestep,
    clusters: Vec<AttachedCluster>,
}

async fn attached(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AttachedQuery>,
) -> ApiResult<AttachedResponse> {
    Ok(Json(app.read(|v| {
        let n = v.narrative(&id)?;
        let t = q
            .timestep
            .or_else(|| n.attached.keys().next_back().copied())
            .ok_or_else(|| Error::NotFound(format!("narrative {id} has no attachments yet")))?;
        let set = n
            .attached
            .get(&t)
            .ok_or_else(|| Error::NotFound(format!("narrative {id} has no attachments at timestep {t}")))?;
        let centroid = &n.centroid_history[&t];
        let clusters = set
            .iter()
            .filter_map(|cid| v.state.cluster(*cid))
            .map(|c| {
                Ok(AttachedCluster {
                    id: c.id,
                    similarity: cosine_similarity(c.centroid_at(t).unwrap_or(&[]), centroid).unwrap_or(f64::NAN),
                    size: c.size_at(t).unwrap_or(0),
                    seed: n.approved_seeds.contains(&c.id),
                })
            })
            .collect::<Result<_>>()?;
        Ok(AttachedResponse { timestep: t, clusters })
    })?))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/narratives", get(list_narratives))
        .route("/narratives/{id}/candidates", get(list_candidates))
        .route("/narratives/{id}/centroid-series", get(centroid_series))
        .route("/narratives/{id}/attached", get(attached))
        .route("/candidates/{id}/sample", get(candidate_sample))
        .route("/candidates/{id}/decision", post(post_decision))
        .with_state(app)
}

pub async fn serve(ws: Workspace, addr: SocketAddr) -> Result<()> {
    let app = Arc::new(AppState::new(ws)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
    axum::serve(listener, router(app))
        .await
        .map_err(|e| Error::Transport(format!("serve: {e}")))
}

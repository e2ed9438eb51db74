use serde::{Deserialize, Serialize};

use super::{ClusterId, ClusterState, ClusterStatus, Timestep};

/// One line of the member assignment log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub unit_id: String,
    pub cluster_id: ClusterId,
    pub timestep: Timestep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub id: ClusterId,
    pub size: usize,
    pub centroid: Vec<f32>,
    pub born_at: Timestep,
    /// `active` or `merged-into:<id>`.
    pub status: String,
}

/// Per-timestep view of every cluster born so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub timestep: Timestep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub clusters: Vec<ClusterSnapshot>,
}

pub(crate) fn status_label(status: ClusterStatus, t: Timestep) -> String {
    match status {
        ClusterStatus::MergedInto { target, at } if at <= t => format!("merged-into:{target}"),
        _ => "active".to_string(),
    }
}

impl Snapshot {
    pub(crate) fn of(state: &ClusterState, t: Timestep) -> Self {
        let clusters = state
            .clusters()
            .iter()
            .filter(|c| c.born_at <= t)
            .filter_map(|c| {
                Some(ClusterSnapshot {
                    id: c.id,
                    size: c.size_at(t)?,
                    centroid: c.centroid_at(t)?.to_vec(),
                    born_at: c.born_at,
                    status: status_label(c.status, t),
                })
            })
            .collect();
        Snapshot {
            timestep: t,
            config_hash: None,
            clusters,
        }
    }
}

//! Trending-story detection from per-timestep inflow changes.
//!
//! A cluster's trend score at `t` is the change in its inflow (members
//! gained from the batch) relative to `t - 1`, so steady long-running
//! stories score zero however large they are.

use std::cmp::Ordering;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterId, ClusterState, StoryCluster, Timestep};
use crate::embed::dot;
use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_NEAR: usize = 10;
pub const DEFAULT_RANDOM: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub cluster_id: ClusterId,
    pub timestep: Timestep,
    pub delta: i64,
    pub growth: usize,
    pub rank: usize,
}

fn trend_order(a: &TrendRecord, b: &TrendRecord) -> Ordering {
    b.delta
        .cmp(&a.delta)
        .then(b.growth.cmp(&a.growth))
        .then(a.cluster_id.cmp(&b.cluster_id))
}

/// Previous-timestep inflow of everything that is now part of `c`.
fn lineage_inflow(state: &ClusterState, c: &StoryCluster, t: Timestep, prev: Timestep) -> usize {
    let mut total = c.inflow(prev);
    for &(source, at) in &c.merged_from {
        if at == t {
            if let Some(s) = state.cluster(source) {
                total += lineage_inflow(state, s, t, prev);
            }
        }
    }
    total
}

fn check_timestep(state: &ClusterState, t: Timestep) -> Result<()> {
    if t == 0 {
        return Err(Error::Domain("timestep 0 has no preceding period".into()));
    }
    match state.current_timestep {
        Some(cur) if t <= cur => Ok(()),
        _ => Err(Error::Range(format!("timestep {t} has not been clustered yet"))),
    }
}

/// Inflow deltas for every cluster alive at `t`, ranked.
pub fn cluster_deltas(state: &ClusterState, t: Timestep) -> Result<Vec<TrendRecord>> {
    check_timestep(state, t)?;
    let mut records: Vec<TrendRecord> = state
        .alive_at(t)
        .map(|c| {
            let growth = c.inflow(t);
            let prev = lineage_inflow(state, c, t, t - 1);
            TrendRecord {
                cluster_id: c.id,
                timestep: t,
                delta: growth as i64 - prev as i64,
                growth,
                rank: 0,
            }
        })
        .collect();
    records.sort_by(trend_order);
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(records)
}

/// The `k` highest-ranked trend records (all of them if fewer exist).
pub fn top_trending(state: &ClusterState, t: Timestep, k: usize) -> Result<Vec<TrendRecord>> {
    let mut records = cluster_deltas(state, t)?;
    records.truncate(k);
    Ok(records)
}

/// Clusters alive at `t` ranked by cumulative size alone. Kept as the
/// static baseline the delta ranking is compared against.
pub fn size_ranking(state: &ClusterState, t: Timestep) -> Vec<ClusterId> {
    let mut alive: Vec<(usize, ClusterId)> = state
        .alive_at(t)
        .map(|c| (c.size_at(t).unwrap_or(0), c.id))
        .collect();
    alive.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    alive.into_iter().map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledUnit {
    pub unit_id: String,
    pub similarity: f64,
    pub near_centroid: bool,
}

/// Representative members at `t`: the `n_near` closest to the centroid
/// (most similar first) followed by up to `n_random` others drawn uniformly
/// with a seeded RNG.
pub fn sample_cluster(
    state: &ClusterState,
    cluster: ClusterId,
    t: Timestep,
    n_near: usize,
    n_random: usize,
    seed: u64,
) -> Result<Vec<SampledUnit>> {
    let c = state
        .cluster(cluster)
        .ok_or_else(|| Error::NotFound(format!("cluster {cluster}")))?;
    let centroid = c
        .centroid_at(t)
        .ok_or_else(|| Error::Domain(format!("cluster {cluster} has no members at timestep {t}")))?;
    let mut scored: Vec<SampledUnit> = c
        .members_up_to(t)
        .map(|m| {
            let v = state
                .vector(m)
                .ok_or_else(|| Error::NotFound(format!("embedding for unit {m}")))?;
            Ok(SampledUnit {
                unit_id: m.to_string(),
                similarity: dot(v, centroid),
                near_centroid: true,
            })
        })
        .collect::<Result<_>>()?;
    if scored.is_empty() {
        return Err(Error::Domain(format!("cluster {cluster} has no members at timestep {t}")));
    }
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.unit_id.cmp(&b.unit_id)));
    let rest = scored.split_off(n_near.min(scored.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cluster.0.rotate_left(17) ^ u64::from(t));
    let mut random: Vec<SampledUnit> = rest
        .choose_multiple(&mut rng, n_random)
        .cloned()
        .map(|mut s| {
            s.near_centroid = false;
            s
        })
        .collect();
    random.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
    scored.extend(random);
    Ok(scored)
}

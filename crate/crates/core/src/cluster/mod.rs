//! Online agglomerative clustering of time-bucketed embeddings into story
//! clusters.
//!
//! Each timestep's batch is first offered to the existing clusters (a point
//! joins its nearest active centroid if the similarity clears the
//! threshold), leftovers are clustered among themselves with batch
//! average-linkage HAC, then candidate merges between near-duplicate
//! clusters are gated on silhouette and pseudo-F. Membership accretes
//! across timesteps and every cluster keeps its centroid, size and inflow
//! history.

pub mod hac;
mod snapshot;
pub mod validity;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hac::{batch_hac, Partition};
pub use snapshot::{AssignmentRecord, ClusterSnapshot, Snapshot};
pub use validity::{pseudo_f, silhouette, DistanceMatrix, Moments};

use crate::embed::{dot, normalize};
use crate::error::{Error, Result};

pub type Timestep = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u64);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for ClusterId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim_start_matches('c').parse().map(ClusterId)
    }
}

/// A document unit with its unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedUnit {
    pub unit_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum ClusterStatus {
    Active,
    MergedInto { target: ClusterId, at: Timestep },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoryCluster {
    pub id: ClusterId,
    pub born_at: Timestep,
    pub status: ClusterStatus,
    /// Unit-length centroid at the end of each timestep the cluster was active.
    pub centroid_history: BTreeMap<Timestep, Vec<f32>>,
    /// Cumulative member count at the end of each active timestep.
    pub size_history: BTreeMap<Timestep, usize>,
    /// Members gained from that timestep's batch (including any carried in
    /// by a merge in the same timestep).
    pub inflow_history: BTreeMap<Timestep, usize>,
    /// Member unit ids keyed by the timestep of the batch they arrived in.
    pub members: BTreeMap<Timestep, Vec<String>>,
    /// Clusters folded into this one, with the merge timestep.
    pub merged_from: Vec<(ClusterId, Timestep)>,
    moments: Moments,
}

impl StoryCluster {
    fn new(id: ClusterId, born_at: Timestep, dim: usize) -> Self {
        Self {
            id,
            born_at,
            status: ClusterStatus::Active,
            centroid_history: BTreeMap::new(),
            size_history: BTreeMap::new(),
            inflow_history: BTreeMap::new(),
            members: BTreeMap::new(),
            merged_from: Vec::new(),
            moments: Moments::new(dim),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == ClusterStatus::Active
    }

    pub fn size(&self) -> usize {
        self.moments.count
    }

    pub fn moments(&self) -> &Moments {
        &self.moments
    }

    /// Current centroid from the running sum.
    pub fn centroid(&self) -> Vec<f32> {
        normalize(&self.moments.sum).expect("clusters are never empty")
    }

    /// Last recorded centroid at or before `t`.
    pub fn centroid_at(&self, t: Timestep) -> Option<&[f32]> {
        self.centroid_history.range(..=t).next_back().map(|(_, c)| c.as_slice())
    }

    /// Size recorded at or before `t`.
    pub fn size_at(&self, t: Timestep) -> Option<usize> {
        self.size_history.range(..=t).next_back().map(|(_, s)| *s)
    }

    /// Whether the cluster was active at the end of timestep `t`.
    pub fn alive_at(&self, t: Timestep) -> bool {
        self.inflow_history.contains_key(&t)
    }

    pub fn inflow(&self, t: Timestep) -> usize {
        self.inflow_history.get(&t).copied().unwrap_or(0)
    }

    /// Members that arrived in batches up to and including `t`.
    pub fn members_up_to(&self, t: Timestep) -> impl Iterator<Item = &str> {
        self.members.range(..=t).flat_map(|(_, m)| m.iter().map(String::as_str))
    }

    pub fn all_members(&self) -> impl Iterator<Item = &str> {
        self.members.values().flat_map(|m| m.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClusterConfig {
    pub similarity_threshold: f64,
    /// Allowed silhouette drop when accepting a merge.
    pub silhouette_tolerance: f64,
    /// Points sampled per merge evaluation.
    pub silhouette_sample: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.85,
            silhouette_tolerance: 0.01,
            silhouette_sample: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MergeProposal {
    pub source: ClusterId,
    pub target: ClusterId,
    pub centroid_similarity: f64,
    pub silhouette_before: f64,
    pub silhouette_after: f64,
    pub pseudo_f_before: f64,
    pub pseudo_f_after: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Absorption {
    pub unit_id: String,
    pub cluster: ClusterId,
    /// Similarity to the cluster's centroid before this batch was applied.
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FitReport {
    pub timestep: Timestep,
    pub absorptions: Vec<Absorption>,
    /// New clusters with the batch members that founded them.
    pub founded: Vec<(ClusterId, Vec<String>)>,
    pub proposals: Vec<MergeProposal>,
}

impl FitReport {
    /// First assignment of every batch unit.
    pub fn assignments(&self) -> Vec<AssignmentRecord> {
        let mut out: Vec<AssignmentRecord> = self
            .absorptions
            .iter()
            .map(|a| AssignmentRecord {
                unit_id: a.unit_id.clone(),
                cluster_id: a.cluster,
                timestep: self.timestep,
            })
            .collect();
        for (id, members) in &self.founded {
            out.extend(members.iter().map(|m| AssignmentRecord {
                unit_id: m.clone(),
                cluster_id: *id,
                timestep: self.timestep,
            }));
        }
        out
    }
}

/// Mutable clustering state. Point vectors are held in memory only; a
/// deserialized state must be rehydrated with [`ClusterState::attach_vectors`]
/// before further fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterState {
    pub config: ClusterConfig,
    pub current_timestep: Option<Timestep>,
    dim: Option<usize>,
    clusters: Vec<StoryCluster>,
    #[serde(skip)]
    points: HashMap<String, Vec<f32>>,
}

impl ClusterState {
    pub fn new(config: ClusterConfig) -> Result<Self> {
        let t = config.similarity_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!("similarity threshold {t} must lie in (0, 1)")));
        }
        Ok(Self {
            config,
            current_timestep: None,
            dim: None,
            clusters: Vec::new(),
            points: HashMap::new(),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.config.similarity_threshold
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn next_timestep(&self) -> Timestep {
        self.current_timestep.map_or(0, |t| t + 1)
    }

    pub fn clusters(&self) -> &[StoryCluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&StoryCluster> {
        self.clusters.get(id.0 as usize)
    }

    pub fn active(&self) -> impl Iterator<Item = &StoryCluster> {
        self.clusters.iter().filter(|c| c.is_active())
    }

    pub fn alive_at(&self, t: Timestep) -> impl Iterator<Item = &StoryCluster> {
        self.clusters.iter().filter(move |c| c.alive_at(t))
    }

    pub fn vector(&self, unit_id: &str) -> Option<&[f32]> {
        self.points.get(unit_id).map(Vec::as_slice)
    }

    pub fn point_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.is_active()).map(|c| c.size()).sum()
    }

    /// Restores member vectors after deserialization.
    pub fn attach_vectors(&mut self, mut lookup: impl FnMut(&str) -> Option<Vec<f32>>) -> Result<()> {
        let mut points = HashMap::new();
        for c in &self.clusters {
            for m in c.all_members() {
                if points.contains_key(m) {
                    continue;
                }
                let v = lookup(m).ok_or_else(|| Error::NotFound(format!("embedding for unit {m}")))?;
                points.insert(m.to_string(), v);
            }
        }
        self.points = points;
        Ok(())
    }

    /// Follows merge lineage to the active cluster that now holds `id`'s members.
    pub fn resolve(&self, mut id: ClusterId) -> Option<ClusterId> {
        for _ in 0..=self.clusters.len() {
            match self.cluster(id)?.status {
                ClusterStatus::Active => return Some(id),
                ClusterStatus::MergedInto { target, .. } => id = target,
            }
        }
        None
    }

    /// Applies the next timestep's batch. See the module docs for the order
    /// of operations.
    pub fn incremental_fit(&mut self, batch: &[EmbeddedUnit]) -> Result<FitReport> {
        let t = self.next_timestep();
        let threshold = self.threshold();
        let mut seen = HashSet::new();
        for u in batch {
            let d = *self.dim.get_or_insert(u.vector.len());
            if u.vector.len() != d {
                return Err(Error::Config(format!(
                    "unit {} has dimension {} but the workspace uses {d}",
                    u.unit_id,
                    u.vector.len()
                )));
            }
            if self.points.contains_key(&u.unit_id) || !seen.insert(u.unit_id.as_str()) {
                return Err(Error::Domain(format!("unit {} was already clustered", u.unit_id)));
            }
        }
        let dim = self.dim.unwrap_or(0);

        // 1. absorb against pre-update centroids
        let centroids: Vec<(ClusterId, Vec<f32>)> = self.active().map(|c| (c.id, c.centroid())).collect();
        let mut absorptions = Vec::new();
        let mut leftovers: Vec<&EmbeddedUnit> = Vec::new();
        for u in batch {
            let mut best: Option<(ClusterId, f64)> = None;
            for (id, c) in &centroids {
                let s = dot(&u.vector, c);
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((*id, s));
                }
            }
            match best {
                Some((id, s)) if s >= threshold => absorptions.push(Absorption {
                    unit_id: u.unit_id.clone(),
                    cluster: id,
                    similarity: s,
                }),
                _ => leftovers.push(u),
            }
        }
        let mut inflow: BTreeMap<ClusterId, usize> = BTreeMap::new();
        let by_id: HashMap<&str, &EmbeddedUnit> = batch.iter().map(|u| (u.unit_id.as_str(), u)).collect();
        for a in &absorptions {
            let u = by_id[a.unit_id.as_str()];
            let c = &mut self.clusters[a.cluster.0 as usize];
            c.moments.add(&u.vector);
            c.members.entry(t).or_default().push(u.unit_id.clone());
            *inflow.entry(a.cluster).or_default() += 1;
        }

        // 2. cluster the leftovers among themselves
        let leftover_vecs: Vec<&[f32]> = leftovers.iter().map(|u| u.vector.as_slice()).collect();
        let partition = batch_hac(&leftover_vecs, threshold);
        let mut founded = Vec::new();
        for group in partition {
            let id = ClusterId(self.clusters.len() as u64);
            let mut c = StoryCluster::new(id, t, dim);
            let members: Vec<String> = group.iter().map(|&i| leftovers[i].unit_id.clone()).collect();
            for &i in &group {
                c.moments.add(&leftovers[i].vector);
            }
            c.members.insert(t, members.clone());
            inflow.insert(id, group.len());
            self.clusters.push(c);
            founded.push((id, members));
        }
        for u in batch {
            self.points.insert(u.unit_id.clone(), u.vector.clone());
        }

        // 3. merge evaluation
        let proposals = self.evaluate_merges_at(t, &mut inflow);

        // 4. histories
        for c in self.clusters.iter_mut().filter(|c| c.is_active()) {
            let centroid = normalize(&c.moments.sum).expect("clusters are never empty");
            c.centroid_history.insert(t, centroid);
            c.size_history.insert(t, c.moments.count);
            c.inflow_history.insert(t, inflow.get(&c.id).copied().unwrap_or(0));
        }
        self.current_timestep = Some(t);

        Ok(FitReport {
            timestep: t,
            absorptions,
            founded,
            proposals,
        })
    }

    /// Runs merge evaluation on the current state without advancing time.
    /// Pairs of clusters founded in the same timestep as each other are
    /// included here (useful for externally seeded states).
    pub fn evaluate_merges(&mut self) -> Vec<MergeProposal> {
        let t = self.current_timestep.unwrap_or(0);
        let mut inflow: BTreeMap<ClusterId, usize> = self
            .active()
            .map(|c| (c.id, c.inflow(t)))
            .collect();
        let proposals = self.merge_round(t, &mut inflow, false);
        for p in proposals.iter().filter(|p| p.accepted) {
            let src = &mut self.clusters[p.source.0 as usize];
            src.centroid_history.remove(&t);
            src.size_history.remove(&t);
            src.inflow_history.remove(&t);
        }
        for c in self.clusters.iter_mut().filter(|c| c.is_active()) {
            if c.inflow_history.contains_key(&t) {
                c.centroid_history.insert(t, normalize(&c.moments.sum).expect("non-empty"));
                c.size_history.insert(t, c.moments.count);
                c.inflow_history.insert(t, inflow.get(&c.id).copied().unwrap_or(0));
            }
        }
        proposals
    }

    fn evaluate_merges_at(&mut self, t: Timestep, inflow: &mut BTreeMap<ClusterId, usize>) -> Vec<MergeProposal> {
        self.merge_round(t, inflow, true)
    }

    fn merge_round(&mut self, t: Timestep, inflow: &mut BTreeMap<ClusterId, usize>, skip_same_batch: bool) -> Vec<MergeProposal> {
        let threshold = self.threshold();
        let mut proposals = Vec::new();
        if self.active().count() < 2 {
            return proposals;
        }

        // fixed point sample for every proposal of this round
        let mut pool: Vec<(&str, ClusterId)> = Vec::new();
        for c in self.active() {
            pool.extend(c.all_members().map(|m| (m, c.id)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ u64::from(t).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let take = pool.len().min(self.config.silhouette_sample);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), take).into_vec();
        picked.sort_unstable();
        let sample_vecs: Vec<&[f32]> = picked.iter().map(|&i| self.points[pool[i].0].as_slice()).collect();
        let dist = DistanceMatrix::cosine(&sample_vecs);
        let mut labels: Vec<ClusterId> = picked.iter().map(|&i| pool[i].1).collect();

        let mut rejected: BTreeSet<(ClusterId, ClusterId)> = BTreeSet::new();
        loop {
            let active: Vec<(ClusterId, Vec<f32>, Timestep, usize)> = self
                .active()
                .map(|c| (c.id, c.centroid(), c.born_at, c.size()))
                .collect();
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for i in 0..active.len() {
                for j in (i + 1)..active.len() {
                    if skip_same_batch && active[i].2 == t && active[j].2 == t {
                        continue;
                    }
                    if rejected.contains(&(active[i].0, active[j].0)) {
                        continue;
                    }
                    let s = dot(&active[i].1, &active[j].1);
                    if s >= threshold {
                        candidates.push((s, i, j));
                    }
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let Some(&(sim, i, j)) = candidates.first() else {
                break;
            };
            let (a, b) = (&active[i], &active[j]);
            // the smaller folds into the larger; equal sizes keep the lower id
            let (target, source) = if b.3 > a.3 { (b.0, a.0) } else { (a.0, b.0) };

            let sil_before = sampled_silhouette(&dist, &labels);
            let pf_before = self.moments_pseudo_f(None);
            let relabeled: Vec<ClusterId> = labels.iter().map(|&l| if l == source { target } else { l }).collect();
            let (sil_after, pf_after, feasible) = if active.len() > 2 {
                (
                    sampled_silhouette(&dist, &relabeled),
                    self.moments_pseudo_f(Some((source, target))),
                    true,
                )
            } else {
                (f64::NAN, f64::NAN, false)
            };
            let accepted = feasible
                && sil_after >= sil_before - self.config.silhouette_tolerance
                && pf_after >= pf_before;
            proposals.push(MergeProposal {
                source,
                target,
                centroid_similarity: sim,
                silhouette_before: sil_before,
                silhouette_after: sil_after,
                pseudo_f_before: pf_before,
                pseudo_f_after: pf_after,
                accepted,
            });
            if accepted {
                self.apply_merge(source, target, t);
                let moved = inflow.remove(&source).unwrap_or(0);
                *inflow.entry(target).or_default() += moved;
                labels = relabeled;
                rejected.retain(|(x, y)| *x != target && *y != target);
            } else {
                rejected.insert((a.0, b.0));
            }
        }
        proposals
    }

    fn moments_pseudo_f(&self, merge: Option<(ClusterId, ClusterId)>) -> f64 {
        let mut moments: Vec<Moments> = Vec::new();
        let mut merged: Option<Moments> = None;
        for c in self.active() {
            match merge {
                Some((s, tg)) if c.id == s || c.id == tg => match merged.as_mut() {
                    Some(m) => m.absorb(&c.moments),
                    None => merged = Some(c.moments.clone()),
                },
                _ => moments.push(c.moments.clone()),
            }
        }
        moments.extend(merged);
        validity::pseudo_f_from_moments(&moments).unwrap_or(0.0)
    }

    fn apply_merge(&mut self, source: ClusterId, target: ClusterId, t: Timestep) {
        let src = std::mem::replace(&mut self.clusters[source.0 as usize].status, ClusterStatus::MergedInto { target, at: t });
        debug_assert_eq!(src, ClusterStatus::Active);
        let (moments, members) = {
            let s = &self.clusters[source.0 as usize];
            (s.moments.clone(), s.members.clone())
        };
        let tg = &mut self.clusters[target.0 as usize];
        tg.moments.absorb(&moments);
        for (ts, ids) in members {
            tg.members.entry(ts).or_default().extend(ids);
        }
        tg.merged_from.push((source, t));
    }

    /// Creates one active cluster per group at the next timestep without
    /// absorption or merging; used to seed a state from a known partition.
    pub fn seed_partition(&mut self, groups: &[Vec<EmbeddedUnit>]) -> Result<Vec<ClusterId>> {
        let t = self.next_timestep();
        let mut ids = Vec::new();
        for g in groups {
            if g.is_empty() {
                return Err(Error::Domain("empty seed group".into()));
            }
            for u in g {
                let d = *self.dim.get_or_insert(u.vector.len());
                if d != u.vector.len() {
                    return Err(Error::Config("dimension mismatch in seed group".into()));
                }
            }
        }
        let dim = self.dim.unwrap_or(0);
        for g in groups {
            let id = ClusterId(self.clusters.len() as u64);
            let mut c = StoryCluster::new(id, t, dim);
            for u in g {
                c.moments.add(&u.vector);
                self.points.insert(u.unit_id.clone(), u.vector.clone());
            }
            c.members.insert(t, g.iter().map(|u| u.unit_id.clone()).collect());
            c.inflow_history.insert(t, g.len());
            self.clusters.push(c);
            ids.push(id);
        }
        for c in self.clusters.iter_mut().filter(|c| c.is_active()) {
            c.centroid_history.insert(t, normalize(&c.moments.sum).expect("non-empty"));
            c.size_history.insert(t, c.moments.count);
            c.inflow_history.entry(t).or_insert(0);
        }
        self.current_timestep = Some(t);
        Ok(ids)
    }

    /// Immutable per-timestep view in the snapshot file layout.
    pub fn snapshot(&self, t: Timestep) -> Snapshot {
        Snapshot::of(self, t)
    }
}

fn sampled_silhouette(dist: &DistanceMatrix, labels: &[ClusterId]) -> f64 {
    validity::silhouette_from_distances(dist, labels).unwrap_or(0.0)
}

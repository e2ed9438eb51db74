//! Analyst-seeded macro-narratives.
//!
//! A narrative starts from one story cluster. Clusters whose centroids sit
//! in a similarity band around the current seeds are queued as candidates
//! (breadth-first); a reviewer approves or rejects each one. The normalized
//! mean of the approved seeds' centroids is the narrative centroid, and
//! every story cluster close enough to it at a timestep is attached.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use chrono::{DateTime, Utc};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterId, ClusterState, Timestep};
use crate::embed::{dot, normalize};
use crate::error::{Error, Result};

pub const DEFAULT_BAND: (f64, f64) = (0.7, 0.8);
pub const DEFAULT_ATTACH_THRESHOLD: f64 = 0.7;
pub const DEFAULT_SAMPLE: usize = 20;

/// On-disk narrative definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeDefinition {
    pub name: String,
    pub initial_seed: ClusterId,
    #[serde(default = "default_band")]
    pub band: [f64; 2],
    #[serde(default = "default_attach")]
    pub attach_threshold: f64,
    /// Weight seed centroids by cluster size instead of equally.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub size_weighted: bool,
}

fn default_band() -> [f64; 2] {
    [DEFAULT_BAND.0, DEFAULT_BAND.1]
}

fn default_attach() -> f64 {
    DEFAULT_ATTACH_THRESHOLD
}

impl NarrativeDefinition {
    pub fn new(name: impl Into<String>, initial_seed: ClusterId) -> Self {
        Self {
            name: name.into(),
            initial_seed,
            band: default_band(),
            attach_threshold: DEFAULT_ATTACH_THRESHOLD,
            size_weighted: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.band;
        if !(-1.0..=1.0).contains(&lo) || !(-1.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("invalid similarity band [{lo}, {hi}]")));
        }
        if !(-1.0..=1.0).contains(&self.attach_threshold) {
            return Err(Error::Config(format!("attach threshold {} outside [-1, 1]", self.attach_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Pending,
    Approved,
    Rejected,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Pending => "pending",
            Decision::Approved => "approved",
            Decision::Rejected => "rejected",
        })
    }
}

impl std::str::FromStr for Decision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(Decision::Pending),
            "approved" => Ok(Decision::Approved),
            "rejected" => Ok(Decision::Rejected),
            other => Err(Error::Domain(format!("unknown decision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCandidate {
    pub id: String,
    pub cluster_id: ClusterId,
    pub discovered_at: Timestep,
    /// BFS parent.
    pub via: ClusterId,
    pub similarity_to_frontier: f64,
    pub decision: Decision,
    pub reviewer: Option<String>,
    pub decided_at: Option<DateTime<Utc>>,
}

/// One line of the append-only decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub narrative: String,
    pub cluster: ClusterId,
    pub decision: Decision,
    pub reviewer: String,
    pub at: DateTime<Utc>,
}

pub fn candidate_id(narrative: &str, cluster: ClusterId) -> String {
    format!("{narrative}:{cluster}")
}

/// Splits `"<narrative>:<cluster>"`.
pub fn parse_candidate_id(id: &str) -> Result<(&str, ClusterId)> {
    let (n, c) = id
        .rsplit_once(':')
        .ok_or_else(|| Error::NotFound(format!("candidate {id}")))?;
    let c = c.parse().map_err(|_| Error::NotFound(format!("candidate {id}")))?;
    Ok((n, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub id: String,
    pub definition: NarrativeDefinition,
    pub approved_seeds: BTreeSet<ClusterId>,
    /// In discovery order.
    pub candidates: Vec<SeedCandidate>,
    pub centroid_history: BTreeMap<Timestep, Vec<f32>>,
    pub attached: BTreeMap<Timestep, BTreeSet<ClusterId>>,
}

impl Narrative {
    pub fn init(id: impl Into<String>, definition: NarrativeDefinition, state: &ClusterState) -> Result<Self> {
        definition.validate()?;
        let seed = state
            .cluster(definition.initial_seed)
            .ok_or_else(|| Error::NotFound(format!("cluster {}", definition.initial_seed)))?;
        if !seed.is_active() {
            return Err(Error::Domain(format!("seed cluster {} is no longer active", seed.id)));
        }
        Ok(Self::from_definition(id, definition))
    }

    /// Builds the narrative without checking the seed against a state.
    pub fn from_definition(id: impl Into<String>, definition: NarrativeDefinition) -> Self {
        Self {
            id: id.into(),
            approved_seeds: BTreeSet::from([definition.initial_seed]),
            definition,
            candidates: Vec::new(),
            centroid_history: BTreeMap::new(),
            attached: BTreeMap::new(),
        }
    }

    pub fn candidate(&self, cluster: ClusterId) -> Option<&SeedCandidate> {
        self.candidates.iter().find(|c| c.cluster_id == cluster)
    }

    pub fn pending(&self) -> impl Iterator<Item = &SeedCandidate> {
        self.candidates.iter().filter(|c| c.decision == Decision::Pending)
    }

    /// Breadth-first candidate discovery at `t`. Returns the newly queued
    /// candidates; clusters are queued at most once per narrative.
    pub fn enqueue_candidates(&mut self, state: &ClusterState, t: Timestep) -> Vec<SeedCandidate> {
        if state.current_timestep.is_none_or(|cur| t > cur) {
            return Vec::new();
        }
        let [lo, hi] = self.definition.band;
        let mut seen: HashSet<ClusterId> = self.approved_seeds.iter().copied().collect();
        seen.extend(self.candidates.iter().map(|c| c.cluster_id));
        let mut queue: VecDeque<ClusterId> = self.approved_seeds.iter().copied().collect();
        queue.extend(self.pending().map(|c| c.cluster_id));
        let pool: Vec<(ClusterId, &[f32])> = state
            .alive_at(t)
            .filter_map(|c| Some((c.id, c.centroid_at(t)?)))
            .collect();
        let mut found = Vec::new();
        while let Some(f) = queue.pop_front() {
            let Some(fc) = state.cluster(f).and_then(|c| c.centroid_at(t)) else {
                continue;
            };
            for &(id, centroid) in &pool {
                if seen.contains(&id) {
                    continue;
                }
                let sim = dot(fc, centroid);
                if sim >= lo && sim <= hi {
                    seen.insert(id);
                    queue.push_back(id);
                    found.push(SeedCandidate {
                        id: candidate_id(&self.id, id),
                        cluster_id: id,
                        discovered_at: t,
                        via: f,
                        similarity_to_frontier: sim,
                        decision: Decision::Pending,
                        reviewer: None,
                        decided_at: None,
                    });
                }
            }
        }
        self.candidates.extend(found.iter().cloned());
        found
    }

    /// `n` uniformly drawn members of the candidate cluster as of its
    /// discovery timestep, in a stable order.
    pub fn review_sample(&self, state: &ClusterState, cluster: ClusterId, n: usize, seed: u64) -> Result<Vec<String>> {
        let cand = self
            .candidate(cluster)
            .ok_or_else(|| Error::NotFound(format!("candidate {}", candidate_id(&self.id, cluster))))?;
        let c = state
            .cluster(cluster)
            .ok_or_else(|| Error::NotFound(format!("cluster {cluster}")))?;
        let members: Vec<&str> = c.members_up_to(cand.discovered_at).collect();
        if members.is_empty() {
            return Err(Error::Domain(format!("cluster {cluster} has no members")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cluster.0.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut picked: Vec<String> = members.choose_multiple(&mut rng, n).map(|s| s.to_string()).collect();
        picked.sort();
        Ok(picked)
    }

    pub fn record_decision(
        &mut self,
        cluster: ClusterId,
        decision: Decision,
        reviewer: &str,
        at: DateTime<Utc>,
    ) -> Result<DecisionRecord> {
        if decision == Decision::Pending {
            return Err(Error::Domain("a decision must be approved or rejected".into()));
        }
        let id = self.id.clone();
        let cand = self
            .candidates
            .iter_mut()
            .find(|c| c.cluster_id == cluster)
            .ok_or_else(|| Error::NotFound(format!("candidate {}", candidate_id(&id, cluster))))?;
        if cand.decision != Decision::Pending {
            return Err(Error::Conflict(format!("candidate {} already {}", cand.id, cand.decision)));
        }
        cand.decision = decision;
        cand.reviewer = Some(reviewer.to_string());
        cand.decided_at = Some(at);
        if decision == Decision::Approved {
            self.approved_seeds.insert(cluster);
        }
        Ok(DecisionRecord {
            narrative: id,
            cluster,
            decision,
            reviewer: reviewer.to_string(),
            at,
        })
    }

    /// Applies every log record for this narrative whose candidate is
    /// currently pending. Returns how many were applied.
    pub fn apply_decisions<'a>(&mut self, log: impl IntoIterator<Item = &'a DecisionRecord>) -> usize {
        let mut applied = 0;
        for r in log {
            if r.narrative != self.id {
                continue;
            }
            if self.candidate(r.cluster).is_some_and(|c| c.decision == Decision::Pending)
                && self.record_decision(r.cluster, r.decision, &r.reviewer, r.at).is_ok()
            {
                applied += 1;
            }
        }
        applied
    }

    /// Normalized mean of the approved seeds' last-known centroids at `t`.
    pub fn centroid(&self, state: &ClusterState, t: Timestep) -> Result<Vec<f32>> {
        let contributors: Vec<(&[f32], usize)> = self
            .approved_seeds
            .iter()
            .filter_map(|id| {
                let c = state.cluster(*id)?;
                Some((c.centroid_at(t)?, c.size_at(t).unwrap_or(1)))
            })
            .collect();
        match contributors.as_slice() {
            [] => Err(Error::Domain(format!("narrative {} has no seed centroid at or before timestep {t}", self.id))),
            [(only, _)] => Ok(only.to_vec()),
            many => {
                let mut sum = vec![0.0f64; many[0].0.len()];
                for (c, size) in many {
                    let w = if self.definition.size_weighted { *size as f64 } else { 1.0 };
                    for (s, x) in sum.iter_mut().zip(c.iter()) {
                        *s += w * f64::from(*x);
                    }
                }
                normalize(&sum)
            }
        }
    }

    /// Computes and records the centroid and attached clusters at `t`.
    pub fn attach_clusters(&mut self, state: &ClusterState, t: Timestep) -> Result<BTreeSet<ClusterId>> {
        let centroid = self.centroid(state, t)?;
        let set = attached_set(state, &centroid, &self.approved_seeds, t, self.definition.attach_threshold);
        self.centroid_history.insert(t, centroid);
        self.attached.insert(t, set.clone());
        Ok(set)
    }

    /// Recomputes centroid and attachment history for every timestep up to
    /// `through` from the current approved set (retroactive re-attachment).
    pub fn recompute(&mut self, state: &ClusterState, through: Timestep) {
        self.centroid_history.clear();
        self.attached.clear();
        for t in 0..=through {
            // timesteps before any seed existed have no centroid
            let _ = self.attach_clusters(state, t);
        }
    }

    /// One pipeline step: apply pending decisions, discover candidates at
    /// `t`, then recompute attachments through `t`.
    pub fn step<'a>(
        &mut self,
        state: &ClusterState,
        t: Timestep,
        log: impl IntoIterator<Item = &'a DecisionRecord>,
    ) -> Vec<SeedCandidate> {
        self.apply_decisions(log);
        let found = self.enqueue_candidates(state, t);
        self.recompute(state, t);
        found
    }

    /// Member units arriving at `t` in clusters attached at `t`.
    pub fn units_at<'s>(&self, state: &'s ClusterState, t: Timestep) -> Vec<&'s str> {
        let mut out = Vec::new();
        if let Some(set) = self.attached.get(&t) {
            for id in set {
                if let Some(m) = state.cluster(*id).and_then(|c| c.members.get(&t)) {
                    out.extend(m.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Per-timestep unit counts over attached clusters, zero-filled from 0
    /// to the last recorded timestep.
    pub fn series(&self, state: &ClusterState) -> Vec<(Timestep, usize)> {
        let Some(&last) = self.attached.keys().next_back() else {
            return Vec::new();
        };
        (0..=last).map(|t| (t, self.units_at(state, t).len())).collect()
    }
}

/// Clusters alive at `t` within `threshold` of `centroid`, plus any
/// approved seeds alive at `t`.
pub fn attached_set(
    state: &ClusterState,
    centroid: &[f32],
    seeds: &BTreeSet<ClusterId>,
    t: Timestep,
    threshold: f64,
) -> BTreeSet<ClusterId> {
    state
        .alive_at(t)
        .filter(|c| seeds.contains(&c.id) || c.centroid_at(t).is_some_and(|cc| dot(cc, centroid) >= threshold))
        .map(|c| c.id)
        .collect()
}

/// Divides by the series maximum; an all-zero series stays zero.
pub fn max_normalize(values: &[usize]) -> Vec<f64> {
    let max = values.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| v as f64 / max as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterConfig, EmbeddedUnit};
    use proptest::prelude::*;

    fn unit(id: &str, v: &[f64]) -> EmbeddedUnit {
        EmbeddedUnit {
            unit_id: id.into(),
            vector: normalize(v).unwrap(),
        }
    }

    /// Unit vector in the (e0, e_k) plane at cosine `c` to e0.
    fn at_cos(c: f64, k: usize, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = c;
        v[k] = (1.0 - c * c).sqrt();
        v
    }

    /// One cluster per direction, each with `n` identical members.
    fn state_of(dirs: &[Vec<f64>], n: usize) -> ClusterState {
        let mut s = ClusterState::new(ClusterConfig {
            similarity_threshold: 0.95,
            ..ClusterConfig::default()
        })
        .unwrap();
        let groups: Vec<Vec<EmbeddedUnit>> = dirs
            .iter()
            .enumerate()
            .map(|(g, d)| (0..n).map(|i| unit(&format!("g{g}u{i}"), d)).collect())
            .collect();
        s.seed_partition(&groups).unwrap();
        s
    }

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2022-03-01T00:00:00Z").unwrap().with_timezone(&Utc)
    }

    #[test]
    fn init_checks_seed() {
        let s = state_of(&[at_cos(1.0, 1, 4)], 2);
        assert!(matches!(
            Narrative::init("n", NarrativeDefinition::new("x", ClusterId(7)), &s),
            Err(Error::NotFound(_))
        ));
        let n = Narrative::init("n", NarrativeDefinition::new("x", ClusterId(0)), &s).unwrap();
        assert_eq!(n.definition.band, [0.7, 0.8]);
        assert_eq!(n.approved_seeds.len(), 1);
        // single-seed identity, bit-exact
        assert_eq!(n.centroid(&s, 0).unwrap(), s.cluster(ClusterId(0)).unwrap().centroid_at(0).unwrap());
    }

    #[test]
    fn band_membership_and_bfs_chain() {
        // seed e0; c1 at 0.75 (in band); c2 at 0.85 (above band);
        // c3 in band of c1 but at ~0.5 of the seed
        let dim = 6;
        let c1 = at_cos(0.75, 1, dim);
        let mut c3 = vec![0.0; dim];
        // cos(c1, c3) = 0.75 and cos(e0, c3) small
        let s1 = (1.0f64 - 0.75 * 0.75).sqrt();
        c3[0] = 0.75 * 0.75 - 0.2;
        c3[1] = (0.75 - c3[0] * 0.75) / s1;
        c3[2] = (1.0 - c3[0] * c3[0] - c3[1] * c3[1]).sqrt();
        let s = state_of(&[at_cos(1.0, 1, dim), c1, at_cos(0.85, 3, dim), c3], 3);
        let mut n = Narrative::init("n", NarrativeDefinition::new("x", ClusterId(0)), &s).unwrap();
        let found = n.enqueue_candidates(&s, 0);
        let ids: Vec<u64> = found.iter().map(|c| c.cluster_id.0).collect();
        assert_eq!(ids, vec![1, 3]);
        assert_eq!(found[1].via, ClusterId(1));
        assert!((found[0].similarity_to_frontier - 0.75).abs() < 1e-6);
        assert_eq!(found[0].id, "n:1");
        // once per narrative
        assert!(n.enqueue_candidates(&s, 0).is_empty());
    }

    #[test]
    fn rejected_never_requeued_and_decisions_immutable() {
        let dim = 4;
        let s = state_of(&[at_cos(1.0, 1, dim), at_cos(0.75, 1, dim)], 2);
        let mut n = Narrative::init("n", NarrativeDefinition::new("x", ClusterId(0)), &s).unwrap();
        n.enqueue_candidates(&s, 0);
        n.record_decision(ClusterId(1), Decision::Rejected, "ana", t0()).unwrap();
        assert!(n.enqueue_candidates(&s, 0).is_empty());
        assert!(matches!(
            n.record_decision(ClusterId(1), Decision::Approved, "ana", t0()),
            Err(Error::Conflict(_))
        ));
        assert!(matches!(
            n.record_decision(ClusterId(9), Decision::Approved, "ana", t0()),
            Err(Error::NotFound(_))
        ));
        assert_eq!(n.approved_seeds.len(), 1);
    }

    #[test]
    fn two_orthogonal_seeds_and_three_seed_hand_mean() {
        let s = state_of(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]], 1);
        let mut n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(0)));
        n.approved_seeds.insert(ClusterId(1));
        let c = n.centroid(&s, 0).unwrap();
        let r = 1.0 / 2f32.sqrt();
        assert!((c[0] - r).abs() < 1e-7 && (c[1] - r).abs() < 1e-7);
        n.approved_seeds.insert(ClusterId(2));
        // (1 + 0 + 0.6, 0 + 1 + 0.8) = (1.6, 1.8), norm √5.8
        let c = n.centroid(&s, 0).unwrap();
        let norm = 5.8f64.sqrt();
        assert!((f64::from(c[0]) - 1.6 / norm).abs() < 1e-7);
        assert!((f64::from(c[1]) - 1.8 / norm).abs() < 1e-7);
    }

    #[test]
    fn approving_identical_seed_is_a_fixed_point() {
        let s = state_of(&[vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0]], 2);
        let mut n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(0)));
        let before = n.centroid(&s, 0).unwrap();
        n.approved_seeds.insert(ClusterId(1));
        let after = n.centroid(&s, 0).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn dormant_seed_contributes_last_centroid() {
        let mut s = state_of(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], 3);
        // t=1: only the second cluster receives points, both stay alive
        s.incremental_fit(&[unit("late", &[0.0, 1.0, 0.01])]).unwrap();
        let n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(0)));
        assert_eq!(n.centroid(&s, 1).unwrap(), n.centroid(&s, 0).unwrap());
        assert!(n.centroid(&s, 0).is_ok());
        let late = Narrative::from_definition("m", NarrativeDefinition::new("y", ClusterId(5)));
        assert!(matches!(late.centroid(&s, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn seeds_always_attached_and_rejected_still_attachable() {
        let dim = 4;
        let s = state_of(&[at_cos(1.0, 1, dim), at_cos(0.75, 1, dim), at_cos(0.1, 2, dim)], 2);
        let mut n = Narrative::init("n", NarrativeDefinition::new("x", ClusterId(0)), &s).unwrap();
        n.enqueue_candidates(&s, 0);
        n.record_decision(ClusterId(1), Decision::Rejected, "r", t0()).unwrap();
        let att = n.attach_clusters(&s, 0).unwrap();
        assert_eq!(att, BTreeSet::from([ClusterId(0), ClusterId(1)]));
        assert_eq!(n.series(&s), vec![(0, 4)]);
    }

    #[test]
    fn series_and_normalization() {
        assert_eq!(max_normalize(&[3, 6, 0]), vec![0.5, 1.0, 0.0]);
        assert_eq!(max_normalize(&[0, 0]), vec![0.0, 0.0]);
        let n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(0)));
        let s = state_of(&[vec![1.0, 0.0]], 1);
        assert!(n.series(&s).is_empty());
    }

    #[test]
    fn cluster_attaches_once_the_centroid_moves_close() {
        let deg = |d: f64| vec![d.to_radians().cos(), d.to_radians().sin()];
        let mut s = ClusterState::new(ClusterConfig::default()).unwrap();
        // seed at 0°, bystander at 50° (cos ≈ 0.64, below 0.7)
        s.seed_partition(&[vec![unit("a", &deg(0.0))], vec![unit("x", &deg(50.0))]]).unwrap();
        for _ in 1..5 {
            s.incremental_fit(&[]).unwrap();
        }
        // second seed born at t=5 pulls the centroid to 30°
        s.seed_partition(&[vec![unit("b", &deg(60.0))]]).unwrap();
        let mut n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(0)));
        n.approved_seeds.insert(ClusterId(2));
        n.recompute(&s, 5);
        let when: Vec<Timestep> = (0..=5).filter(|t| n.attached[t].contains(&ClusterId(1))).collect();
        assert_eq!(when, vec![5]);
    }

    proptest! {
        #[test]
        fn attachment_monotone_in_threshold(seed in 0u64..500, a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let dirs = crate::synth::random_unit_vectors(8, 3, seed);
            let dirs: Vec<Vec<f64>> = dirs.iter().map(|d| d.iter().map(|x| f64::from(*x)).collect()).collect();
            let s = state_of(&dirs, 1);
            let n = Narrative::from_definition("n", NarrativeDefinition::new("x", ClusterId(seed % 8)));
            let c = n.centroid(&s, 0).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let loose = attached_set(&s, &c, &n.approved_seeds, 0, lo);
            let strict = attached_set(&s, &c, &n.approved_seeds, 0, hi);
            prop_assert!(strict.is_subset(&loose));
        }
    }
}

//! Channel reference network and seed-guided label propagation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RawPost;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_AUDIT_SAMPLE: usize = 75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "community-A")]
    CommunityA,
    #[serde(rename = "community-B")]
    CommunityB,
    #[serde(rename = "other")]
    Other,
    #[serde(rename = "unlabeled")]
    Unlabeled,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::CommunityA => "community-A",
            Label::CommunityB => "community-B",
            Label::Other => "other",
            Label::Unlabeled => "unlabeled",
        })
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "community-A" => Ok(Label::CommunityA),
            "community-B" => Ok(Label::CommunityB),
            "other" => Ok(Label::Other),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::Domain(format!("unknown label {other:?}"))),
        }
    }
}

/// One line of the graph file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: String,
    pub to: String,
    pub w: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeMap<(String, String), u64>,
}

impl ReferenceGraph {
    pub fn add_event(&mut self, from: &str, to: &str) {
        self.nodes.insert(from.to_string());
        self.nodes.insert(to.to_string());
        if from != to {
            *self.edges.entry((from.to_string(), to.to_string())).or_default() += 1;
        }
    }

    pub fn edge_records(&self) -> Vec<EdgeRecord> {
        self.edges
            .iter()
            .map(|((from, to), w)| EdgeRecord {
                from: from.clone(),
                to: to.clone(),
                w: *w,
            })
            .collect()
    }

    pub fn from_records(records: &[EdgeRecord]) -> Result<Self> {
        let mut g = Self::default();
        for r in records {
            if r.w == 0 {
                return Err(Error::Domain(format!("edge {} -> {} has zero weight", r.from, r.to)));
            }
            g.nodes.insert(r.from.clone());
            g.nodes.insert(r.to.clone());
            if r.from != r.to {
                *g.edges.entry((r.from.clone(), r.to.clone())).or_default() += r.w;
            }
        }
        Ok(g)
    }
}

/// One edge increment per forward and per reference; self-references are
/// dropped. Every posting channel becomes a node.
pub fn build_reference_graph(posts: &[RawPost]) -> ReferenceGraph {
    let mut g = ReferenceGraph::default();
    for p in posts {
        g.nodes.insert(p.channel_id.clone());
        if let Some(src) = &p.fwd_from {
            g.add_event(&p.channel_id, src);
        }
        for r in &p.referenced_channels {
            g.add_event(&p.channel_id, r);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionLabel {
    pub channel: String,
    pub label: Label,
    pub seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: BTreeMap<String, PartitionLabel>,
    pub rounds: usize,
    pub converged: bool,
    /// Label choices that had to be settled by the tie-break RNG.
    pub random_tie_breaks: usize,
}

impl Partition {
    pub fn label_of(&self, channel: &str) -> Option<Label> {
        self.labels.get(channel).map(|l| l.label)
    }
}

type Adjacency = Vec<Vec<(usize, f64)>>;

/// Symmetrized weighted adjacency over sorted node indices.
fn adjacency(graph: &ReferenceGraph) -> (Vec<&String>, Adjacency) {
    let nodes: Vec<&String> = graph.nodes.iter().collect();
    let index: BTreeMap<&String, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for ((a, b), w) in &graph.edges {
        let (i, j) = (index[a], index[b]);
        *sym.entry((i.min(j), i.max(j))).or_default() += *w as f64;
    }
    let mut adj = vec![Vec::new(); nodes.len()];
    for ((i, j), w) in sym {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    (nodes, adj)
}

fn round_rng(seed: u64, round: usize, node: usize) -> ChaCha8Rng {
    let mix = (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (node as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    ChaCha8Rng::seed_from_u64(seed ^ mix)
}

fn next_label(
    i: usize,
    adj: &[Vec<(usize, f64)>],
    labels: &[Option<Label>],
    round: usize,
    seed: u64,
) -> (Option<Label>, bool) {
    let mut tally: BTreeMap<Label, f64> = BTreeMap::new();
    for &(j, w) in &adj[i] {
        if let Some(l) = labels[j] {
            *tally.entry(l).or_default() += w;
        }
    }
    let best = tally.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<Label> = tally.into_iter().filter(|(_, w)| *w == best).map(|(l, _)| l).collect();
    match tied.as_slice() {
        [] => (labels[i], false),
        [only] => (Some(*only), false),
        many => {
            if labels[i].is_some_and(|cur| many.contains(&cur)) {
                (labels[i], false)
            } else {
                (many.choose(&mut round_rng(seed, round, i)).copied(), true)
            }
        }
    }
}

/// Synchronous weighted label propagation on the symmetrized graph. Seeds
/// keep their labels; nodes never reached stay unlabeled.
pub fn propagate_labels(
    graph: &ReferenceGraph,
    seeds: &BTreeMap<String, Label>,
    max_iters: usize,
    rng_seed: u64,
) -> Result<Partition> {
    if seeds.is_empty() {
        return Err(Error::Domain("label propagation needs at least one seed".into()));
    }
    if let Some((c, _)) = seeds.iter().find(|(_, l)| **l == Label::Unlabeled) {
        return Err(Error::Domain(format!("seed {c} cannot be 'unlabeled'")));
    }
    if let Some(c) = seeds.keys().find(|c| !graph.nodes.contains(*c)) {
        return Err(Error::NotFound(format!("seed channel {c} is not in the graph")));
    }
    let (nodes, adj) = adjacency(graph);
    let is_seed: Vec<bool> = nodes.iter().map(|n| seeds.contains_key(*n)).collect();
    let mut labels: Vec<Option<Label>> = nodes.iter().map(|n| seeds.get(*n).copied()).collect();
    let mut rounds = 0;
    let mut converged = false;
    let mut random_tie_breaks = 0;
    while rounds < max_iters {
        let step: Vec<(Option<Label>, bool)> = (0..nodes.len())
            .into_par_iter()
            .map(|i| if is_seed[i] { (labels[i], false) } else { next_label(i, &adj, &labels, rounds, rng_seed) })
            .collect();
        random_tie_breaks += step.iter().filter(|s| s.1).count();
        let next: Vec<Option<Label>> = step.into_iter().map(|s| s.0).collect();
        rounds += 1;
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    let labels = nodes
        .iter()
        .zip(labels)
        .zip(is_seed)
        .map(|((n, l), seed)| {
            (
                (*n).clone(),
                PartitionLabel {
                    channel: (*n).clone(),
                    label: l.unwrap_or(Label::Unlabeled),
                    seed,
                },
            )
        })
        .collect();
    Ok(Partition {
        labels,
        rounds,
        converged,
        random_tie_breaks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSample {
    pub label: Label,
    pub channels: Vec<String>,
    /// The class had fewer than the requested number of channels.
    pub undersized: bool,
}

/// `n` channels drawn uniformly from one label class, sorted.
pub fn partition_sample(partition: &Partition, label: Label, n: usize, seed: u64) -> AuditSample {
    let class: Vec<&String> = partition
        .labels
        .values()
        .filter(|p| p.label == label)
        .map(|p| &p.channel)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channels: Vec<String> = class.choose_multiple(&mut rng, n).map(|c| (*c).clone()).collect();
    channels.sort();
    AuditSample {
        label,
        undersized: class.len() < n,
        channels,
    }
}

//! Average-linkage agglomerative clustering under cosine similarity.
//!
//! The full dendrogram is built with the nearest-neighbour chain algorithm
//! (valid because average linkage is reducible), then cut: every merge whose
//! linkage similarity is at least the threshold is applied. Because merge
//! heights are monotone this is the same partition the greedy
//! "merge the most similar pair until below threshold" loop produces.

use crate::embed::dot;

/// One dendrogram step: clusters rooted at `a` and `b` joined at `similarity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

/// Clusters as lists of input indices. Members ascend; clusters are ordered
/// by their smallest member.
pub type Partition = Vec<Vec<usize>>;

pub fn similarity_matrix(points: &[&[f32]]) -> Vec<f64> {
    let n = points.len();
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        sim[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let s = dot(points[i], points[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    sim
}

/// Complete average-linkage dendrogram (`n - 1` merges for `n > 0` points).
pub fn dendrogram(points: &[&[f32]]) -> Vec<Merge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut sim = similarity_matrix(points);
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut remaining = n;
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges = Vec::with_capacity(n - 1);

    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|a| *a).unwrap());
        }
        let a = *chain.last().unwrap();
        let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };

        // Nearest neighbour of `a`; the chain predecessor wins ties so the
        // chain cannot cycle.
        let mut best: Option<(usize, f64)> = prev.map(|p| (p, sim[a * n + p]));
        for c in 0..n {
            if !active[c] || c == a || Some(c) == prev {
                continue;
            }
            let s = sim[a * n + c];
            match best {
                Some((_, bs)) if s <= bs => {}
                _ => best = Some((c, s)),
            }
        }
        let (b, s) = best.unwrap();

        if Some(b) == prev {
            chain.pop();
            chain.pop();
            let (keep, drop) = if a < b { (a, b) } else { (b, a) };
            let (na, nb) = (size[keep] as f64, size[drop] as f64);
            for c in 0..n {
                if active[c] && c != keep && c != drop {
                    let merged = (na * sim[keep * n + c] + nb * sim[drop * n + c]) / (na + nb);
                    sim[keep * n + c] = merged;
                    sim[c * n + keep] = merged;
                }
            }
            size[keep] += size[drop];
            active[drop] = false;
            remaining -= 1;
            merges.push(Merge {
                a: keep,
                b: drop,
                similarity: s,
            });
        } else {
            chain.push(b);
        }
    }
    merges
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Cuts a dendrogram at `threshold`.
pub fn cut(n: usize, merges: &[Merge], threshold: f64) -> Partition {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in merges.iter().filter(|m| m.similarity >= threshold) {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Partition = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Average-linkage clustering stopped at `threshold` average similarity.
pub fn batch_hac(points: &[&[f32]], threshold: f64) -> Partition {
    cut(points.len(), &dendrogram(points), threshold)
}

/// Mean pairwise similarity within a group; 1.0 for singletons.
pub fn internal_similarity(points: &[&[f32]], group: &[usize]) -> f64 {
    if group.len() < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, &p) in group.iter().enumerate() {
        for &q in &group[i + 1..] {
            total += dot(points[p], points[q]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_unit_vectors;
    use proptest::prelude::*;

    /// Textbook greedy average linkage: merge the most similar pair of
    /// clusters, recomputing linkages from raw point similarities.
    fn naive_average_linkage(points: &[&[f32]], threshold: f64) -> Partition {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..clusters.len() {
                for j in (i + 1)..clusters.len() {
                    let mut s = 0.0;
                    for &p in &clusters[i] {
                        for &q in &clusters[j] {
                            s += dot(points[p], points[q]);
                        }
                    }
                    s /= (clusters[i].len() * clusters[j].len()) as f64;
                    if best.is_none_or(|(_, _, bs)| s > bs) {
                        best = Some((i, j, s));
                    }
                }
            }
            match best {
                Some((i, j, s)) if s >= threshold => {
                    let moved = clusters.remove(j);
                    clusters[i].extend(moved);
                }
                _ => break,
            }
        }
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|g| g[0]);
        clusters
    }

    fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn single_point_is_singleton() {
        let p = vec![vec![1.0f32, 0.0]];
        assert_eq!(batch_hac(&refs(&p), 0.85), vec![vec![0]]);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let p = vec![vec![0.6f32, 0.8]; 5];
        assert_eq!(batch_hac(&refs(&p), 0.85), vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn two_tight_pairs() {
        // within-pair similarity 0.99, cross-pair 0.10 (constructed in 4-D)
        let w = (1.0f64 - 0.99f64 * 0.99).sqrt();
        let e = |v: [f64; 4]| v.iter().map(|x| *x as f32).collect::<Vec<f32>>();
        let a = e([1.0, 0.0, 0.0, 0.0]);
        let b = e([0.99, w, 0.0, 0.0]);
        let c = e([0.1, 0.0, (1.0f64 - 0.01).sqrt(), 0.0]);
        let c_perp = [0.0, 0.0, 0.0, 1.0];
        let c2 = e([0.1 * 0.99, 0.0, (1.0f64 - 0.01).sqrt() * 0.99, w * c_perp[3]]);
        let pts = vec![a, c, b, c2];
        let part = batch_hac(&refs(&pts), 0.85);
        assert_eq!(part, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(part, naive_average_linkage(&refs(&pts), 0.85));
    }

    #[test]
    fn matches_naive_greedy_on_random_clouds() {
        for seed in 0..30u64 {
            let pts = random_unit_vectors(40, 6, seed);
            for thr in [0.2, 0.5, 0.7, 0.85] {
                let r = refs(&pts);
                assert_eq!(batch_hac(&r, thr), naive_average_linkage(&r, thr), "seed {seed} thr {thr}");
            }
        }
    }

    proptest! {
        #[test]
        fn clusters_meet_internal_threshold(seed in 0u64..500, n in 1usize..60, thr in 0.1f64..0.95) {
            let pts = random_unit_vectors(n, 5, seed);
            let r = refs(&pts);
            let part = batch_hac(&r, thr);
            let mut seen: Vec<usize> = part.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for g in &part {
                prop_assert!(internal_similarity(&r, g) >= thr - 1e-12);
            }
        }
    }
}

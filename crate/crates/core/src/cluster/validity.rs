//! Cluster validity indices: silhouette (cosine distance) and the
//! Calinski–Harabasz pseudo-F (Euclidean, on unit vectors).

use std::collections::BTreeMap;

use crate::embed::dot;
use crate::error::{Error, Result};

/// Condensed symmetric cosine-distance matrix over a point sample.
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine(points: &[&[f32]]) -> Self {
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 1.0 - dot(points[i], points[j]);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Mean silhouette over precomputed distances. Points alone in their
/// cluster score 0.
pub fn silhouette_from_distances<L: Ord + Copy>(dist: &DistanceMatrix, labels: &[L]) -> Result<f64> {
    assert_eq!(dist.len(), labels.len());
    let mut index: BTreeMap<L, usize> = BTreeMap::new();
    for l in labels {
        let next = index.len();
        index.entry(*l).or_insert(next);
    }
    let k = index.len();
    if k < 2 {
        return Err(Error::Domain(format!("silhouette needs at least 2 clusters, got {k}")));
    }
    let dense: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    let mut counts = vec![0usize; k];
    for &c in &dense {
        counts[c] += 1;
    }
    let n = labels.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        let own = dense[i];
        if counts[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[dense[j]] += dist.get(i, j);
            }
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Mean silhouette coefficient under cosine distance.
pub fn silhouette<L: Ord + Copy>(points: &[&[f32]], labels: &[L]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Domain("points and labels differ in length".into()));
    }
    silhouette_from_distances(&DistanceMatrix::cosine(points), labels)
}

/// Sufficient statistics of one cluster for scatter computations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Moments {
    pub count: usize,
    pub sum: Vec<f64>,
    /// Sum of squared norms of the members.
    pub sumsq: f64,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; dim],
            sumsq: 0.0,
        }
    }

    pub fn add(&mut self, v: &[f32]) {
        for (s, x) in self.sum.iter_mut().zip(v) {
            *s += f64::from(*x);
        }
        self.sumsq += dot(v, v);
        self.count += 1;
    }

    pub fn absorb(&mut self, other: &Moments) {
        for (s, x) in self.sum.iter_mut().zip(&other.sum) {
            *s += x;
        }
        self.sumsq += other.sumsq;
        self.count += other.count;
    }

    fn sum_sq_norm(&self) -> f64 {
        self.sum.iter().map(|x| x * x).sum()
    }
}

fn ratio(between: f64, within: f64, n: usize, k: usize) -> f64 {
    let scale = between.abs() + within.abs();
    if within <= 1e-12 * scale.max(1e-300) || within <= 0.0 {
        return if between > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

fn check_counts(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Domain(format!("pseudo-F needs at least 2 clusters, got {k}")));
    }
    if n <= k {
        return Err(Error::Domain(format!("pseudo-F needs more points ({n}) than clusters ({k})")));
    }
    Ok(())
}

/// Calinski–Harabasz index from per-cluster moments. A zero within-cluster
/// scatter yields `+inf`.
pub fn pseudo_f_from_moments<'a>(clusters: impl IntoIterator<Item = &'a Moments>) -> Result<f64> {
    let clusters: Vec<&Moments> = clusters.into_iter().filter(|m| m.count > 0).collect();
    let k = clusters.len();
    let n: usize = clusters.iter().map(|m| m.count).sum();
    check_counts(n, k)?;
    let dim = clusters[0].sum.len();
    let mut grand = vec![0.0; dim];
    let mut sumsq = 0.0;
    let mut explained = 0.0;
    for m in &clusters {
        for (g, s) in grand.iter_mut().zip(&m.sum) {
            *g += s;
        }
        sumsq += m.sumsq;
        explained += m.sum_sq_norm() / m.count as f64;
    }
    let grand_sq: f64 = grand.iter().map(|x| x * x).sum();
    let between = (explained - grand_sq / n as f64).max(0.0);
    let within = (sumsq - explained).max(0.0);
    Ok(ratio(between, within, n, k))
}

/// Calinski–Harabasz index computed directly from points (two-pass).
pub fn pseudo_f<L: Ord + Copy>(points: &[&[f32]], labels: &[L]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Domain("points and labels differ in length".into()));
    }
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(*l).or_default().push(i);
    }
    let n = points.len();
    let k = groups.len();
    check_counts(n, k)?;
    let dim = points[0].len();
    let mean = |idx: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; dim];
        for &i in idx {
            for (a, x) in c.iter_mut().zip(points[i]) {
                *a += f64::from(*x);
            }
        }
        c.iter_mut().for_each(|a| *a /= idx.len() as f64);
        c
    };
    let all: Vec<usize> = (0..n).collect();
    let grand = mean(&all);
    let mut between = 0.0;
    let mut within = 0.0;
    for idx in groups.values() {
        let c = mean(idx);
        between += idx.len() as f64 * c.iter().zip(&grand).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for &i in idx {
            within += points[i].iter().zip(&c).map(|(x, m)| (f64::from(*x) - m).powi(2)).sum::<f64>();
        }
    }
    Ok(ratio(between, within, n, k))
}

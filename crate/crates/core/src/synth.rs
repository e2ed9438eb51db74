//! Synthetic embedding streams on the unit sphere.
//!
//! Used by the test suites and the `run --synthetic` demo: mixtures of
//! von Mises–Fisher components with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};

use crate::cluster::EmbeddedUnit;
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::ingest::DocUnit;

fn gaussian_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `n` vectors drawn uniformly from the unit sphere in `dim` dimensions.
pub fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| gaussian_unit(&mut rng, dim).into_iter().map(|x| x as f32).collect())
        .collect()
}

/// von Mises–Fisher distribution, sampled with Wood's rejection scheme.
#[derive(Debug, Clone)]
pub struct VonMisesFisher {
    mean: Vec<f64>,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Beta<f64>,
}

impl VonMisesFisher {
    pub fn new(mean: &[f32], kappa: f64) -> Self {
        let dim = mean.len();
        assert!(dim >= 2 && kappa > 0.0);
        let n = mean.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let mean: Vec<f64> = mean.iter().map(|x| f64::from(*x) / n).collect();
        let m1 = (dim - 1) as f64;
        let b = (-2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt()) / m1;
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
        Self {
            mean,
            kappa,
            b,
            x0,
            c,
            beta: Beta::new(m1 / 2.0, m1 / 2.0).unwrap(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f32> {
        let dim = self.mean.len();
        let m1 = (dim - 1) as f64;
        let w = loop {
            let z = self.beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if self.kappa * w + m1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                break w;
            }
        };
        // uniform direction orthogonal to the mean
        let v = loop {
            let g = gaussian_unit(rng, dim);
            let proj: f64 = g.iter().zip(&self.mean).map(|(a, b)| a * b).sum();
            let orth: Vec<f64> = g.iter().zip(&self.mean).map(|(a, m)| a - proj * m).collect();
            let n = orth.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-9 {
                break orth.into_iter().map(|x| x / n).collect::<Vec<f64>>();
            }
        };
        let r = (1.0 - w * w).max(0.0).sqrt();
        let x: Vec<f64> = self.mean.iter().zip(&v).map(|(m, o)| w * m + r * o).collect();
        let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        x.into_iter().map(|a| (a / n) as f32).collect()
    }
}

/// A labelled synthetic point.
#[derive(Debug, Clone)]
pub struct SyntheticPoint {
    pub unit: EmbeddedUnit,
    pub component: usize,
}

/// Fixed mixture of vMF components with per-timestep inflow control.
pub struct MixtureStream {
    components: Vec<VonMisesFisher>,
    rng: ChaCha8Rng,
}

impl MixtureStream {
    /// `k` components with uniformly random mean directions.
    pub fn new(k: usize, dim: usize, kappa: f64, seed: u64) -> Self {
        let means = random_unit_vectors(k, dim, seed ^ 0x5e_ed0f_3ea2);
        Self::with_means(&means, kappa, seed)
    }

    pub fn with_means(means: &[Vec<f32>], kappa: f64, seed: u64) -> Self {
        Self {
            components: means.iter().map(|m| VonMisesFisher::new(m, kappa)).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn components(&self) -> &[VonMisesFisher] {
        &self.components
    }

    /// Draws `counts[c]` points from each component `c`, interleaved in a
    /// seeded random order. Unit ids are `t<timestep>-<n>`.
    pub fn batch_with_counts(&mut self, timestep: u32, counts: &[usize]) -> Vec<SyntheticPoint> {
        let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        use rand::seq::SliceRandom;
        labels.shuffle(&mut self.rng);
        labels
            .into_iter()
            .enumerate()
            .map(|(i, c)| SyntheticPoint {
                unit: EmbeddedUnit {
                    unit_id: format!("t{timestep}-{i}"),
                    vector: self.components[c].sample(&mut self.rng),
                },
                component: c,
            })
            .collect()
    }

    /// `n` points with components drawn uniformly.
    pub fn batch(&mut self, timestep: u32, n: usize) -> Vec<SyntheticPoint> {
        let k = self.components.len();
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[self.rng.random_range(0..k)] += 1;
        }
        self.batch_with_counts(timestep, &counts)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Text of a synthetic unit; distinct ids give distinct cache keys.
pub fn synthetic_text(unit_id: &str) -> String {
    format!("synthetic unit {unit_id} body text")
}

/// Document units for synthetic points, one post per point, dated inside
/// the point's window.
pub fn synthetic_units(batches: &[Vec<SyntheticPoint>], corpus_start: DateTime<Utc>, window_days: u32) -> Vec<DocUnit> {
    let mut out = Vec::new();
    for (t, batch) in batches.iter().enumerate() {
        let day = corpus_start + Duration::days(i64::from(window_days) * t as i64);
        for (i, p) in batch.iter().enumerate() {
            out.push(DocUnit {
                unit_id: p.unit.unit_id.clone(),
                post_id: p.unit.unit_id.clone(),
                channel_id: format!("ch{}", p.component),
                author_id: None,
                timestamp: day + Duration::minutes(i as i64 % (60 * 24 * i64::from(window_days.max(1)))),
                timestep: t as u32,
                text: synthetic_text(&p.unit.unit_id),
                fwd_from: None,
                referenced_channels: Vec::new(),
            });
        }
    }
    out
}

/// Provider that returns prepared vectors for known texts.
pub struct TableEmbedder {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl TableEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f32>) {
        self.table.insert(text.into(), vector);
    }

    /// Table keyed by [`synthetic_text`] of every point.
    pub fn from_points<'a>(dim: usize, points: impl IntoIterator<Item = &'a SyntheticPoint>) -> Self {
        let mut e = Self::new(dim);
        for p in points {
            e.insert(synthetic_text(&p.unit.unit_id), p.unit.vector.clone());
        }
        e
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn id(&self) -> &str {
        "table"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        texts
            .iter()
            .map(|t| self.table.get(t).cloned().ok_or_else(|| Error::NotFound(format!("no vector for text {t:?}"))))
            .collect()
    }
}

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ThemeDictionary;
use crate::cluster::{ClusterId, Timestep};
use crate::error::{Error, Result};
use crate::stats::spearman;

/// A narrative unit with its assigned theme labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemedUnit {
    pub unit_id: String,
    pub date: NaiveDate,
    pub timestep: Timestep,
    pub cluster: ClusterId,
    pub themes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub key: String,
    pub count: usize,
    pub total: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeSeries {
    pub theme: String,
    pub daily: Vec<SeriesPoint>,
    pub per_timestep: Vec<SeriesPoint>,
}

impl ThemeSeries {
    pub fn daily_counts(&self) -> Vec<f64> {
        self.daily.iter().map(|p| p.count as f64).collect()
    }
}

fn points<K: Ord + Clone>(keys: impl Iterator<Item = K>, units: &[ThemedUnit], key: impl Fn(&ThemedUnit) -> K, label: &str, fmt: impl Fn(&K) -> String) -> Vec<SeriesPoint> {
    let mut counts: BTreeMap<K, (usize, usize)> = keys.map(|k| (k, (0, 0))).collect();
    for u in units {
        let e = counts.entry(key(u)).or_default();
        e.1 += 1;
        if u.themes.contains(label) {
            e.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, (count, total))| SeriesPoint {
            key: fmt(&k),
            count,
            total,
            proportion: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        })
        .collect()
}

/// Daily (zero-filled between the first and last unit date) and
/// per-timestep counts and proportions of units carrying `theme`.
pub fn theme_series(dictionary: &ThemeDictionary, units: &[ThemedUnit], theme: &str) -> Result<ThemeSeries> {
    let label = dictionary
        .get(theme)
        .ok_or_else(|| Error::NotFound(format!("theme {theme}")))?
        .label
        .clone();
    let days: Vec<NaiveDate> = match (units.iter().map(|u| u.date).min(), units.iter().map(|u| u.date).max()) {
        (Some(lo), Some(hi)) => lo.iter_days().take_while(|d| *d <= hi).collect(),
        _ => Vec::new(),
    };
    let steps: Vec<Timestep> = match units.iter().map(|u| u.timestep).max() {
        Some(hi) => (0..=hi).collect(),
        None => Vec::new(),
    };
    Ok(ThemeSeries {
        daily: points(days.into_iter(), units, |u| u.date, &label, |d| d.to_string()),
        per_timestep: points(steps.into_iter(), units, |u| u.timestep, &label, |t| t.to_string()),
        theme: label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub a: String,
    pub b: String,
    /// Missing when either series is constant or too short.
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
}

/// Spearman correlation of daily counts for every ordered theme pair,
/// diagonal included.
pub fn theme_cooccurrence(series: &[ThemeSeries]) -> Vec<PairStat> {
    let counts: Vec<Vec<f64>> = series.iter().map(ThemeSeries::daily_counts).collect();
    let mut out = Vec::with_capacity(series.len() * series.len());
    for (i, a) in series.iter().enumerate() {
        for (j, b) in series.iter().enumerate() {
            let c = spearman(&counts[i], &counts[j]).ok();
            out.push(PairStat {
                a: a.theme.clone(),
                b: b.theme.clone(),
                rho: c.map(|c| c.rho),
                p_value: c.map(|c| c.p_value),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub from_period: String,
    pub to_period: String,
    pub source: String,
    pub target: String,
    pub clusters: usize,
}

fn month(d: NaiveDate) -> String {
    d.format("%Y-%m").to_string()
}

/// Monthly flow of dominant themes: per month the `top_clusters` most
/// populated clusters and their `top_themes` most frequent themes; each
/// cluster present in consecutive months contributes rank-aligned
/// transitions (1st → 1st, 2nd → 2nd).
pub fn dominant_theme_flow(units: &[ThemedUnit], top_clusters: usize, top_themes: usize) -> Vec<FlowRecord> {
    let mut by_month: BTreeMap<String, BTreeMap<ClusterId, Vec<&ThemedUnit>>> = BTreeMap::new();
    for u in units {
        by_month.entry(month(u.date)).or_default().entry(u.cluster).or_default().push(u);
    }
    let dominant: Vec<(String, BTreeMap<ClusterId, Vec<String>>)> = by_month
        .into_iter()
        .map(|(m, clusters)| {
            let mut ranked: Vec<(ClusterId, Vec<&ThemedUnit>)> = clusters.into_iter().collect();
            ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
            ranked.truncate(top_clusters);
            let tops = ranked
                .into_iter()
                .map(|(c, members)| {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for u in &members {
                        for t in &u.themes {
                            *counts.entry(t).or_default() += 1;
                        }
                    }
                    let mut themes: Vec<(&str, usize)> = counts.into_iter().collect();
                    themes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
                    (c, themes.into_iter().take(top_themes).map(|(t, _)| t.to_string()).collect())
                })
                .collect();
            (m, tops)
        })
        .collect();
    let mut flows: BTreeMap<(String, String, String, String), usize> = BTreeMap::new();
    for w in dominant.windows(2) {
        let (from, a) = &w[0];
        let (to, b) = &w[1];
        for (c, themes_a) in a {
            if let Some(themes_b) = b.get(c) {
                for (s, t) in themes_a.iter().zip(themes_b) {
                    *flows.entry((from.clone(), to.clone(), s.clone(), t.clone())).or_default() += 1;
                }
            }
        }
    }
    flows
        .into_iter()
        .map(|((from_period, to_period, source, target), clusters)| FlowRecord {
            from_period,
            to_period,
            source,
            target,
            clusters,
        })
        .collect()
}

use std::collections::{BTreeSet, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-filled daily counts starting at `start_date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub start_date: NaiveDate,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn zeros(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Range(format!("series end {end} precedes start {start}")));
        }
        let days = (end - start).num_days() as usize + 1;
        Ok(Self {
            start_date: start,
            values: vec![0.0; days],
        })
    }

    /// Adds one to the count for `date`; dates outside the window are ignored.
    pub fn bump(&mut self, date: NaiveDate) {
        let offset = (date - self.start_date).num_days();
        if offset >= 0 {
            if let Some(v) = self.values.get_mut(offset as usize) {
                *v += 1.0;
            }
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// One post counted in a narrative (or narrative theme).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NarrativePost {
    pub post_id: String,
    pub channel: String,
    pub date: NaiveDate,
}

/// Splits narrative posts into the channel's own daily series `x` and the
/// rest of the narrative `y`. Each post is counted once.
pub fn build_series_pair(
    posts: &[NarrativePost],
    channel: &str,
    corpus_channels: &BTreeSet<String>,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<(DailySeries, DailySeries)> {
    if !corpus_channels.contains(channel) {
        return Err(Error::NotFound(format!("channel {channel}")));
    }
    let mut x = DailySeries::zeros(start, end)?;
    let mut y = x.clone();
    let mut seen = HashSet::new();
    for p in posts {
        if !seen.insert(&p.post_id) {
            continue;
        }
        if p.channel == channel {
            x.bump(p.date);
        } else {
            y.bump(p.date);
        }
    }
    Ok((x, y))
}

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{granger_test, lagged_spearman, DailySeries};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub min_lag: usize,
    pub max_lag: usize,
    pub min_rho: f64,
    pub alpha: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            min_lag: 1,
            max_lag: 7,
            min_rho: 0.3,
            alpha: 0.01,
        }
    }
}

/// The channel's series and the remaining narrative (or theme) series.
#[derive(Debug, Clone)]
pub struct SeriesPair {
    pub theme: Option<String>,
    pub channel: String,
    pub x: DailySeries,
    pub y: DailySeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub narrative_id: String,
    pub theme: Option<String>,
    pub channel_id: String,
    pub lag: usize,
    pub rho: f64,
    pub rho_p: f64,
    pub granger_f: f64,
    pub granger_p: f64,
    pub passes_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub theme: Option<String>,
    pub channel_id: String,
    pub lag: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub results: Vec<AssociationResult>,
    pub skipped: Vec<SkippedCell>,
}

pub fn passes_filter(rho: f64, rho_p: f64, granger_p: f64, cfg: &ScanConfig) -> bool {
    rho > cfg.min_rho && rho_p < cfg.alpha && granger_p < cfg.alpha
}

fn cell(narrative: &str, pair: &SeriesPair, lag: usize, cfg: &ScanConfig) -> Result<AssociationResult> {
    let c = lagged_spearman(&pair.x.values, &pair.y.values, lag)?;
    let g = granger_test(&pair.x.values, &pair.y.values, lag)?;
    Ok(AssociationResult {
        narrative_id: narrative.to_string(),
        theme: pair.theme.clone(),
        channel_id: pair.channel.clone(),
        lag,
        rho: c.rho,
        rho_p: c.p_value,
        granger_f: g.f,
        granger_p: g.p_value,
        passes_filter: passes_filter(c.rho, c.p_value, g.p_value, cfg),
    })
}

/// Every (series pair × lag) cell. Cells that cannot be computed are
/// reported as skipped; results are sorted by rho descending.
pub fn scan_associations(narrative: &str, pairs: &[SeriesPair], cfg: &ScanConfig) -> ScanReport {
    let cells: Vec<(&SeriesPair, usize)> = pairs
        .iter()
        .flat_map(|p| (cfg.min_lag..=cfg.max_lag).map(move |lag| (p, lag)))
        .collect();
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(p, lag)| (p, lag, cell(narrative, p, lag, cfg)))
        .collect();
    let mut report = ScanReport::default();
    for (p, lag, r) in outcomes {
        match r {
            Ok(r) => report.results.push(r),
            Err(e) => report.skipped.push(SkippedCell {
                theme: p.theme.clone(),
                channel_id: p.channel.clone(),
                lag,
                reason: e.to_string(),
            }),
        }
    }
    report.results.sort_by(|a, b| {
        b.rho
            .total_cmp(&a.rho)
            .then_with(|| a.channel_id.cmp(&b.channel_id))
            .then_with(|| a.theme.cmp(&b.theme))
            .then(a.lag.cmp(&b.lag))
    });
    report
}

impl ScanReport {
    /// Tab-separated table with a caveat footer.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("narrative\ttheme\tchannel\tlag\trho\trho_p\tgranger_F\tgranger_p\tpasses\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.3}\t{:.3e}\t{:.3}\t{:.3e}\t{}",
                r.narrative_id,
                r.theme.as_deref().unwrap_or("-"),
                r.channel_id,
                r.lag,
                r.rho,
                r.rho_p,
                r.granger_f,
                r.granger_p,
                r.passes_filter
            );
        }
        let _ = writeln!(out, "# {} cells skipped", self.skipped.len());
        out.push_str("# raw daily counts (no stationarity differencing); no multiple-comparison correction\n");
        out.push_str("# associations do not establish causation\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn series(v: Vec<f64>) -> DailySeries {
        DailySeries {
            start_date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
            values: v,
        }
    }

    #[test]
    fn filter_rule() {
        let cfg = ScanConfig::default();
        assert!(passes_filter(0.31, 0.009, 0.009, &cfg));
        assert!(!passes_filter(0.3, 0.001, 0.001, &cfg));
        assert!(!passes_filter(0.5, 0.01, 0.001, &cfg));
        assert!(!passes_filter(0.5, 0.001, 0.01, &cfg));
    }

    #[test]
    fn skipped_cells_do_not_stop_the_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..60).map(|_| f64::from(rng.random_range(0..10u8))).collect();
        let y: Vec<f64> = (0..60)
            .map(|i| if i == 0 { 0.0 } else { x[i - 1] + rng.random::<f64>() })
            .collect();
        let pairs = vec![
            SeriesPair {
                theme: None,
                channel: "flat".into(),
                x: series(vec![1.0; 60]),
                y: series(y.clone()),
            },
            SeriesPair {
                theme: None,
                channel: "lead".into(),
                x: series(x),
                y: series(y),
            },
        ];
        let r = scan_associations("n", &pairs, &ScanConfig::default());
        assert_eq!(r.skipped.len(), 7);
        assert_eq!(r.results[0].channel_id, "lead");
        assert_eq!(r.results[0].lag, 1);
        assert!(r.results.windows(2).all(|w| w[0].rho >= w[1].rho));
        assert!(r.to_tsv().starts_with("narrative\ttheme"));
    }
}

//! Lagged rank correlation, Granger causality, and the channel × lag
//! association scan.

mod granger;
mod scan;
mod series;

pub use granger::{granger_test, GrangerResult};
pub use scan::{passes_filter, scan_associations, AssociationResult, ScanConfig, ScanReport, SeriesPair, SkippedCell};
pub use series::{build_series_pair, DailySeries, NarrativePost};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const MIN_OVERLAP: usize = 5;
/// Below this many pairs the t-approximation is weak and a permutation
/// p-value is preferable.
pub const PERMUTATION_BELOW: usize = 20;
const EXACT_PERMUTATION_MAX: usize = 9;
const MONTE_CARLO_DRAWS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// 1-based mid-ranks: tied values share the mean of the ranks they span.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = mid;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Two-sided p-value of `rho` under the Student-t approximation.
pub fn t_approx_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("series lengths differ ({} vs {})", x.len(), y.len())));
    }
    if x.len() < MIN_OVERLAP {
        return Err(Error::InsufficientData(format!("{} paired observations, need {MIN_OVERLAP}", x.len())));
    }
    if is_constant(x) || is_constant(y) {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok(())
}

/// Spearman rank correlation of paired observations.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pairs(x, y)?;
    let rho = pearson(&ranks(x), &ranks(y)).ok_or_else(|| Error::UndefinedCorrelation("constant ranks".into()))?;
    Ok(Correlation {
        rho,
        p_value: t_approx_p(rho, x.len()),
        n: x.len(),
    })
}

/// Pairs `x[i]` with `y[i + lag]`.
pub fn lag_align<'a>(x: &'a [f64], y: &'a [f64], lag: usize) -> Result<(&'a [f64], &'a [f64])> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("series lengths differ ({} vs {})", x.len(), y.len())));
    }
    if lag >= x.len() {
        return Err(Error::InsufficientData(format!("lag {lag} leaves no overlap")));
    }
    let n = x.len() - lag;
    Ok((&x[..n], &y[lag..]))
}

/// Spearman correlation between `x` and `y` shifted `lag` steps later.
pub fn lagged_spearman(x: &[f64], y: &[f64], lag: usize) -> Result<Correlation> {
    let (a, b) = lag_align(x, y, lag)?;
    spearman(a, b)
}

/// Two-sided permutation p-value for Spearman's rho: exact enumeration for
/// up to 9 pairs, seeded Monte Carlo otherwise.
pub fn permutation_p(x: &[f64], y: &[f64], seed: u64) -> Result<f64> {
    check_pairs(x, y)?;
    let rx = ranks(x);
    let ry = ranks(y);
    let observed = pearson(&rx, &ry).unwrap_or(0.0).abs() - 1e-12;
    let mut perm = ry.clone();
    if x.len() <= EXACT_PERMUTATION_MAX {
        let (mut hits, mut total) = (0u64, 0u64);
        let mut idx: Vec<usize> = (0..perm.len()).collect();
        loop {
            for (slot, &i) in perm.iter_mut().zip(&idx) {
                *slot = ry[i];
            }
            total += 1;
            if pearson(&rx, &perm).unwrap_or(0.0).abs() >= observed {
                hits += 1;
            }
            if !next_permutation(&mut idx) {
                break;
            }
        }
        return Ok(hits as f64 / total as f64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..MONTE_CARLO_DRAWS {
        perm.shuffle(&mut rng);
        if pearson(&rx, &perm).unwrap_or(0.0).abs() >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (MONTE_CARLO_DRAWS + 1) as f64)
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrangerResult {
    pub f: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_den: usize,
    /// Observations after lag trimming.
    pub n: usize,
}

/// Residual sum of squares of the least-squares fit of `y` on `x`.
fn ols_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax().max(1e-300);
    if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * scale) {
        return Err(Error::Degenerate("singular design matrix (collinear lags)".into()));
    }
    let beta = r
        .solve_upper_triangular(&(qr.q().transpose() * y))
        .ok_or_else(|| Error::Degenerate("singular design matrix (collinear lags)".into()))?;
    let resid = y - x * beta;
    Ok(resid.norm_squared())
}

/// Does the history of `x` improve a `p`-lag autoregression of `y`?
/// F-test of the restricted model (intercept + y lags) against the
/// unrestricted one (adding x lags).
pub fn granger_test(x: &[f64], y: &[f64], p: usize) -> Result<GrangerResult> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("series lengths differ ({} vs {})", x.len(), y.len())));
    }
    if p == 0 {
        return Err(Error::Domain("lag order must be at least 1".into()));
    }
    if x.windows(2).all(|w| w[0] == w[1]) || y.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Degenerate("constant series".into()));
    }
    let n = x.len().saturating_sub(p);
    if n <= 2 * p + 1 {
        return Err(Error::InsufficientData(format!("{n} observations after trimming, need more than {}", 2 * p + 1)));
    }
    let df_den = n - 2 * p - 1;
    let target = DVector::from_iterator(n, (p..x.len()).map(|t| y[t]));
    let restricted = DMatrix::from_fn(n, p + 1, |row, col| {
        let t = row + p;
        if col == 0 { 1.0 } else { y[t - col] }
    });
    let unrestricted = DMatrix::from_fn(n, 2 * p + 1, |row, col| {
        let t = row + p;
        match col {
            0 => 1.0,
            c if c <= p => y[t - c],
            c => x[t - (c - p)],
        }
    });
    let rss_r = ols_rss(&restricted, &target)?;
    let rss_u = ols_rss(&unrestricted, &target)?;
    if rss_u <= 1e-12 * rss_r.max(1e-300) {
        return Err(Error::Degenerate("unrestricted model fits exactly".into()));
    }
    let f = (((rss_r - rss_u) / p as f64) / (rss_u / df_den as f64)).max(0.0);
    let dist = FisherSnedecor::new(p as f64, df_den as f64).expect("positive degrees of freedom");
    Ok(GrangerResult {
        f,
        p_value: dist.sf(f).clamp(0.0, 1.0),
        df_num: p,
        df_den,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Least squares via the normal equations and Gauss–Jordan elimination
    /// with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn normal_equations_rss(rows: &[Vec<f64>], y: &[f64]) -> f64 {
        let k = rows[0].len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for (r, &yv) in rows.iter().zip(y) {
            for i in 0..k {
                for j in 0..k {
                    a[i][j] += r[i] * r[j];
                }
                a[i][k] += r[i] * yv;
            }
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..k {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..=k {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        let beta: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
        rows.iter()
            .zip(y)
            .map(|(r, yv)| (yv - r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()).powi(2))
            .sum()
    }

    fn oracle_f(x: &[f64], y: &[f64], p: usize) -> f64 {
        let n = x.len() - p;
        let target: Vec<f64> = y[p..].to_vec();
        let restricted: Vec<Vec<f64>> = (p..x.len())
            .map(|t| std::iter::once(1.0).chain((1..=p).map(|l| y[t - l])).collect())
            .collect();
        let unrestricted: Vec<Vec<f64>> = (p..x.len())
            .map(|t| {
                std::iter::once(1.0)
                    .chain((1..=p).map(|l| y[t - l]))
                    .chain((1..=p).map(|l| x[t - l]))
                    .collect()
            })
            .collect();
        let rr = normal_equations_rss(&restricted, &target);
        let ru = normal_equations_rss(&unrestricted, &target);
        ((rr - ru) / p as f64) / (ru / (n - 2 * p - 1) as f64)
    }

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn f_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let n = 40 + trial;
            let p = 1 + trial % 4;
            let x = noise(&mut rng, n);
            let e = noise(&mut rng, n);
            let y: Vec<f64> = (0..n).map(|t| if t == 0 { e[0] } else { 0.4 * x[t - 1] + e[t] }).collect();
            let got = granger_test(&x, &y, p).unwrap();
            let want = oracle_f(&x, &y, p);
            assert!((got.f - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {want}", got.f);
        }
    }

    #[test]
    fn planted_lag_one_dependence_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&mut rng, 200);
        let e = noise(&mut rng, 200);
        let y: Vec<f64> = (0..200).map(|t| if t == 0 { e[0] } else { 0.9 * x[t - 1] + e[t] }).collect();
        let g = granger_test(&x, &y, 1).unwrap();
        assert!(g.p_value < 0.01);
        assert_eq!((g.df_num, g.df_den, g.n), (1, 196, 199));
    }

    #[test]
    fn independent_noise_rarely_significant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hits = (0..100)
            .filter(|_| {
                let x = noise(&mut rng, 120);
                let y = noise(&mut rng, 120);
                granger_test(&x, &y, 1).unwrap().p_value <= 0.01
            })
            .count();
        assert!(hits <= 5, "{hits}");
    }

    #[test]
    fn degenerate_inputs() {
        let x = vec![3.0; 30];
        let y: Vec<f64> = (0..30).map(|i| f64::from(i % 7)).collect();
        assert!(matches!(granger_test(&x, &y, 1), Err(Error::Degenerate(_))));
        assert!(matches!(granger_test(&y[..4], &y[..4], 1), Err(Error::InsufficientData(_))));
        // x is an exact copy of y: its lags duplicate the y lags
        assert!(matches!(granger_test(&y, &y, 2), Err(Error::Degenerate(_))));
    }
}

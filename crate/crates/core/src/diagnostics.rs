//! Portmanteau adequacy checks with bootstrap critical values.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::meanmodel::{chi2_quantile, multivariate_ljung_box_lags};
use crate::simulate::replication_rng;

/// Upper-tail significance levels reported for every statistic.
pub const LEVELS: [f64; 3] = [0.01, 0.05, 0.10];

pub const DEFAULT_LAGS: [usize; 3] = [5, 10, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Levels,
    Squares,
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesKind::Levels => "levels",
            SeriesKind::Squares => "squares",
        })
    }
}

/// Bootstrap null distribution of the multivariate Ljung-Box statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCriticalValues {
    pub lags: Vec<usize>,
    /// `levels[j]` holds the 1%, 5% and 10% critical values at `lags[j]`.
    pub levels: Vec<[f64; 3]>,
    pub squares: Vec<[f64; 3]>,
    pub n_boot: usize,
    pub seed: u64,
    /// Sorted bootstrap statistics per lag, used for p-values.
    #[serde(skip)]
    draws_levels: Vec<Vec<f64>>,
    #[serde(skip)]
    draws_squares: Vec<Vec<f64>>,
}

impl BootstrapCriticalValues {
    pub fn critical(&self, kind: SeriesKind, lag: usize) -> Option<[f64; 3]> {
        let j = self.lags.iter().position(|&l| l == lag)?;
        Some(match kind {
            SeriesKind::Levels => self.levels[j],
            SeriesKind::Squares => self.squares[j],
        })
    }

    /// Share of bootstrap statistics at or above `stat`.
    pub fn p_value(&self, kind: SeriesKind, lag: usize, stat: f64) -> Option<f64> {
        let j = self.lags.iter().position(|&l| l == lag)?;
        let draws = match kind {
            SeriesKind::Levels => self.draws_levels.get(j)?,
            SeriesKind::Squares => self.draws_squares.get(j)?,
        };
        if draws.is_empty() {
            return None;
        }
        let below = draws.partition_point(|&d| d < stat);
        Some((draws.len() - below) as f64 / draws.len() as f64)
    }
}

/// Empirical quantile (linear interpolation between order statistics) of a
/// sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn squared(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v * v)
}

/// Critical values from resampling whole rows of `residuals` with
/// replacement. Replication `b` draws from stream `b` of `seed`, so results do
/// not depend on scheduling and a larger `n_boot` extends a smaller one.
pub fn bootstrap_critical_values(
    residuals: &DMatrix<f64>,
    lags: &[usize],
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapCriticalValues> {
    if n_boot < 100 {
        return Err(Error::TooFewReplications { got: n_boot, min: 100 });
    }
    let (t_len, k) = residuals.shape();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if lags.is_empty() || t_len <= max_lag {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            got: t_len,
        });
    }
    // per replication: statistics of the levels and of the squares, by lag
    let stats: Vec<[Vec<f64>; 2]> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = replication_rng(seed, b as u64);
            let mut sample = DMatrix::zeros(t_len, k);
            for t in 0..t_len {
                let src = rng.random_range(0..t_len);
                sample.set_row(t, &residuals.row(src));
            }
            let stat = |x: &DMatrix<f64>| -> Vec<f64> {
                match multivariate_ljung_box_lags(x, lags) {
                    Ok(r) => r.iter().map(|q| q.statistic).collect(),
                    // a degenerate resample carries no evidence either way
                    Err(_) => vec![f64::NAN; lags.len()],
                }
            };
            [stat(&sample), stat(&squared(&sample))]
        })
        .collect();
    let collect = |which: usize| -> Vec<Vec<f64>> {
        (0..lags.len())
            .map(|j| {
                let mut v: Vec<f64> = stats.iter().map(|s| s[which][j]).filter(|x| x.is_finite()).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect()
    };
    let draws_levels = collect(0);
    let draws_squares = collect(1);
    let crit = |draws: &[Vec<f64>]| -> Result<Vec<[f64; 3]>> {
        draws
            .iter()
            .map(|d| {
                if d.len() < 100 {
                    return Err(Error::TooFewReplications { got: d.len(), min: 100 });
                }
                Ok(LEVELS.map(|a| quantile(d, 1.0 - a)))
            })
            .collect()
    };
    Ok(BootstrapCriticalValues {
        lags: lags.to_vec(),
        levels: crit(&draws_levels)?,
        squares: crit(&draws_squares)?,
        n_boot,
        seed,
        draws_levels,
        draws_squares,
    })
}

/// Where the reference distribution comes from.
#[derive(Debug, Clone)]
pub enum CriticalValues {
    /// Chi-square with `k^2 m` degrees of freedom.
    Asymptotic,
    Bootstrap(BootstrapCriticalValues),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRow {
    pub kind: SeriesKind,
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
    /// Critical values at 1%, 5% and 10%.
    pub critical: [f64; 3],
    /// Smallest of the three levels at which the statistic is significant.
    pub significant_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub rows: Vec<QRow>,
    pub reference: String,
    /// True when no statistic is significant at the 1% level.
    pub adequate: bool,
}

impl fmt::Display for AdequacyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Multivariate Ljung-Box statistics, critical values: {}",
            self.reference
        )?;
        writeln!(
            f,
            "{:<8} {:>5} {:>22} {:>10} {:>10} {:>10}  verdict",
            "series", "lag", "Q(m) (p-value)", "1%", "5%", "10%"
        )?;
        for r in &self.rows {
            let verdict = match r.significant_at {
                Some(a) => format!("significant at {:.0}%", a * 100.0),
                None => "not significant".into(),
            };
            writeln!(
                f,
                "{:<8} {:>5} {:>22} {:>10.2} {:>10.2} {:>10.2}  {verdict}",
                r.kind.to_string(),
                r.lag,
                format!("Q({}) = {:.2}({:.2})", r.lag, r.statistic, r.p_value),
                r.critical[0],
                r.critical[1],
                r.critical[2],
            )?;
        }
        let verdict = if self.adequate {
            "adequate: no statistic is significant at the 1% level"
        } else {
            "inadequate: at least one statistic is significant at the 1% level"
        };
        write!(f, "{verdict}")
    }
}

/// Portmanteau table for standardized residuals and their squares.
pub fn adequacy_from_residuals(
    residuals: &DMatrix<f64>,
    lags: &[usize],
    crits: &CriticalValues,
) -> Result<AdequacyReport> {
    let k = residuals.ncols();
    let mut rows = Vec::new();
    for (kind, series) in [
        (SeriesKind::Levels, residuals.clone()),
        (SeriesKind::Squares, squared(residuals)),
    ] {
        let stats = multivariate_ljung_box_lags(&series, lags)?;
        for q in stats {
            let (critical, p_value) = match crits {
                CriticalValues::Asymptotic => {
                    let df = k * k * q.lag;
                    (LEVELS.map(|a| chi2_quantile(1.0 - a, df)), q.p_value)
                }
                CriticalValues::Bootstrap(b) => {
                    let c = b.critical(kind, q.lag).ok_or_else(|| {
                        Error::InvalidConfig(format!("no bootstrap critical values at lag {}", q.lag))
                    })?;
                    (c, b.p_value(kind, q.lag, q.statistic).unwrap_or(f64::NAN))
                }
            };
            let significant_at = LEVELS
                .iter()
                .zip(&critical)
                .find(|(_, c)| q.statistic > **c)
                .map(|(a, _)| *a);
            rows.push(QRow {
                kind,
                lag: q.lag,
                statistic: q.statistic,
                p_value,
                critical,
                significant_at,
            });
        }
    }
    let adequate = rows.iter().all(|r| r.significant_at != Some(LEVELS[0]));
    Ok(AdequacyReport {
        rows,
        reference: match crits {
            CriticalValues::Asymptotic => "chi-square".into(),
            CriticalValues::Bootstrap(b) => format!("bootstrap, {} replications", b.n_boot),
        },
        adequate,
    })
}

/// Adequacy report for the standardized residuals of a fit.
pub fn adequacy_report(fit: &FitResult, lags: &[usize], crits: &CriticalValues) -> Result<AdequacyReport> {
    adequacy_from_residuals(&fit.residuals_std, lags, crits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, k, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn quantile_interpolates() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 5.0);
        assert!((quantile(&x, 0.9) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_matches_chi_square_on_iid_data() {
        let x = gaussian(1000, 3, 1);
        let b = bootstrap_critical_values(&x, &[5, 10], 1000, 7).unwrap();
        let c5 = b.critical(SeriesKind::Levels, 5).unwrap()[1];
        assert!((c5 / 61.66 - 1.0).abs() < 0.15, "{c5}");
        for cells in [&b.levels, &b.squares] {
            for c in cells.iter() {
                assert!(c[0] >= c[1] && c[1] >= c[2]);
            }
            assert!(cells[1][1] > cells[0][1]);
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_nested() {
        let x = gaussian(300, 2, 2);
        let a = bootstrap_critical_values(&x, &[5], 200, 3).unwrap();
        let b = bootstrap_critical_values(&x, &[5], 200, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws_levels, b.draws_levels);
        let big = bootstrap_critical_values(&x, &[5], 400, 3).unwrap();
        let first: Vec<f64> = {
            let mut v = a.draws_levels[0].clone();
            v.sort_by(f64::total_cmp);
            v
        };
        assert!(first
            .iter()
            .all(|d| big.draws_levels[0].binary_search_by(|x| x.total_cmp(d)).is_ok()));
    }

    #[test]
    fn too_few_replications() {
        let x = gaussian(100, 2, 1);
        assert!(matches!(
            bootstrap_critical_values(&x, &[5], 50, 1),
            Err(Error::TooFewReplications { got: 50, min: 100 })
        ));
    }

    #[test]
    fn report_layout_and_verdict() {
        let x = gaussian(800, 2, 4);
        let r = adequacy_from_residuals(&x, &[5, 10], &CriticalValues::Asymptotic).unwrap();
        assert_eq!(r.rows.len(), 4);
        let text = r.to_string();
        assert!(text.contains("Q(10) = "), "{text}");
        assert!(text.contains('(') && text.lines().count() == 7);
        // strongly autocorrelated squares are flagged
        let mut y = x.clone();
        for t in 1..y.nrows() {
            let s = (0.2 + 0.7 * y[(t - 1, 0)].powi(2)).sqrt();
            y[(t, 0)] *= s;
            y[(t, 1)] *= s;
        }
        let r = adequacy_from_residuals(&y, &[5], &CriticalValues::Asymptotic).unwrap();
        assert!(!r.adequate);
        let sq = r.rows.iter().find(|q| q.kind == SeriesKind::Squares).unwrap();
        assert_eq!(sq.significant_at, Some(0.01));
    }

    #[test]
    fn bootstrap_p_values() {
        let x = gaussian(500, 2, 5);
        let b = bootstrap_critical_values(&x, &[5], 200, 1).unwrap();
        assert_eq!(b.p_value(SeriesKind::Levels, 5, -1.0), Some(1.0));
        assert_eq!(b.p_value(SeriesKind::Levels, 5, f64::INFINITY), Some(0.0));
        let r = adequacy_from_residuals(&x, &[5], &CriticalValues::Bootstrap(b)).unwrap();
        assert!(r.rows.iter().all(|q| (0.0..=1.0).contains(&q.p_value)));
    }
}

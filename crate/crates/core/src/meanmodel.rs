//! VAR(p) conditional mean and portmanteau statistics.
//!
//! The multivariate statistic is the trace form
//! `Q(m) = T^2 sum_{l=1..m} (T - l)^-1 tr(G_l' G_0^-1 G_l G_0^-1)`
//! with `G_l` the lag-`l` sample autocovariance. Reference degrees of freedom
//! are `k^2 m`; [`multivariate_ljung_box_adjusted`] subtracts a user-supplied
//! count of fitted parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::matcore::{cholesky_in_place, column_means, SymmetricMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortmanteauResult {
    pub lag: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub(crate) fn chi2_sf(x: f64, df: usize) -> f64 {
    if df == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    let d = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    d.sf(x.max(0.0)).clamp(0.0, 1.0)
}

pub(crate) fn chi2_quantile(p: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Univariate Box-Ljung `Q(h) = T (T + 2) sum_{l=1..h} r_l^2 / (T - l)`.
pub fn box_ljung(x: &[f64], h: usize) -> Result<PortmanteauResult> {
    let t = x.len();
    if t <= h {
        return Err(Error::TooShort { needed: h + 1, got: t });
    }
    let mean = x.iter().sum::<f64>() / t as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum();
    if !(c0 > 0.0) {
        return Err(Error::SingularGamma0);
    }
    let n = t as f64;
    let mut q = 0.0;
    for l in 1..=h {
        let cl: f64 = c[l..].iter().zip(&c[..t - l]).map(|(a, b)| a * b).sum();
        let rho = cl / c0;
        q += rho * rho / (n - l as f64);
    }
    q *= n * (n + 2.0);
    Ok(PortmanteauResult {
        lag: h,
        statistic: q,
        df: h,
        p_value: chi2_sf(q, h),
    })
}

/// Multivariate Ljung-Box statistic at a single lag.
pub fn multivariate_ljung_box(series: &DMatrix<f64>, m: usize) -> Result<PortmanteauResult> {
    Ok(multivariate_ljung_box_lags(series, &[m])?[0])
}

/// As [`multivariate_ljung_box`], with `fitted` subtracted from the degrees
/// of freedom.
pub fn multivariate_ljung_box_adjusted(series: &DMatrix<f64>, m: usize, fitted: usize) -> Result<PortmanteauResult> {
    let mut r = multivariate_ljung_box(series, m)?;
    r.df = r.df.saturating_sub(fitted);
    r.p_value = chi2_sf(r.statistic, r.df);
    Ok(r)
}

/// Statistics at several lags from one pass over the autocovariances.
pub fn multivariate_ljung_box_lags(series: &DMatrix<f64>, lags: &[usize]) -> Result<Vec<PortmanteauResult>> {
    let t = series.nrows();
    let k = series.ncols();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if t <= max_lag {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            got: t,
        });
    }
    let means = column_means(series);
    // row-major centered copy: x[t * k + i]
    let mut x = vec![0.0; t * k];
    for s in 0..t {
        for i in 0..k {
            x[s * k + i] = series[(s, i)] - means[i];
        }
    }
    let n = t as f64;
    let autocov = |l: usize| {
        let mut g = DMatrix::zeros(k, k);
        for s in l..t {
            let a = &x[s * k..(s + 1) * k];
            let b = &x[(s - l) * k..(s - l + 1) * k];
            for i in 0..k {
                let ai = a[i];
                for j in 0..k {
                    g[(i, j)] += ai * b[j];
                }
            }
        }
        g / n
    };
    let g0 = autocov(0);
    let mut chol = g0.clone();
    let scale = (0..k).map(|i| g0[(i, i)]).fold(0.0, f64::max);
    if !cholesky_in_place(&mut chol) || (0..k).any(|i| chol[(i, i)].powi(2) <= 1e-13 * scale) {
        return Err(Error::SingularGamma0);
    }
    let l_factor = chol.lower_triangle();
    let g0_inv = {
        let linv = l_factor
            .solve_lower_triangular(&DMatrix::identity(k, k))
            .ok_or(Error::SingularGamma0)?;
        linv.transpose() * linv
    };
    let mut out = Vec::with_capacity(lags.len());
    let mut q = 0.0;
    let mut done = 0;
    let mut sorted: Vec<usize> = lags.to_vec();
    sorted.sort_unstable();
    let mut by_lag = std::collections::BTreeMap::new();
    for &m in &sorted {
        while done < m {
            done += 1;
            let gl = autocov(done);
            let b = gl.transpose() * &g0_inv;
            let c = &gl * &g0_inv;
            // tr(G_l' G0^-1 G_l G0^-1) = sum_ij b_ij c_ji
            let tr = b.component_mul(&c.transpose()).sum();
            q += tr / (n - done as f64);
        }
        let stat = n * n * q;
        let df = k * k * m;
        by_lag.insert(
            m,
            PortmanteauResult {
                lag: m,
                statistic: stat,
                df,
                p_value: chi2_sf(stat, df),
            },
        );
    }
    for &m in lags {
        out.push(by_lag[&m]);
    }
    Ok(out)
}

/// Intercept and lag coefficients of a VAR(p) mean equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarMean {
    pub phi0: Vec<f64>,
    /// `phi[i]` is the `k x k` coefficient matrix of lag `i + 1`, row-major.
    pub phi: Vec<Vec<Vec<f64>>>,
}

impl VarMean {
    pub fn k(&self) -> usize {
        self.phi0.len()
    }

    pub fn p(&self) -> usize {
        self.phi.len()
    }

    /// Conditional mean given the most recent rows, `history[0]` being lag 1.
    pub fn predict(&self, history: &[DVector<f64>]) -> DVector<f64> {
        let k = self.k();
        let mut mu = DVector::from_column_slice(&self.phi0);
        for (lag, coef) in self.phi.iter().enumerate() {
            let prev = &history[lag];
            for i in 0..k {
                mu[i] += (0..k).map(|j| coef[i][j] * prev[j]).sum::<f64>();
            }
        }
        mu
    }

    /// `(I - Phi_1 - ... - Phi_p)^-1 phi0`, or `None` for a unit root.
    pub fn unconditional_mean(&self) -> Option<Vec<f64>> {
        let k = self.k();
        let mut a = DMatrix::<f64>::identity(k, k);
        for c in &self.phi {
            for i in 0..k {
                for j in 0..k {
                    a[(i, j)] -= c[i][j];
                }
            }
        }
        let mu = a.lu().solve(&DVector::from_column_slice(&self.phi0))?;
        Some(mu.iter().copied().collect())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        for c in &self.phi {
            if c.len() != k || c.iter().any(|r| r.len() != k) {
                return Err(Error::DimensionMismatch(
                    "VAR coefficient matrices must be k x k".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub p: usize,
    pub phi0: DVector<f64>,
    pub phi: Vec<DMatrix<f64>>,
    /// `(T - p) x k` residuals.
    pub residuals: DMatrix<f64>,
    /// Residual covariance with divisor `T - p`.
    pub sigma: SymmetricMatrix,
}

impl VarModel {
    pub fn mean(&self) -> VarMean {
        VarMean {
            phi0: self.phi0.iter().copied().collect(),
            phi: self
                .phi
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

fn var_design(y: &DMatrix<f64>, p: usize, start: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = y.ncols();
    let n = y.nrows() - start;
    let x = DMatrix::from_fn(n, 1 + k * p, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / k + 1;
            let j = (c - 1) % k;
            y[(start + r - lag, j)]
        }
    });
    (x, y.rows(start, n).into_owned())
}

fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= 1e-10 * max {
        return Err(Error::SingularDesign);
    }
    svd.solve(y, 0.0).map_err(|_| Error::SingularDesign)
}

/// Equation-by-equation least squares with intercept. `p = 0` is plain
/// demeaning.
pub fn fit_var(values: &DMatrix<f64>, p: usize) -> Result<VarModel> {
    let (t, k) = values.shape();
    if t <= k * p + 1 {
        return Err(Error::TooShort {
            needed: k * p + 2,
            got: t,
        });
    }
    fit_var_from(values, p, p)
}

fn fit_var_from(values: &DMatrix<f64>, p: usize, start: usize) -> Result<VarModel> {
    let k = values.ncols();
    let (x, y) = var_design(values, p, start);
    let b = ols(&x, &y)?;
    let residuals = &y - &x * &b;
    let n = residuals.nrows() as f64;
    let sigma = SymmetricMatrix::symmetrize(residuals.transpose() * &residuals / n);
    let phi0 = DVector::from_iterator(k, b.row(0).iter().copied());
    let phi = (0..p)
        .map(|lag| DMatrix::from_fn(k, k, |i, j| b[(1 + lag * k + j, i)]))
        .collect();
    Ok(VarModel {
        p,
        phi0,
        phi,
        residuals,
        sigma,
    })
}

/// AIC for `p = 0..=p_max` on the common sample that drops the first `p_max`
/// rows. Returns the minimizing order and all criteria.
pub fn select_var_order_aic(values: &DMatrix<f64>, p_max: usize) -> Result<(usize, Vec<f64>)> {
    let (t, k) = values.shape();
    if t <= k * p_max + 1 + p_max {
        return Err(Error::TooShort {
            needed: k * p_max + 2 + p_max,
            got: t,
        });
    }
    let n = (t - p_max) as f64;
    let mut aics = Vec::with_capacity(p_max + 1);
    for p in 0..=p_max {
        let model = fit_var_from(values, p, p_max)?;
        let det = model.sigma.as_matrix().determinant();
        if !(det > 0.0) {
            return Err(Error::SingularDesign);
        }
        aics.push(det.ln() + 2.0 * (k * (k * p + 1)) as f64 / n);
    }
    let best = aics
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((best, aics))
}

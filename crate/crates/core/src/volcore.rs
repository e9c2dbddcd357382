//! The volatility filter of the proposed model.
//!
//! Variances follow diagonal GARCH(1,1) recursions with an optional leverage
//! term, correlations follow
//! `R_t = (1 - th1 - th2) Rbar + th1 Psi_{t-1} + th2 R_{t-1}`, where
//! `Psi_{t-1}` is the uncentered correlation of the last `m` standardized
//! innovations, and innovations are multivariate Student-t scaled to unit
//! variance.
//!
//! Filter start: the caller supplies a [`FilterState`]. The default one
//! ([`FilterState::initial`]) sets the first conditional variances to the
//! per-asset sample variances, the previous correlation to `Rbar`, and an empty
//! innovation buffer. Until the buffer holds `m` innovations the correlation
//! stays at its previous value and the observation is excluded from the
//! likelihood, so with the default start the likelihood runs over
//! `t = m + 1 ..= T`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::matcore::{
    cholesky_in_place, forward_substitute, sample_covariance, sym_inv_sqrt, CorrelationMatrix, SymmetricMatrix,
};

/// Conditional variances above this are treated as a blown-up filter.
pub const VARIANCE_CEILING: f64 = 1e12;

/// Correlation dynamics coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Scalar {
        theta1: f64,
        theta2: f64,
    },
    /// Per-asset diagonal entries of the two weight matrices.
    Diagonal {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
    },
}

impl Theta {
    pub fn constant() -> Self {
        Theta::Scalar {
            theta1: 0.0,
            theta2: 0.0,
        }
    }
}

/// Parameter values of the proposed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Leverage coefficients; `None` for the symmetric model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<Vec<f64>>,
    pub theta: Theta,
    pub dof: f64,
    /// Length of the innovation window behind `Psi`.
    pub m: usize,
    pub rbar: CorrelationMatrix,
}

impl ModelParams {
    /// Symmetric model with scalar correlation dynamics and the default
    /// window `m = k + 2`.
    pub fn new(
        lambda0: Vec<f64>,
        lambda1: Vec<f64>,
        lambda2: Vec<f64>,
        theta1: f64,
        theta2: f64,
        dof: f64,
        rbar: CorrelationMatrix,
    ) -> Result<Self> {
        let k = lambda0.len();
        let p = ModelParams {
            lambda0,
            lambda1,
            lambda2,
            lambda3: None,
            theta: Theta::Scalar { theta1, theta2 },
            dof,
            m: k + 2,
            rbar,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_leverage(mut self, lambda3: Vec<f64>) -> Result<Self> {
        self.lambda3 = Some(lambda3);
        self.validate()?;
        Ok(self)
    }

    pub fn with_window(mut self, m: usize) -> Result<Self> {
        self.m = m;
        self.validate()?;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.lambda0.len()
    }

    pub fn leverage(&self, i: usize) -> f64 {
        self.lambda3.as_ref().map_or(0.0, |l| l[i])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if k == 0 {
            return bad("model needs at least one asset".into());
        }
        let lens = [self.lambda1.len(), self.lambda2.len(), self.rbar.dim()];
        if lens.iter().any(|&l| l != k) {
            return bad(format!("dimension mismatch: k = {k}, got lengths {lens:?}"));
        }
        if let Some(l3) = &self.lambda3 {
            if l3.len() != k {
                return bad("lambda3 must have one entry per asset".into());
            }
        }
        for i in 0..k {
            let (l0, l1, l2, l3) = (self.lambda0[i], self.lambda1[i], self.lambda2[i], self.leverage(i));
            if [l0, l1, l2, l3].iter().any(|v| !v.is_finite() || *v < 0.0) {
                return bad(format!(
                    "asset {i}: variance coefficients must be finite and non-negative"
                ));
            }
            if !(l0 > 0.0) {
                return bad(format!("asset {i}: lambda0 must be positive"));
            }
            if self.lambda3.is_some() {
                let s = l1 + l2 + l3;
                if !(s > 0.0 && s <= 1.0) {
                    return bad(format!("asset {i}: lambda1 + lambda2 + lambda3 = {s} outside (0, 1]"));
                }
            } else if l1 + l2 >= 1.0 {
                return bad(format!("asset {i}: lambda1 + lambda2 = {} must be < 1", l1 + l2));
            }
        }
        match &self.theta {
            Theta::Scalar { theta1, theta2 } => {
                if !(*theta1 >= 0.0 && *theta2 >= 0.0 && theta1 + theta2 < 1.0) {
                    return bad(format!(
                        "theta = ({theta1}, {theta2}) violates th1, th2 >= 0, th1 + th2 < 1"
                    ));
                }
            }
            Theta::Diagonal { theta1, theta2 } => {
                if theta1.len() != k || theta2.len() != k {
                    return bad("diagonal theta needs one entry per asset".into());
                }
                for i in 0..k {
                    let (a, b) = (theta1[i], theta2[i]);
                    if !(a >= 0.0 && b >= 0.0 && a * a + b * b < 1.0) {
                        return bad(format!(
                            "asset {i}: diagonal theta ({a}, {b}) violates th1^2 + th2^2 < 1"
                        ));
                    }
                }
            }
        }
        if !(self.dof > 2.0) || !self.dof.is_finite() {
            return bad(format!("degrees of freedom {} must exceed 2", self.dof));
        }
        if self.m == 0 {
            return bad("window m must be at least 1".into());
        }
        Ok(())
    }

    /// Long-run variance per asset, `lambda0 / (1 - lambda1 - lambda2 - lambda3 / 2)`,
    /// or `None` when the recursion has no finite stationary level.
    pub fn unconditional_variance(&self, i: usize) -> Option<f64> {
        let denom = 1.0 - self.lambda1[i] - self.lambda2[i] - 0.5 * self.leverage(i);
        (denom > 1e-9).then(|| self.lambda0[i] / denom)
    }
}

/// Predictive state of the filter: the conditional variances for the next
/// observation, the previous correlation matrix, and up to `m` recent
/// standardized innovations (oldest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub d2: Vec<f64>,
    pub r: CorrelationMatrix,
    pub buffer: VecDeque<Vec<f64>>,
}

impl FilterState {
    /// Sample variances of `e`, `Rbar`, empty buffer.
    pub fn initial(params: &ModelParams, e: &DMatrix<f64>) -> Result<Self> {
        let cov = sample_covariance(e)?;
        let d2: Vec<f64> = (0..e.ncols()).map(|i| cov.get(i, i)).collect();
        if let Some(i) = d2.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::DegenerateColumn(i));
        }
        Ok(FilterState {
            d2,
            r: params.rbar.clone(),
            buffer: VecDeque::new(),
        })
    }

    /// Stationary start: long-run variances (or `lambda0 / 0.01` when there is
    /// none), `Rbar`, empty buffer.
    pub fn unconditional(params: &ModelParams) -> Self {
        let d2 = (0..params.k())
            .map(|i| params.unconditional_variance(i).unwrap_or(params.lambda0[i] / 0.01))
            .collect();
        FilterState {
            d2,
            r: params.rbar.clone(),
            buffer: VecDeque::new(),
        }
    }
}

/// Conditional standard deviations and correlations along a filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPath {
    /// `T x k` conditional standard deviations.
    pub d: DMatrix<f64>,
    pub r: Vec<CorrelationMatrix>,
}

impl VolatilityPath {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn sd(&self, t: usize) -> Vec<f64> {
        self.d.row(t).iter().copied().collect()
    }

    pub fn sigma(&self, t: usize) -> SymmetricMatrix {
        assemble_sigma(&self.sd(t), &self.r[t])
    }
}

/// Uncentered correlation of the columns of an `m x k` innovation window.
pub fn psi_matrix(u_history: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let k = u_history.ncols();
    let mut out = DMatrix::zeros(k, k);
    let buf: Vec<Vec<f64>> = u_history.row_iter().map(|r| r.iter().copied().collect()).collect();
    psi_into(buf.iter().map(|v| v.as_slice()), k, &mut out)?;
    Ok(CorrelationMatrix::from_unchecked(out))
}

fn psi_into<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, k: usize, out: &mut DMatrix<f64>) -> Result<()> {
    out.fill(0.0);
    for u in rows {
        for i in 0..k {
            let ui = u[i];
            for j in 0..=i {
                out[(i, j)] += ui * u[j];
            }
        }
    }
    for i in 0..k {
        if !(out[(i, i)] > 0.0) {
            return Err(Error::ZeroNormColumn(i));
        }
    }
    for i in 0..k {
        for j in 0..i {
            let v = (out[(i, j)] / (out[(i, i)] * out[(j, j)]).sqrt()).clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    for i in 0..k {
        out[(i, i)] = 1.0;
    }
    Ok(())
}

/// One step of the variance recursion: returns the next conditional variances.
pub fn variance_step(d2_prev: &[f64], e_prev: &[f64], params: &ModelParams) -> Vec<f64> {
    (0..params.k())
        .map(|i| variance_step_one(i, d2_prev[i], e_prev[i], params))
        .collect()
}

#[inline]
fn variance_step_one(i: usize, d2_prev: f64, e_prev: f64, p: &ModelParams) -> f64 {
    let e2 = e_prev * e_prev;
    let mut s = p.lambda0[i] + p.lambda1[i] * d2_prev + p.lambda2[i] * e2;
    if e_prev < 0.0 {
        s += p.leverage(i) * e2;
    }
    s
}

/// `(1 - th1 - th2) Rbar + th1 Psi + th2 R_prev` for scalar weights, or the
/// diagonal-weight form for [`Theta::Diagonal`].
pub fn correlation_step(
    r_prev: &CorrelationMatrix,
    psi: &CorrelationMatrix,
    params: &ModelParams,
) -> CorrelationMatrix {
    let mut out = DMatrix::zeros(params.k(), params.k());
    combine_into(
        &mut out,
        params.rbar.as_matrix(),
        psi.as_matrix(),
        r_prev.as_matrix(),
        &params.theta,
    );
    CorrelationMatrix::from_unchecked(out)
}

/// Diagonal-weight correlation recursion
/// `C Rbar C + T1 Psi T1 + T2 R_prev T2` with `C = (I - T1^2 - T2^2)^(1/2)`.
pub fn correlation_step_diag_theta(
    r_prev: &CorrelationMatrix,
    psi: &CorrelationMatrix,
    theta1: &[f64],
    theta2: &[f64],
    rbar: &CorrelationMatrix,
) -> CorrelationMatrix {
    let k = rbar.dim();
    let mut out = DMatrix::zeros(k, k);
    let theta = Theta::Diagonal {
        theta1: theta1.to_vec(),
        theta2: theta2.to_vec(),
    };
    combine_into(&mut out, rbar.as_matrix(), psi.as_matrix(), r_prev.as_matrix(), &theta);
    CorrelationMatrix::from_unchecked(out)
}

fn combine_into(out: &mut DMatrix<f64>, rbar: &DMatrix<f64>, psi: &DMatrix<f64>, prev: &DMatrix<f64>, theta: &Theta) {
    let k = rbar.nrows();
    match theta {
        Theta::Scalar { theta1, theta2 } => {
            let w0 = 1.0 - theta1 - theta2;
            for j in 0..k {
                for i in 0..k {
                    out[(i, j)] = w0 * rbar[(i, j)] + theta1 * psi[(i, j)] + theta2 * prev[(i, j)];
                }
            }
        }
        Theta::Diagonal { theta1, theta2 } => {
            for j in 0..k {
                let cj = (1.0 - theta1[j] * theta1[j] - theta2[j] * theta2[j]).sqrt();
                for i in 0..k {
                    let ci = (1.0 - theta1[i] * theta1[i] - theta2[i] * theta2[i]).sqrt();
                    out[(i, j)] = ci * cj * rbar[(i, j)]
                        + theta1[i] * theta1[j] * psi[(i, j)]
                        + theta2[i] * theta2[j] * prev[(i, j)];
                }
            }
        }
    }
    // the weights sum to one on the diagonal; pin it against rounding
    for i in 0..k {
        out[(i, i)] = 1.0;
    }
}

/// `Sigma = D R D` with `D = diag(d)`.
pub fn assemble_sigma(d: &[f64], r: &CorrelationMatrix) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(d.len(), |i, j| d[i] * r.get(i, j) * d[j])
}

/// Log normalizing constant of the unit-variance Student-t density.
pub fn mvt_log_constant(v: f64, k: usize) -> f64 {
    let kf = k as f64;
    ln_gamma(0.5 * (v + kf)) - ln_gamma(0.5 * v) - 0.5 * kf * (std::f64::consts::PI * (v - 2.0)).ln()
}

/// Log density of the `k`-variate Student-t with `v` degrees of freedom,
/// scaled so every component has unit variance.
pub fn mvt_log_density(eps: &[f64], v: f64) -> f64 {
    let k = eps.len();
    let q: f64 = eps.iter().map(|x| x * x).sum();
    mvt_log_constant(v, k) - 0.5 * (v + k as f64) * (q / (v - 2.0)).ln_1p()
}

/// Output of a full filter pass.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub path: VolatilityPath,
    /// Log-likelihood over `t0..T` (zero-based `t0`).
    pub loglik: f64,
    pub t0: usize,
    pub final_state: FilterState,
}

/// Incremental filter. [`Filter::predict`] produces the conditional moments of
/// the next observation; [`Filter::update`] absorbs the realized innovation.
pub struct Filter<'a> {
    params: &'a ModelParams,
    k: usize,
    d2: Vec<f64>,
    d: Vec<f64>,
    r_prev: DMatrix<f64>,
    r: DMatrix<f64>,
    psi: DMatrix<f64>,
    chol: DMatrix<f64>,
    ring: Vec<f64>,
    ring_len: usize,
    ring_head: usize,
    scratch: Vec<f64>,
    log_const: f64,
    t: usize,
    predicted: bool,
    dynamic: bool,
}

impl<'a> Filter<'a> {
    pub fn new(params: &'a ModelParams, state: &FilterState) -> Result<Self> {
        let k = params.k();
        let m = params.m;
        if state.d2.len() != k || state.r.dim() != k || state.buffer.iter().any(|u| u.len() != k) {
            return Err(Error::DimensionMismatch(
                "filter state does not match the model dimension".into(),
            ));
        }
        if state.buffer.len() > m {
            return Err(Error::DimensionMismatch(format!(
                "innovation buffer holds {} rows but m = {m}",
                state.buffer.len()
            )));
        }
        let mut ring = vec![0.0; m * k];
        for (slot, u) in state.buffer.iter().enumerate() {
            ring[slot * k..(slot + 1) * k].copy_from_slice(u);
        }
        let dynamic = match &params.theta {
            Theta::Scalar { theta1, theta2 } => *theta1 != 0.0 || *theta2 != 0.0,
            Theta::Diagonal { theta1, theta2 } => theta1.iter().chain(theta2).any(|v| *v != 0.0),
        };
        Ok(Filter {
            params,
            k,
            d2: state.d2.clone(),
            d: vec![0.0; k],
            r_prev: state.r.as_matrix().clone(),
            r: state.r.as_matrix().clone(),
            psi: DMatrix::zeros(k, k),
            chol: DMatrix::zeros(k, k),
            ring,
            ring_len: state.buffer.len(),
            ring_head: state.buffer.len() % m,
            scratch: vec![0.0; k],
            log_const: mvt_log_constant(params.dof, k),
            t: 0,
            predicted: false,
            dynamic,
        })
    }

    /// Whether the innovation window is full, i.e. the next observation
    /// enters the likelihood.
    pub fn window_full(&self) -> bool {
        self.ring_len == self.params.m
    }

    /// Computes `D_t` and `R_t` for the next observation.
    pub fn predict(&mut self) -> Result<()> {
        let k = self.k;
        for i in 0..k {
            let v = self.d2[i];
            if !(v > 0.0) || v > VARIANCE_CEILING || !v.is_finite() {
                return Err(Error::FilterBlowup {
                    t: self.t,
                    reason: format!("variance of asset {i} is {v:e}"),
                });
            }
            self.d[i] = v.sqrt();
        }
        if self.window_full() && self.dynamic {
            let m = self.params.m;
            let ring = &self.ring;
            psi_into((0..m).map(|s| &ring[s * k..(s + 1) * k]), k, &mut self.psi).map_err(|e| Error::FilterBlowup {
                t: self.t,
                reason: e.to_string(),
            })?;
            combine_into(
                &mut self.r,
                self.params.rbar.as_matrix(),
                &self.psi,
                &self.r_prev,
                &self.params.theta,
            );
        } else {
            self.r.copy_from(&self.r_prev);
        }
        self.chol.copy_from(&self.r);
        if !cholesky_in_place(&mut self.chol) || (0..k).any(|i| self.chol[(i, i)] * self.chol[(i, i)] < 1e-10) {
            return Err(Error::FilterBlowup {
                t: self.t,
                reason: "correlation matrix lost positive definiteness".into(),
            });
        }
        self.predicted = true;
        Ok(())
    }

    /// Conditional variances awaiting the next [`Filter::predict`].
    pub fn variances(&self) -> &[f64] {
        &self.d2
    }

    /// Conditional standard deviations of the predicted observation.
    pub fn sd(&self) -> &[f64] {
        &self.d
    }

    /// Predicted correlation matrix.
    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Log density of `e` under the predicted conditional distribution.
    pub fn log_density(&mut self, e: &[f64]) -> f64 {
        debug_assert!(self.predicted);
        let k = self.k;
        let mut log_det = 0.0;
        for i in 0..k {
            self.scratch[i] = e[i] / self.d[i];
            log_det += 2.0 * (self.d[i].ln() + self.chol[(i, i)].ln());
        }
        forward_substitute(&self.chol, &mut self.scratch);
        let q: f64 = self.scratch.iter().map(|z| z * z).sum();
        let v = self.params.dof;
        self.log_const - 0.5 * (v + k as f64) * (q / (v - 2.0)).ln_1p() - 0.5 * log_det
    }

    /// Absorbs the realized innovation `e` of the predicted observation.
    pub fn update(&mut self, e: &[f64]) {
        debug_assert!(self.predicted);
        let k = self.k;
        let m = self.params.m;
        let slot = self.ring_head;
        for i in 0..k {
            self.ring[slot * k + i] = e[i] / self.d[i];
            self.d2[i] = variance_step_one(i, self.d2[i], e[i], self.params);
        }
        self.ring_head = (slot + 1) % m;
        self.ring_len = (self.ring_len + 1).min(m);
        std::mem::swap(&mut self.r_prev, &mut self.r);
        self.t += 1;
        self.predicted = false;
    }

    /// Snapshot of the predictive state.
    pub fn state(&self) -> FilterState {
        let k = self.k;
        let m = self.params.m;
        let start = (self.ring_head + m - self.ring_len) % m;
        let buffer = (0..self.ring_len)
            .map(|s| {
                let slot = (start + s) % m;
                self.ring[slot * k..(slot + 1) * k].to_vec()
            })
            .collect();
        FilterState {
            d2: self.d2.clone(),
            r: CorrelationMatrix::from_unchecked(self.r_prev.clone()),
            buffer,
        }
    }
}

fn row(e: &DMatrix<f64>, t: usize, buf: &mut [f64]) {
    for (i, b) in buf.iter_mut().enumerate() {
        *b = e[(t, i)];
    }
}

/// Runs the filter over `e` (`T x k`), recording the volatility path.
pub fn run_filter(params: &ModelParams, e: &DMatrix<f64>, init: &FilterState) -> Result<FilterOutput> {
    params.validate()?;
    check_dims(params, e)?;
    let (t_len, k) = e.shape();
    let mut f = Filter::new(params, init)?;
    let mut d = DMatrix::zeros(t_len, k);
    let mut rs = Vec::with_capacity(t_len);
    let mut et = vec![0.0; k];
    let mut loglik = 0.0;
    let mut t0 = None;
    for t in 0..t_len {
        f.predict()?;
        row(e, t, &mut et);
        if f.window_full() {
            t0.get_or_insert(t);
            loglik += f.log_density(&et);
        }
        for i in 0..k {
            d[(t, i)] = f.d[i];
        }
        rs.push(CorrelationMatrix::from_unchecked(f.r.clone()));
        f.update(&et);
    }
    let t0 = t0.ok_or(Error::TooShort {
        needed: params.m + 1,
        got: t_len,
    })?;
    if !loglik.is_finite() {
        return Err(Error::FilterBlowup {
            t: t_len,
            reason: "log-likelihood is not finite".into(),
        });
    }
    Ok(FilterOutput {
        path: VolatilityPath { d, r: rs },
        loglik,
        t0,
        final_state: f.state(),
    })
}

fn check_dims(params: &ModelParams, e: &DMatrix<f64>) -> Result<()> {
    if e.ncols() != params.k() {
        return Err(Error::DimensionMismatch(format!(
            "residuals have {} columns, model has k = {}",
            e.ncols(),
            params.k()
        )));
    }
    Ok(())
}

/// Negative log-likelihood of `e` under `params`, started from `init`.
pub fn negative_log_likelihood(params: &ModelParams, e: &DMatrix<f64>, init: &FilterState) -> Result<f64> {
    params.validate()?;
    check_dims(params, e)?;
    let (t_len, k) = e.shape();
    let mut f = Filter::new(params, init)?;
    let mut et = vec![0.0; k];
    let mut loglik = 0.0;
    let mut terms = 0usize;
    for t in 0..t_len {
        f.predict()?;
        row(e, t, &mut et);
        if f.window_full() {
            loglik += f.log_density(&et);
            terms += 1;
        }
        f.update(&et);
    }
    if terms == 0 {
        return Err(Error::TooShort {
            needed: params.m + 1,
            got: t_len,
        });
    }
    if !loglik.is_finite() {
        return Err(Error::FilterBlowup {
            t: t_len,
            reason: "log-likelihood is not finite".into(),
        });
    }
    Ok(-loglik)
}

/// `Sigma_t^(-1/2) e_t` for every row.
pub fn standardized_residuals(path: &VolatilityPath, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if path.len() != e.nrows() || path.d.ncols() != e.ncols() {
        return Err(Error::DimensionMismatch(
            "volatility path and residuals are not aligned".into(),
        ));
    }
    let mut out = DMatrix::zeros(e.nrows(), e.ncols());
    for t in 0..e.nrows() {
        let s = sym_inv_sqrt(&path.sigma(t))?;
        let z = s.as_matrix() * e.row(t).transpose();
        out.set_row(t, &z.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::is_positive_definite;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(t: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(t, k, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn params2(theta1: f64, theta2: f64) -> ModelParams {
        ModelParams::new(
            vec![0.05, 0.1],
            vec![0.9, 0.85],
            vec![0.05, 0.1],
            theta1,
            theta2,
            8.0,
            CorrelationMatrix::equicorrelation(2, 0.3).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn psi_examples() {
        let col = gaussian(6, 1, 1);
        let dup = DMatrix::from_fn(6, 2, |i, _| col[(i, 0)]);
        assert!((psi_matrix(&dup).unwrap().get(0, 1) - 1.0).abs() < 1e-15);
        let opp = DMatrix::from_fn(6, 2, |_, j| if j == 0 { 1.0 } else { -1.0 });
        assert!((psi_matrix(&opp).unwrap().get(0, 1) + 1.0).abs() < 1e-15);

        let u = gaussian(6, 4, 2);
        let psi = psi_matrix(&u).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let num: f64 = (0..6).map(|v| u[(v, i)] * u[(v, j)]).sum();
                let si: f64 = (0..6).map(|v| u[(v, i)].powi(2)).sum();
                let sj: f64 = (0..6).map(|v| u[(v, j)].powi(2)).sum();
                assert!((psi.get(i, j) - num / (si * sj).sqrt()).abs() < 1e-14);
            }
        }
        assert!(is_positive_definite(psi.as_symmetric(), 1e-10));

        let mut zero = gaussian(6, 2, 3);
        zero.column_mut(1).fill(0.0);
        assert!(matches!(psi_matrix(&zero), Err(Error::ZeroNormColumn(1))));
    }

    #[test]
    fn variance_step_examples() {
        let mut p = params2(0.0, 0.0);
        p.lambda0 = vec![0.0, 0.0];
        p.lambda1 = vec![1.0, 1.0];
        p.lambda2 = vec![0.0, 0.0];
        // bypass validation: pure persistence lies on the boundary
        assert_eq!(variance_step(&[2.0, 3.0], &[5.0, -1.0], &p), vec![2.0, 3.0]);

        let mut p = params2(0.0, 0.0);
        p.lambda0 = vec![0.01, 0.01];
        p.lambda1 = vec![0.9, 0.9];
        p.lambda2 = vec![0.05, 0.05];
        let out = variance_step(&[1.0, 1.0], &[2.0, 2.0], &p);
        assert!((out[0] - 1.11).abs() < 1e-15);

        let p = params2(0.0, 0.0).with_leverage(vec![0.0159, 0.0]).unwrap();
        let neg = variance_step(&[1.0, 1.0], &[-1.0, -1.0], &p);
        let pos = variance_step(&[1.0, 1.0], &[1.0, 1.0], &p);
        assert!((neg[0] - pos[0] - 0.0159).abs() < 1e-15);
        assert_eq!(neg[1], pos[1]);
    }

    #[test]
    fn correlation_step_examples() {
        let p = params2(0.0, 0.0);
        let psi = CorrelationMatrix::equicorrelation(2, 0.8).unwrap();
        let prev = CorrelationMatrix::equicorrelation(2, 0.5).unwrap();
        assert_eq!(correlation_step(&prev, &psi, &p), p.rbar);

        let p = params2(0.0137, 0.9809);
        let r = correlation_step(&prev, &psi, &p);
        // 0.0054 * 0.3 + 0.0137 * 0.8 + 0.9809 * 0.5
        assert!((r.get(0, 1) - 0.50303).abs() < 1e-12, "{}", r.get(0, 1));
        assert_eq!(r.get(1, 1), 1.0);

        // geometric convergence to Rbar when theta1 = 0
        let p = params2(0.0, 0.7);
        let mut r = CorrelationMatrix::equicorrelation(2, -0.4).unwrap();
        let gap0 = (r.get(0, 1) - 0.3).abs();
        for n in 1..=10 {
            r = correlation_step(&r, &psi, &p);
            let gap = (r.get(0, 1) - 0.3).abs();
            assert!((gap - 0.7f64.powi(n) * gap0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_theta_examples() {
        let rbar = CorrelationMatrix::equicorrelation(3, 0.2).unwrap();
        let psi = CorrelationMatrix::equicorrelation(3, 0.6).unwrap();
        let prev = CorrelationMatrix::equicorrelation(3, -0.1).unwrap();
        let (a, b) = (0.3, 0.9);
        let diag = correlation_step_diag_theta(&prev, &psi, &[a; 3], &[b; 3], &rbar);
        let mut p = ModelParams::new(
            vec![0.1; 3],
            vec![0.5; 3],
            vec![0.1; 3],
            a * a,
            b * b,
            8.0,
            rbar.clone(),
        )
        .unwrap();
        let scalar = correlation_step(&prev, &psi, &p);
        assert!((diag.as_matrix() - scalar.as_matrix()).amax() < 1e-15);

        assert_eq!(
            correlation_step_diag_theta(&prev, &psi, &[0.0; 3], &[0.0; 3], &rbar),
            rbar
        );

        let zero = CorrelationMatrix::identity(2);
        let prev2 = CorrelationMatrix::equicorrelation(2, 0.4).unwrap();
        let r = correlation_step_diag_theta(&prev2, &CorrelationMatrix::identity(2), &[0.0, 0.0], &[0.9, 0.5], &zero);
        assert!((r.get(0, 1) - 0.45 * 0.4).abs() < 1e-15);
        assert_eq!(r.get(0, 0), 1.0);

        p.theta = Theta::Diagonal {
            theta1: vec![0.1, 0.2, 0.3],
            theta2: vec![0.9, 0.8, 0.7],
        };
        p.validate().unwrap();
        let r = correlation_step(&prev, &psi, &p);
        assert!(is_positive_definite(r.as_symmetric(), 1e-10));
    }

    #[test]
    fn sigma_assembly() {
        let s = assemble_sigma(&[2.0, 3.0], &CorrelationMatrix::identity(2));
        assert_eq!(s, SymmetricMatrix::from_diagonal(&[4.0, 9.0]));
        let r = CorrelationMatrix::equicorrelation(2, 0.5).unwrap();
        let s = assemble_sigma(&[2.0, 3.0], &r);
        assert_eq!(s.as_matrix(), &DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]));
        let back = crate::matcore::normalize_to_correlation(&s).unwrap();
        assert!((back.as_matrix() - r.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn density_gaussian_limit_and_normalization() {
        let g = mvt_log_density(&[0.0], 1e6);
        assert!((g + 0.918_938_533_204_672_7).abs() < 1e-4);
        // composite Simpson rule on [-60, 60]
        let n = 240_000;
        let h = 120.0 / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let x = -60.0 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * mvt_log_density(&[x], 5.0).exp();
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn univariate_iid_collapse() {
        let e = gaussian(200, 1, 5) * 1.7;
        let p = ModelParams::new(
            vec![2.5],
            vec![0.0],
            vec![0.0],
            0.0,
            0.0,
            6.0,
            CorrelationMatrix::identity(1),
        )
        .unwrap();
        let init = FilterState {
            d2: vec![2.5],
            r: CorrelationMatrix::identity(1),
            buffer: VecDeque::new(),
        };
        let nll = negative_log_likelihood(&p, &e, &init).unwrap();
        let m = p.m;
        let direct: f64 = (m..200)
            .map(|t| mvt_log_density(&[e[(t, 0)] / 2.5f64.sqrt()], 6.0) - 0.5 * 2.5f64.ln())
            .sum();
        assert!((nll + direct).abs() < 1e-10);
    }

    #[test]
    fn filter_and_nll_agree() {
        let e = gaussian(300, 2, 6);
        let p = params2(0.02, 0.95);
        let init = FilterState::initial(&p, &e).unwrap();
        let out = run_filter(&p, &e, &init).unwrap();
        let nll = negative_log_likelihood(&p, &e, &init).unwrap();
        assert!((out.loglik + nll).abs() < 1e-12 * nll.abs());
        assert_eq!(out.t0, p.m);
        for t in 0..p.m {
            assert_eq!(out.path.r[t], p.rbar);
        }
    }

    #[test]
    fn resuming_from_a_snapshot_is_seamless() {
        let e = gaussian(200, 2, 7);
        let p = params2(0.05, 0.9);
        let init = FilterState::initial(&p, &e).unwrap();
        let full = run_filter(&p, &e, &init).unwrap();
        let head = run_filter(&p, &e.rows(0, 120).into_owned(), &init).unwrap();
        let tail = run_filter(&p, &e.rows(120, 80).into_owned(), &head.final_state).unwrap();
        assert_eq!(tail.t0, 0);
        for t in 0..80 {
            assert!((tail.path.sigma(t).as_matrix() - full.path.sigma(120 + t).as_matrix()).amax() < 1e-12);
        }
    }

    #[test]
    fn leverage_model_validation() {
        let base = params2(0.0, 0.0);
        // IGARCH-form leverage: lambda3 = 1 - lambda1 - lambda2 is admissible
        assert!(base.clone().with_leverage(vec![0.05, 0.05]).is_ok());
        assert!(base.clone().with_leverage(vec![0.06, 0.0]).is_err());
        let mut bad = base.clone();
        bad.lambda1 = vec![0.95, 0.85];
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.dof = 2.0;
        assert!(bad.validate().is_err());
        let mut bad = base;
        bad.theta = Theta::Scalar {
            theta1: 0.5,
            theta2: 0.5,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn standardized_residual_examples() {
        let e = gaussian(10, 1, 8);
        let path = VolatilityPath {
            d: DMatrix::from_element(10, 1, 2.0),
            r: vec![CorrelationMatrix::identity(1); 10],
        };
        let z = standardized_residuals(&path, &e).unwrap();
        assert!((z - &e / 2.0).amax() < 1e-15);
        let path = VolatilityPath {
            d: DMatrix::from_element(10, 1, 1.0),
            r: vec![CorrelationMatrix::identity(1); 10],
        };
        assert!((standardized_residuals(&path, &e).unwrap() - &e).amax() < 1e-15);
    }

    #[test]
    fn permutation_equivariance() {
        let e = gaussian(300, 3, 9);
        let rbar =
            CorrelationMatrix::try_from(vec![vec![1.0, 0.3, -0.2], vec![0.3, 1.0, 0.1], vec![-0.2, 0.1, 1.0]]).unwrap();
        let p = ModelParams::new(
            vec![0.1, 0.2, 0.05],
            vec![0.8, 0.7, 0.9],
            vec![0.1, 0.2, 0.05],
            0.03,
            0.9,
            7.0,
            rbar.clone(),
        )
        .unwrap()
        .with_leverage(vec![0.02, 0.0, 0.04])
        .unwrap();
        let perm = [2usize, 0, 1];
        let ep = DMatrix::from_fn(300, 3, |t, j| e[(t, perm[j])]);
        let pick = |v: &Vec<f64>| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pp = ModelParams {
            lambda0: pick(&p.lambda0),
            lambda1: pick(&p.lambda1),
            lambda2: pick(&p.lambda2),
            lambda3: p.lambda3.as_ref().map(pick),
            theta: p.theta.clone(),
            dof: p.dof,
            m: p.m,
            rbar: CorrelationMatrix::try_from(
                (0..3)
                    .map(|i| (0..3).map(|j| rbar.get(perm[i], perm[j])).collect())
                    .collect::<Vec<Vec<f64>>>(),
            )
            .unwrap(),
        };
        let a = negative_log_likelihood(&p, &e, &FilterState::initial(&p, &e).unwrap()).unwrap();
        let b = negative_log_likelihood(&pp, &ep, &FilterState::initial(&pp, &ep).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn blowup_is_reported() {
        let mut e = gaussian(50, 1, 10);
        e[(20, 0)] = 1e9;
        let p = ModelParams::new(
            vec![0.1],
            vec![0.5],
            vec![0.4],
            0.0,
            0.0,
            8.0,
            CorrelationMatrix::identity(1),
        )
        .unwrap();
        let init = FilterState::initial(&p, &gaussian(50, 1, 10)).unwrap();
        assert!(matches!(
            negative_log_likelihood(&p, &e, &init),
            Err(Error::FilterBlowup { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn leverage_asymmetry_is_exact(l1 in 0.0f64..0.6, l2 in 0.0f64..0.3, l3 in 0.0f64..0.1, s in 0.01f64..10.0, x in 0.001f64..20.0) {
            let p = ModelParams::new(vec![0.1], vec![l1], vec![l2], 0.0, 0.0, 8.0, CorrelationMatrix::identity(1))
                .unwrap()
                .with_leverage(vec![l3])
                .unwrap();
            let neg = variance_step(&[s], &[-x], &p)[0];
            let pos = variance_step(&[s], &[x], &p)[0];
            prop_assert!((neg - pos - l3 * x * x).abs() <= 1e-12 * neg.max(1.0));
        }

        #[test]
        fn filtered_correlations_are_valid(seed in any::<u64>(), t1 in 0.0f64..0.3, t2 in 0.0f64..0.69) {
            let e = gaussian(120, 4, seed);
            let p = ModelParams::new(vec![0.1; 4], vec![0.8; 4], vec![0.1; 4], t1, t2, 8.0, CorrelationMatrix::equicorrelation(4, 0.4).unwrap()).unwrap();
            let out = run_filter(&p, &e, &FilterState::initial(&p, &e).unwrap()).unwrap();
            for r in &out.path.r {
                for i in 0..4 {
                    prop_assert!((r.get(i, i) - 1.0).abs() < 1e-12);
                }
                prop_assert!(is_positive_definite(r.as_symmetric(), 1e-10));
            }
        }
    }
}

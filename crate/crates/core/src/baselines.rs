//! Reference correlation models: DCC_T(m), DCC_E and rolling-window
//! covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, CorrelationKind, FitOptions, ModelSpec};
use crate::matcore::{
    cholesky_in_place, forward_substitute, normalize_to_correlation, sample_correlation, sample_covariance,
    CorrelationMatrix, SymmetricMatrix,
};
use crate::optim::minimize;
use crate::volcore::{psi_matrix, VARIANCE_CEILING};

const CAP: f64 = 1.0 - 1e-6;

/// Per-asset GARCH(1,1) variances `s_t = l0 + l1 s_{t-1} + l2 e_{t-1}^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

impl GarchParams {
    pub fn k(&self) -> usize {
        self.lambda0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.lambda1.len() != k || self.lambda2.len() != k {
            return Err(Error::InvalidParams(
                "GARCH coefficient vectors must share one non-zero length".into(),
            ));
        }
        for i in 0..k {
            let (a, b, c) = (self.lambda0[i], self.lambda1[i], self.lambda2[i]);
            if !(a > 0.0 && b >= 0.0 && c >= 0.0 && b + c < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "asset {i}: GARCH coefficients ({a}, {b}, {c}) need l0 > 0, l1, l2 >= 0, l1 + l2 < 1"
                )));
            }
        }
        Ok(())
    }

    pub fn unconditional_variance(&self, i: usize) -> f64 {
        self.lambda0[i] / (1.0 - self.lambda1[i] - self.lambda2[i])
    }

    pub fn step(&self, d2_prev: &[f64], e_prev: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|i| self.lambda0[i] + self.lambda1[i] * d2_prev[i] + self.lambda2[i] * e_prev[i] * e_prev[i])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccTParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub r: CorrelationMatrix,
    pub m: usize,
}

impl DccTParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.lambda1, self.lambda2);
        if !(a >= 0.0 && b >= 0.0 && a + b < 1.0) {
            return Err(Error::InvalidParams(format!(
                "DCC_T weights ({a}, {b}) need a, b >= 0 and a + b < 1"
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidParams("DCC_T window m must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccEParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub qbar: SymmetricMatrix,
}

impl DccEParams {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.alpha1, self.alpha2);
        // a + b = 0 is admitted: it is the constant-correlation limit
        if !(a >= 0.0 && b >= 0.0 && a + b < 1.0) {
            return Err(Error::InvalidParams(format!(
                "DCC_E weights ({a}, {b}) need a, b >= 0 and a + b < 1"
            )));
        }
        if !(self.qbar.min_eigenvalue() > 0.0) {
            return Err(Error::InvalidParams("Qbar must be positive definite".into()));
        }
        Ok(())
    }
}

/// `(1 - l1 - l2) R + l1 Psi + l2 R_prev`.
pub fn dcc_t_step(r_prev: &CorrelationMatrix, psi: &CorrelationMatrix, params: &DccTParams) -> CorrelationMatrix {
    let w0 = 1.0 - params.lambda1 - params.lambda2;
    let mut out = params.r.as_matrix() * w0 + psi.as_matrix() * params.lambda1 + r_prev.as_matrix() * params.lambda2;
    for i in 0..out.nrows() {
        out[(i, i)] = 1.0;
    }
    CorrelationMatrix::from_unchecked(out)
}

/// `Q_t = (1 - a1 - a2) Qbar + a1 u u' + a2 Q_{t-1}` and its normalization.
pub fn dcc_e_step(
    q_prev: &SymmetricMatrix,
    u_prev: &[f64],
    params: &DccEParams,
) -> (SymmetricMatrix, CorrelationMatrix) {
    let w0 = 1.0 - params.alpha1 - params.alpha2;
    let u = DVector::from_column_slice(u_prev);
    let q = params.qbar.as_matrix() * w0 + (&u * u.transpose()) * params.alpha1 + q_prev.as_matrix() * params.alpha2;
    let q = SymmetricMatrix::symmetrize(q);
    let r = normalize_to_correlation(&q).expect("positive combination keeps a positive diagonal");
    (q, r)
}

/// DCC_T correlation path for standardized innovations `u` (`T x k`).
/// `R_t = R` until `m` innovations are available.
pub fn dcc_t_path(u: &DMatrix<f64>, params: &DccTParams) -> Result<Vec<CorrelationMatrix>> {
    params.validate()?;
    let (t_len, m) = (u.nrows(), params.m);
    let mut out = Vec::with_capacity(t_len);
    let mut r = params.r.clone();
    for t in 0..t_len {
        if t >= m {
            let psi = psi_matrix(&u.rows(t - m, m).into_owned())?;
            r = dcc_t_step(&r, &psi, params);
        }
        out.push(r.clone());
    }
    Ok(out)
}

/// DCC_E correlation path for `u` (`T x k`), started at `Q_0 = Qbar`.
pub fn dcc_e_path(u: &DMatrix<f64>, params: &DccEParams) -> Result<Vec<CorrelationMatrix>> {
    params.validate()?;
    let mut q = params.qbar.clone();
    let mut out = Vec::with_capacity(u.nrows());
    out.push(normalize_to_correlation(&q)?);
    let mut row = vec![0.0; u.ncols()];
    for t in 1..u.nrows() {
        row.iter_mut().enumerate().for_each(|(i, v)| *v = u[(t - 1, i)]);
        let (qn, r) = dcc_e_step(&q, &row, params);
        q = qn;
        out.push(r);
    }
    Ok(out)
}

/// Sample covariance (divisor `window - 1`, demeaned within the window) of
/// each block of `window` consecutive rows; entry `j` covers rows
/// `j..j + window`.
pub fn rolling_covariance(returns: &DMatrix<f64>, window: usize) -> Result<Vec<SymmetricMatrix>> {
    let t_len = returns.nrows();
    if window < 2 || window > t_len {
        return Err(Error::WindowTooLong { window, len: t_len });
    }
    (0..=t_len - window)
        .map(|j| sample_covariance(&returns.rows(j, window).into_owned()))
        .collect()
}

/// Gaussian quasi-log-likelihood `-1/2 sum (ln det R_t + u_t' R_t^-1 u_t)`
/// over rows `from..T`.
fn gaussian_correlation_loglik(u: &DMatrix<f64>, rs: &[CorrelationMatrix], from: usize) -> f64 {
    let k = u.ncols();
    let mut l = DMatrix::zeros(k, k);
    let mut z = vec![0.0; k];
    let mut total = 0.0;
    for t in from..u.nrows() {
        l.copy_from(rs[t].as_matrix());
        if !cholesky_in_place(&mut l) {
            return f64::NEG_INFINITY;
        }
        z.iter_mut().enumerate().for_each(|(i, v)| *v = u[(t, i)]);
        forward_substitute(&l, &mut z);
        let log_det: f64 = (0..k).map(|i| 2.0 * l[(i, i)].ln()).sum();
        total -= 0.5 * (log_det + z.iter().map(|v| v * v).sum::<f64>());
    }
    total
}

/// Result of the two-step estimators.
#[derive(Debug, Clone)]
pub struct TwoStepFit<P> {
    pub garch: GarchParams,
    /// Degrees of freedom of each univariate step-one fit.
    pub dof: Vec<f64>,
    pub params: P,
    /// Step-two Gaussian quasi-log-likelihood.
    pub correlation_loglik: f64,
    /// Conditional standard deviations (`T x k`).
    pub sd: DMatrix<f64>,
    pub correlations: Vec<CorrelationMatrix>,
}

struct StepOne {
    garch: GarchParams,
    dof: Vec<f64>,
    sd: DMatrix<f64>,
    u: DMatrix<f64>,
}

fn step_one(e: &DMatrix<f64>, options: &FitOptions) -> Result<StepOne> {
    let (t_len, k) = e.shape();
    let mut spec = ModelSpec::new(1);
    spec.correlation = CorrelationKind::Constant;
    spec.m = 1;
    let opts = FitOptions {
        std_errors: false,
        ..*options
    };
    let mut garch = GarchParams {
        lambda0: vec![0.0; k],
        lambda1: vec![0.0; k],
        lambda2: vec![0.0; k],
    };
    let mut dof = vec![0.0; k];
    let mut sd = DMatrix::zeros(t_len, k);
    for i in 0..k {
        let col = e.columns(i, 1).into_owned();
        let r = fit(&spec, &col, &opts)?;
        garch.lambda0[i] = r.params.lambda0[0];
        garch.lambda1[i] = r.params.lambda1[0];
        garch.lambda2[i] = r.params.lambda2[0];
        dof[i] = r.params.dof;
        sd.set_column(i, &r.path.d.column(0));
    }
    let u = e.component_div(&sd);
    Ok(StepOne { garch, dof, sd, u })
}

fn decode_pair(x: &[f64]) -> (f64, f64) {
    let s = |v: f64| 1.0 / (1.0 + (-v.clamp(-500.0, 500.0)).exp());
    let b = CAP * s(x[1]);
    let a = (CAP - b) * s(x[0]);
    (a, b)
}

/// Two-step DCC_T(m) fit: univariate GARCH-t per series, then Gaussian
/// quasi-likelihood for `(lambda1, lambda2)` with `R` the sample correlation
/// of the standardized innovations.
pub fn fit_dcc_t(e: &DMatrix<f64>, m: usize, options: &FitOptions) -> Result<TwoStepFit<DccTParams>> {
    if e.nrows() <= m + 1 {
        return Err(Error::TooShort {
            needed: m + 2,
            got: e.nrows(),
        });
    }
    let one = step_one(e, options)?;
    let r = sample_correlation(&one.u)?;
    let make = |x: &[f64]| {
        let (a, b) = decode_pair(x);
        DccTParams {
            lambda1: a,
            lambda2: b,
            r: r.clone(),
            m,
        }
    };
    let objective = |x: &[f64]| match dcc_t_path(&one.u, &make(x)) {
        Ok(rs) => -gaussian_correlation_loglik(&one.u, &rs, m),
        Err(_) => f64::INFINITY,
    };
    let res = minimize(objective, &[-3.0, 2.0], &options.optim);
    let params = make(&res.x);
    let correlations = dcc_t_path(&one.u, &params)?;
    Ok(TwoStepFit {
        garch: one.garch,
        dof: one.dof,
        correlation_loglik: gaussian_correlation_loglik(&one.u, &correlations, m),
        params,
        sd: one.sd,
        correlations,
    })
}

/// Two-step DCC_E fit with `Qbar` the sample covariance of the standardized
/// innovations.
pub fn fit_dcc_e(e: &DMatrix<f64>, options: &FitOptions) -> Result<TwoStepFit<DccEParams>> {
    let one = step_one(e, options)?;
    let qbar = sample_covariance(&one.u)?;
    let make = |x: &[f64]| {
        let (a, b) = decode_pair(x);
        DccEParams {
            alpha1: a,
            alpha2: b,
            qbar: qbar.clone(),
        }
    };
    let objective = |x: &[f64]| match dcc_e_path(&one.u, &make(x)) {
        Ok(rs) => -gaussian_correlation_loglik(&one.u, &rs, 1),
        Err(_) => f64::INFINITY,
    };
    let res = minimize(objective, &[-3.0, 2.0], &options.optim);
    let params = make(&res.x);
    let correlations = dcc_e_path(&one.u, &params)?;
    Ok(TwoStepFit {
        garch: one.garch,
        dof: one.dof,
        correlation_loglik: gaussian_correlation_loglik(&one.u, &correlations, 1),
        params,
        sd: one.sd,
        correlations,
    })
}

/// Conditional variances of `e` under `garch`, started at the long-run level.
/// Fails when a variance leaves the representable range.
pub fn garch_variances(e: &DMatrix<f64>, garch: &GarchParams) -> Result<DMatrix<f64>> {
    garch.validate()?;
    let (t_len, k) = e.shape();
    let mut out = DMatrix::zeros(t_len, k);
    let mut d2: Vec<f64> = (0..k).map(|i| garch.unconditional_variance(i)).collect();
    for t in 0..t_len {
        for i in 0..k {
            if d2[i] > VARIANCE_CEILING {
                return Err(Error::ExplosiveParameters { t, value: d2[i] });
            }
            out[(t, i)] = d2[i];
        }
        let row: Vec<f64> = (0..k).map(|i| e[(t, i)]).collect();
        d2 = garch.step(&d2, &row);
    }
    Ok(out)
}

//! Synthetic return panels from the proposed model and the baselines.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{dcc_e_step, dcc_t_step, DccEParams, DccTParams, GarchParams};
use crate::data::ReturnPanel;
use crate::error::{Error, Result};
use crate::matcore::{sym_sqrt, CorrelationMatrix};
use crate::meanmodel::VarMean;
use crate::volcore::{assemble_sigma, psi_matrix, Filter, FilterState, ModelParams, VolatilityPath, VARIANCE_CEILING};

/// Draw from the `k`-variate Student-t with unit-variance components. An
/// infinite `v` gives the standard normal.
pub fn sample_mvt<R: Rng + ?Sized>(v: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let mut z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    if v.is_finite() {
        let w = ChiSquared::new(v).expect("dof > 2").sample(rng) / v;
        let s = ((v - 2.0) / v).sqrt() / w.sqrt();
        z.iter_mut().for_each(|x| *x *= s);
    }
    z
}

/// Generator for replication `index` of a study with master `seed`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimModel {
    Proposed(ModelParams),
    DccT {
        garch: GarchParams,
        params: DccTParams,
        dof: f64,
    },
    DccE {
        garch: GarchParams,
        params: DccEParams,
        dof: f64,
    },
}

impl SimModel {
    pub fn k(&self) -> usize {
        match self {
            SimModel::Proposed(p) => p.k(),
            SimModel::DccT { garch, .. } | SimModel::DccE { garch, .. } => garch.k(),
        }
    }

    fn window(&self) -> usize {
        match self {
            SimModel::Proposed(p) => p.m,
            SimModel::DccT { params, .. } => params.m,
            SimModel::DccE { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub model: SimModel,
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mean: Option<VarMean>,
    /// Innovations overwritten during generation; later steps respond to
    /// them through the model recursions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shocks: Vec<Shock>,
}

/// Sets innovation `asset` (from 0) of retained row `t` to `size` conditional
/// standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub t: usize,
    pub asset: usize,
    pub size: f64,
}

fn default_burn_in() -> usize {
    500
}

impl SimulationConfig {
    /// Burn-in of 500 steps, zero mean.
    pub fn new(model: SimModel, t: usize, seed: u64) -> Self {
        SimulationConfig {
            model,
            t,
            burn_in: default_burn_in(),
            seed,
            mean: None,
            shocks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.t == 0 {
            return bad("simulation length must be at least 1".into());
        }
        if self.burn_in < self.model.window() {
            return bad(format!(
                "burn-in {} is shorter than the innovation window {}",
                self.burn_in,
                self.model.window()
            ));
        }
        match &self.model {
            SimModel::Proposed(p) => p.validate()?,
            SimModel::DccT { garch, params, dof } => {
                garch.validate()?;
                params.validate()?;
                check_dof(*dof)?;
                if params.r.dim() != garch.k() {
                    return bad("DCC_T correlation and GARCH dimensions differ".into());
                }
            }
            SimModel::DccE { garch, params, dof } => {
                garch.validate()?;
                params.validate()?;
                check_dof(*dof)?;
                if params.qbar.dim() != garch.k() {
                    return bad("DCC_E Qbar and GARCH dimensions differ".into());
                }
            }
        }
        if let Some(s) = self
            .shocks
            .iter()
            .find(|s| s.t >= self.t || s.asset >= self.model.k() || !s.size.is_finite())
        {
            return bad(format!("shock {s:?} is outside the simulated panel"));
        }
        if let Some(mean) = &self.mean {
            mean.validate()?;
            if mean.k() != self.model.k() {
                return bad("VAR mean dimension differs from the model".into());
            }
        }
        Ok(())
    }
}

fn check_dof(v: f64) -> Result<()> {
    if v > 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("degrees of freedom {v} must exceed 2")))
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Returns (innovations plus the VAR mean when configured).
    pub panel: ReturnPanel,
    /// Innovations `e_t` (`T x k`).
    pub innovations: DMatrix<f64>,
    /// Conditional standard deviations and correlations of each row.
    pub path: VolatilityPath,
    /// Filter state at the first retained row (proposed model only).
    pub start: Option<FilterState>,
}

/// Runs the configured model forward for `burn_in + t` steps and keeps the
/// last `t`.
pub fn simulate(config: &SimulationConfig) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    simulate_with_rng(config, &mut rng)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<Simulation> {
    config.validate()?;
    let k = config.model.k();
    let total = config.burn_in + config.t;
    let mut e = DMatrix::zeros(config.t, k);
    let mut d = DMatrix::zeros(config.t, k);
    let mut rs = Vec::with_capacity(config.t);
    let mut start = None;
    let mut record = |t: usize, sd: &[f64], r: &CorrelationMatrix, et: &[f64]| {
        if t >= config.burn_in {
            let row = t - config.burn_in;
            for i in 0..k {
                d[(row, i)] = sd[i];
                e[(row, i)] = et[i];
            }
            rs.push(r.clone());
        }
    };
    let shock = |t: usize, sd: &[f64], et: &mut [f64]| {
        for s in config.shocks.iter().filter(|s| s.t + config.burn_in == t) {
            et[s.asset] = s.size * sd[s.asset];
        }
    };
    let explosive = |t: usize, d2: &[f64]| -> Result<()> {
        match d2.iter().find(|v| !(**v <= VARIANCE_CEILING)) {
            Some(&value) => Err(Error::ExplosiveParameters { t, value }),
            None => Ok(()),
        }
    };

    match &config.model {
        SimModel::Proposed(params) => {
            let mut filter = Filter::new(params, &FilterState::unconditional(params))?;
            for t in 0..total {
                if t == config.burn_in {
                    start = Some(filter.state());
                }
                explosive(t, filter.variances())?;
                filter.predict()?;
                let sd = filter.sd().to_vec();
                let r = CorrelationMatrix::from_unchecked(filter.correlation().clone());
                let mut et = draw(&sd, &r, params.dof, rng)?;
                shock(t, &sd, &mut et);
                record(t, &sd, &r, &et);
                filter.update(&et);
            }
        }
        SimModel::DccT { garch, params, dof } => {
            let m = params.m;
            let mut d2: Vec<f64> = (0..k).map(|i| garch.unconditional_variance(i)).collect();
            let mut r = params.r.clone();
            let mut u_hist: Vec<Vec<f64>> = Vec::with_capacity(total);
            for t in 0..total {
                explosive(t, &d2)?;
                if t >= m {
                    let window = DMatrix::from_fn(m, k, |s, i| u_hist[t - m + s][i]);
                    r = dcc_t_step(&r, &psi_matrix(&window)?, params);
                }
                let sd: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
                let mut et = draw(&sd, &r, *dof, rng)?;
                shock(t, &sd, &mut et);
                record(t, &sd, &r, &et);
                u_hist.push((0..k).map(|i| et[i] / sd[i]).collect());
                d2 = garch.step(&d2, &et);
            }
        }
        SimModel::DccE { garch, params, dof } => {
            let mut d2: Vec<f64> = (0..k).map(|i| garch.unconditional_variance(i)).collect();
            let mut q = params.qbar.clone();
            let mut r = crate::matcore::normalize_to_correlation(&q)?;
            let mut u_prev: Option<Vec<f64>> = None;
            for t in 0..total {
                explosive(t, &d2)?;
                if let Some(u) = &u_prev {
                    let (qn, rn) = dcc_e_step(&q, u, params);
                    q = qn;
                    r = rn;
                }
                let sd: Vec<f64> = d2.iter().map(|v| v.sqrt()).collect();
                let mut et = draw(&sd, &r, *dof, rng)?;
                shock(t, &sd, &mut et);
                record(t, &sd, &r, &et);
                u_prev = Some((0..k).map(|i| et[i] / sd[i]).collect());
                d2 = garch.step(&d2, &et);
            }
        }
    }

    let values = match &config.mean {
        None => e.clone(),
        Some(mean) => add_var_mean(&e, mean),
    };
    let panel = ReturnPanel::from_matrix(values)?;
    Ok(Simulation {
        panel,
        innovations: e,
        path: VolatilityPath { d, r: rs },
        start,
    })
}

/// `e = (D R D)^(1/2) eps` with `eps` unit-variance Student-t.
fn draw<R: Rng + ?Sized>(sd: &[f64], r: &CorrelationMatrix, v: f64, rng: &mut R) -> Result<Vec<f64>> {
    let root = sym_sqrt(&assemble_sigma(sd, r))?;
    let eps = DVector::from_vec(sample_mvt(v, sd.len(), rng));
    Ok((root.as_matrix() * eps).iter().copied().collect())
}

/// `r_t = mu_t + e_t`, with pre-sample returns at the unconditional mean.
fn add_var_mean(e: &DMatrix<f64>, mean: &VarMean) -> DMatrix<f64> {
    let (t_len, k) = e.shape();
    let p = mean.p();
    let mu = mean.unconditional_mean().unwrap_or_else(|| mean.phi0.clone());
    let mut history = vec![DVector::from_vec(mu); p];
    let mut out = DMatrix::zeros(t_len, k);
    for t in 0..t_len {
        let r = mean.predict(&history) + e.row(t).transpose();
        out.set_row(t, &r.transpose());
        if p > 0 {
            history.pop();
            history.insert(0, r);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{is_positive_definite, sample_covariance};
    use crate::volcore::run_filter;

    fn params(k: usize, leverage: bool) -> ModelParams {
        let rbar = CorrelationMatrix::equicorrelation(k, 0.4).unwrap();
        let p = ModelParams::new(vec![0.05; k], vec![0.90; k], vec![0.05; k], 0.02, 0.95, 8.0, rbar).unwrap();
        if leverage {
            ModelParams {
                lambda2: vec![0.02; k],
                ..p
            }
            .with_leverage(vec![0.06; k])
            .unwrap()
        } else {
            p
        }
    }

    fn moments(x: &[f64]) -> (f64, f64, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4 / (m2 * m2) - 3.0)
    }

    #[test]
    fn mvt_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in [5.0, 8.0, 20.0] {
            let x: Vec<f64> = (0..1_000_000).map(|_| sample_mvt(v, 1, &mut rng)[0]).collect();
            let (_, var, _) = moments(&x);
            assert!((var - 1.0).abs() < 0.01, "v = {v}: variance {var}");
        }
    }

    #[test]
    fn mvt_tails_match_scaled_t() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = 5.0;
        let n = 1_000_000;
        let x: Vec<f64> = (0..n).map(|_| sample_mvt(v, 1, &mut rng)[0]).collect();
        let scale = ((v - 2.0) / v).sqrt();
        let t = StudentsT::new(0.0, 1.0, v).unwrap();
        for q in [-4.0, -2.0, -1.0, 0.0, 0.5, 1.5, 3.0, 5.0] {
            let emp = x.iter().filter(|&&s| s <= q).count() as f64 / n as f64;
            assert!((emp - t.cdf(q / scale)).abs() < 2e-3, "cdf at {q}: {emp}");
        }
    }

    #[test]
    fn mvt_kurtosis() {
        // the sample kurtosis needs a finite eighth moment to settle
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = 12.0;
        let x: Vec<f64> = (0..1_000_000).map(|_| sample_mvt(v, 1, &mut rng)[0]).collect();
        let (_, _, kurt) = moments(&x);
        assert!((kurt / (6.0 / (v - 4.0)) - 1.0).abs() < 0.15, "excess kurtosis {kurt}");
    }

    #[test]
    fn mvt_gaussian_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let mut x = DMatrix::zeros(n, 3);
        for t in 0..n {
            let z = sample_mvt(f64::INFINITY, 3, &mut rng);
            for i in 0..3 {
                x[(t, i)] = z[i];
            }
        }
        let c = sample_covariance(&x).unwrap();
        assert!((c.as_matrix() - DMatrix::identity(3, 3)).amax() < 0.02);
    }

    #[test]
    fn static_model_is_iid_with_drd_covariance() {
        let rbar = CorrelationMatrix::equicorrelation(2, -0.3).unwrap();
        let p = ModelParams::new(vec![2.0, 0.5], vec![0.0; 2], vec![0.0; 2], 0.0, 0.0, 8.0, rbar).unwrap();
        let sim = simulate(&SimulationConfig::new(SimModel::Proposed(p), 100_000, 4)).unwrap();
        let c = sample_covariance(&sim.innovations).unwrap();
        let truth = [[2.0, -0.3], [-0.3, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((c.get(i, j) - truth[i][j]).abs() < 0.04, "{i}{j}: {}", c.get(i, j));
            }
        }
        assert!(sim
            .path
            .d
            .iter()
            .all(|v| (v * v - 2.0).abs() < 1e-12 || (v * v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn filter_reproduces_simulated_path() {
        for k in [1, 2, 4] {
            let p = params(k, k == 2);
            let sim = simulate(&SimulationConfig::new(
                SimModel::Proposed(p.clone()),
                1000,
                10 + k as u64,
            ))
            .unwrap();
            let out = run_filter(&p, &sim.innovations, sim.start.as_ref().unwrap()).unwrap();
            for t in 0..1000 {
                let a = sim.path.sigma(t);
                let b = out.path.sigma(t);
                assert!((a.as_matrix() - b.as_matrix()).amax() < 1e-10);
                assert!(is_positive_definite(&a, 1e-10));
            }
        }
    }

    #[test]
    fn shocks_feed_the_recursions() {
        let p = params(2, false);
        let base = SimulationConfig::new(SimModel::Proposed(p), 100, 4);
        let mut cfg = base.clone();
        cfg.shocks.push(Shock {
            t: 50,
            asset: 0,
            size: -10.0,
        });
        let (a, b) = (simulate(&base).unwrap(), simulate(&cfg).unwrap());
        assert_eq!(b.innovations[(50, 0)], -10.0 * b.path.d[(50, 0)]);
        assert_eq!(a.path.d.rows(0, 51), b.path.d.rows(0, 51));
        assert!(b.path.d[(51, 0)] > 2.0 * a.path.d[(51, 0)]);
        cfg.shocks[0].t = 100;
        assert!(matches!(simulate(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SimulationConfig::new(SimModel::Proposed(params(2, false)), 200, 9);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.innovations, b.innovations);
        let c = simulate(&SimulationConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.innovations, c.innovations);
    }

    #[test]
    fn leverage_raises_variance_after_negative_shocks() {
        let p = params(1, true);
        let sim = simulate(&SimulationConfig::new(SimModel::Proposed(p), 20_000, 3)).unwrap();
        let neg: Vec<f64> = (0..19_999)
            .map(|t| f64::from(u8::from(sim.innovations[(t, 0)] < 0.0)))
            .collect();
        let var: Vec<f64> = (1..20_000).map(|t| sim.path.d[(t, 0)].powi(2)).collect();
        let (mn, _, _) = moments(&neg);
        let (mv, _, _) = moments(&var);
        let cov: f64 = neg.iter().zip(&var).map(|(a, b)| (a - mn) * (b - mv)).sum::<f64>();
        assert!(cov > 0.0);
    }

    #[test]
    fn explosive_parameters_detected() {
        let rbar = CorrelationMatrix::identity(1);
        let p = ModelParams::new(vec![1e11], vec![0.99], vec![0.0], 0.0, 0.0, 8.0, rbar).unwrap();
        let r = simulate(&SimulationConfig::new(SimModel::Proposed(p), 10, 1));
        assert!(matches!(r, Err(Error::ExplosiveParameters { .. })));
    }

    #[test]
    fn burn_in_must_cover_window() {
        let cfg = SimulationConfig {
            burn_in: 2,
            ..SimulationConfig::new(SimModel::Proposed(params(2, false)), 10, 1)
        };
        assert!(matches!(simulate(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn baseline_models_simulate() {
        let garch = GarchParams {
            lambda0: vec![0.05; 2],
            lambda1: vec![0.9; 2],
            lambda2: vec![0.05; 2],
        };
        let t = SimModel::DccT {
            garch: garch.clone(),
            params: DccTParams {
                lambda1: 0.03,
                lambda2: 0.95,
                r: CorrelationMatrix::equicorrelation(2, 0.5).unwrap(),
                m: 4,
            },
            dof: 7.0,
        };
        let e = SimModel::DccE {
            garch,
            params: DccEParams {
                alpha1: 0.03,
                alpha2: 0.95,
                qbar: CorrelationMatrix::equicorrelation(2, 0.5)
                    .unwrap()
                    .as_symmetric()
                    .clone(),
            },
            dof: 7.0,
        };
        for model in [t, e] {
            let sim = simulate(&SimulationConfig::new(model, 500, 2)).unwrap();
            assert_eq!(sim.panel.len(), 500);
            assert!(sim.start.is_none());
            let rho = sample_covariance(&sim.innovations).unwrap();
            assert!(rho.get(0, 1) > 0.0);
        }
    }

    #[test]
    fn var_mean_shifts_returns() {
        let mean = VarMean {
            phi0: vec![0.5, -0.2],
            phi: vec![vec![vec![0.3, 0.0], vec![0.0, 0.1]]],
        };
        let cfg = SimulationConfig {
            mean: Some(mean),
            ..SimulationConfig::new(SimModel::Proposed(params(2, false)), 20_000, 5)
        };
        let sim = simulate(&cfg).unwrap();
        let means = crate::matcore::column_means(sim.panel.values());
        assert!(
            (means[0] - 0.5 / 0.7).abs() < 0.05 && (means[1] + 0.2 / 0.9).abs() < 0.05,
            "{means}"
        );
    }
}

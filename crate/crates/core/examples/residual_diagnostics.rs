//! Bootstrap Ljung-Box checks on the standardized residuals of a fit, and on
//! a constant-variance fit that misses the volatility clustering.

use mvgarch::diagnostics::{adequacy_report, bootstrap_critical_values, CriticalValues, DEFAULT_LAGS};
use mvgarch::estimator::{fit, CorrelationKind, FitOptions, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let params = ModelParams::new(
        vec![0.1, 0.1],
        vec![0.80, 0.80],
        vec![0.15, 0.15],
        0.02,
        0.95,
        10.0,
        CorrelationMatrix::equicorrelation(2, 0.3)?,
    )?;
    let sim = simulate(&SimulationConfig::new(SimModel::Proposed(params), 1500, 21))?;
    let options = FitOptions::default();

    let good = fit(&ModelSpec::new(2), &sim.innovations, &options)?;
    let boot = bootstrap_critical_values(&good.residuals_std, &DEFAULT_LAGS, 1000, 1)?;
    println!(
        "{}\n",
        adequacy_report(&good, &DEFAULT_LAGS, &CriticalValues::Bootstrap(boot))?
    );

    let mut spec = ModelSpec::new(2);
    spec.garch = false;
    spec.correlation = CorrelationKind::Constant;
    let bad = fit(&spec, &sim.innovations, &options)?;
    let boot = bootstrap_critical_values(&bad.residuals_std, &DEFAULT_LAGS, 1000, 1)?;
    println!(
        "{}",
        adequacy_report(&bad, &DEFAULT_LAGS, &CriticalValues::Bootstrap(boot))?
    );
    Ok(())
}

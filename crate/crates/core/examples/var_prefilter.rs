//! Returns with a VAR(1) mean: select the order by AIC, filter the mean, then
//! fit the volatility model to the residuals.

use mvgarch::estimator::{fit, FitOptions, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::meanmodel::{fit_var, multivariate_ljung_box, select_var_order_aic, VarMean};
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let params = ModelParams::new(
        vec![0.05, 0.05],
        vec![0.90, 0.90],
        vec![0.05, 0.05],
        0.02,
        0.95,
        8.0,
        CorrelationMatrix::equicorrelation(2, 0.4)?,
    )?;
    let mut config = SimulationConfig::new(SimModel::Proposed(params), 2500, 4);
    config.mean = Some(VarMean {
        phi0: vec![0.05, 0.02],
        phi: vec![vec![vec![0.3, 0.1], vec![0.0, -0.2]]],
    });
    let sim = simulate(&config)?;
    let returns = sim.panel.values();

    println!(
        "Q(10) of raw returns: {:.2}",
        multivariate_ljung_box(returns, 10)?.statistic
    );
    let (p, aic) = select_var_order_aic(returns, 4)?;
    println!("AIC by order: {aic:.2?}, chosen p = {p}");
    let var = fit_var(returns, p)?;
    println!("lag-1 coefficients: {:.3}", var.phi[0]);
    println!(
        "Q(10) of VAR residuals: {:.2}",
        multivariate_ljung_box(&var.residuals, 10)?.statistic
    );

    let result = fit(&ModelSpec::new(2), &var.residuals, &FitOptions::default())?;
    println!("{}, L_max = {:.2}", result.audit, result.lmax);
    Ok(())
}

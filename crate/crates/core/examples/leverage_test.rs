//! Likelihood-ratio test for leverage terms on data that has them.

use mvgarch::estimator::{fit, fit_nested, lr_test, FitOptions, Leverage, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let truth = ModelParams::new(
        vec![0.05, 0.05],
        vec![0.88, 0.88],
        vec![0.03, 0.03],
        0.02,
        0.95,
        8.0,
        CorrelationMatrix::equicorrelation(2, 0.5)?,
    )?
    .with_leverage(vec![0.08, 0.08])?;
    let sim = simulate(&SimulationConfig::new(SimModel::Proposed(truth), 3000, 11))?;
    let e = &sim.innovations;

    let options = FitOptions::default();
    let symmetric = fit(&ModelSpec::new(2), e, &options)?;
    let full_spec = ModelSpec::new(2).with_leverage(vec![Leverage::Free; 2]);
    let leverage = fit_nested(&full_spec, e, &symmetric, &options)?;

    println!("symmetric  L_max = {:.2}", symmetric.lmax);
    println!("leverage   L_max = {:.2}", leverage.lmax);
    println!("lambda3 = {:?}", leverage.params.lambda3);
    println!("{}", lr_test(&leverage, &symmetric)?);
    Ok(())
}

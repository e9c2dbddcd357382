//! Two-step DCC_T and DCC_E fits next to the joint fit of the proposed model.

use mvgarch::baselines::{fit_dcc_e, fit_dcc_t};
use mvgarch::estimator::{fit, FitOptions, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let truth = ModelParams::new(
        vec![0.05, 0.04, 0.06],
        vec![0.90, 0.91, 0.89],
        vec![0.05, 0.05, 0.06],
        0.03,
        0.94,
        7.0,
        CorrelationMatrix::equicorrelation(3, 0.45)?,
    )?;
    let sim = simulate(&SimulationConfig::new(SimModel::Proposed(truth), 2000, 5))?;
    let e = &sim.innovations;
    let options = FitOptions::default();

    let joint = fit(&ModelSpec::new(3), e, &options)?;
    let dcc_t = fit_dcc_t(e, 5, &options)?;
    let dcc_e = fit_dcc_e(e, &options)?;
    println!("proposed   theta = {:?}", joint.params.theta);
    println!(
        "DCC_T(5)   lambda1 = {:.4}, lambda2 = {:.4}",
        dcc_t.params.lambda1, dcc_t.params.lambda2
    );
    println!(
        "DCC_E      alpha1 = {:.4}, alpha2 = {:.4}",
        dcc_e.params.alpha1, dcc_e.params.alpha2
    );

    let t = e.nrows() - 1;
    println!("last-day correlation of assets 1 and 2:");
    println!("  true      {:.4}", sim.path.r[t].get(0, 1));
    println!("  proposed  {:.4}", joint.path.r[t].get(0, 1));
    println!("  DCC_T     {:.4}", dcc_t.correlations[t].get(0, 1));
    println!("  DCC_E     {:.4}", dcc_e.correlations[t].get(0, 1));
    Ok(())
}

//! Simulate a two-asset panel from known parameters and recover them by
//! maximum likelihood.

use mvgarch::estimator::{fit, FitOptions, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let truth = ModelParams::new(
        vec![0.05, 0.05],
        vec![0.90, 0.90],
        vec![0.05, 0.05],
        0.02,
        0.95,
        8.0,
        CorrelationMatrix::equicorrelation(2, 0.5)?,
    )?;
    let sim = simulate(&SimulationConfig::new(SimModel::Proposed(truth), 3000, 42))?;

    let result = fit(&ModelSpec::new(2), &sim.innovations, &FitOptions::default())?;
    println!("{:<14} {:>9} {:>9}", "parameter", "estimate", "s.e.");
    for e in &result.estimates {
        let se = e.std_error.map_or("n/a".into(), |s| format!("{s:.4}"));
        println!("{:<14} {:>9.4} {:>9}", e.group.to_string(), e.value, se);
    }
    println!("L_max = {:.2} after {} iterations", result.lmax, result.n_iterations);
    println!("true values: lambda0 0.05, lambda1 0.90, lambda2 0.05, theta1 0.02, theta2 0.95, dof 8");
    Ok(())
}

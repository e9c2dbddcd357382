//! Inject a large shock into a simulation and see how fast a fitted model
//! and a 69-day rolling estimate react.

use mvgarch::baselines::rolling_covariance;
use mvgarch::estimator::{fit, FitOptions, ModelSpec};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, Shock, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let params = ModelParams::new(
        vec![0.05, 0.05],
        vec![0.85, 0.85],
        vec![0.10, 0.10],
        0.02,
        0.95,
        8.0,
        CorrelationMatrix::equicorrelation(2, 0.5)?,
    )?;
    let shock_at = 300;
    let mut config = SimulationConfig::new(SimModel::Proposed(params), 600, 9);
    config.shocks.push(Shock {
        t: shock_at,
        asset: 0,
        size: -15.0,
    });
    let sim = simulate(&config)?;
    let e = &sim.innovations;

    let model = fit(&ModelSpec::new(2), e, &FitOptions::default())?;
    let window = 69;
    let rolling = rolling_covariance(e, window)?;
    // rolling entry j uses rows j..j + window and forecasts row j + window
    let rolling_sd = |t: usize| rolling[t - window].get(0, 0).sqrt();

    println!("shock of {:.2} at t = {shock_at}", e[(shock_at, 0)]);
    println!("{:>5} {:>10} {:>10}", "t", "model", "rolling");
    for t in (shock_at - 2..shock_at + 80).step_by(6) {
        println!("{t:>5} {:>10.3} {:>10.3}", model.path.d[(t, 0)], rolling_sd(t));
    }
    let peak = |f: &dyn Fn(usize) -> f64| {
        (shock_at..shock_at + window)
            .max_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap()
    };
    println!("model peaks at t = {}", peak(&|t| model.path.d[(t, 0)]));
    println!("rolling peaks at t = {}", peak(&rolling_sd));
    Ok(())
}

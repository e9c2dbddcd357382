//! Run the filter over many random parameter draws and check every
//! conditional correlation and covariance matrix for positive definiteness.

use mvgarch::matcore::{is_positive_definite, CorrelationMatrix};
use mvgarch::simulate::{replication_rng, simulate_with_rng, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;
use rand::Rng;

fn main() -> mvgarch::Result<()> {
    let k = 4;
    let mut checked = 0;
    let mut failures = 0;
    for run in 0..20u64 {
        let mut rng = replication_rng(2024, run);
        let l1: f64 = rng.random_range(0.5..0.9);
        let l2: f64 = rng.random_range(0.0..(0.99 - l1));
        let t2: f64 = rng.random_range(0.0..0.95);
        let t1: f64 = rng.random_range(0.0..(0.99 - t2));
        let rho: f64 = rng.random_range(-0.2..0.8);
        let params = ModelParams::new(
            vec![0.05; k],
            vec![l1; k],
            vec![l2; k],
            t1,
            t2,
            rng.random_range(4.0..20.0),
            CorrelationMatrix::equicorrelation(k, rho)?,
        )?;
        let sim = simulate_with_rng(&SimulationConfig::new(SimModel::Proposed(params), 1000, run), &mut rng)?;
        for t in 0..sim.path.len() {
            checked += 2;
            failures += usize::from(!is_positive_definite(sim.path.r[t].as_symmetric(), 1e-10));
            failures += usize::from(!is_positive_definite(&sim.path.sigma(t), 1e-10));
        }
    }
    println!("{checked} matrices checked, {failures} not positive definite");
    Ok(())
}

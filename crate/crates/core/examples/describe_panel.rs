//! Write a simulated panel to CSV, read it back and print descriptive
//! statistics.

use mvgarch::data::{describe, read_panel_file, write_panel_file, InputKind, MissingPolicy};
use mvgarch::matcore::CorrelationMatrix;
use mvgarch::simulate::{simulate, SimModel, SimulationConfig};
use mvgarch::volcore::ModelParams;

fn main() -> mvgarch::Result<()> {
    let params = ModelParams::new(
        vec![0.02, 0.05, 0.03],
        vec![0.93, 0.88, 0.90],
        vec![0.05, 0.08, 0.07],
        0.03,
        0.93,
        6.0,
        CorrelationMatrix::equicorrelation(3, 0.3)?,
    )?;
    let sim = simulate(&SimulationConfig::new(SimModel::Proposed(params), 1500, 7))?;

    let dir = std::env::temp_dir().join("mvgarch-describe-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("returns.csv");
    write_panel_file(&path, &sim.panel)?;
    let panel = read_panel_file(&path, InputKind::Returns, MissingPolicy::Reject)?;
    println!("read {} rows from {}", panel.len(), path.display());
    println!("{}", describe(&panel)?);
    Ok(())
}

//! Per-edge label entropy across seeds for the simulator and the linear
//! link-prediction probe, with a fair-coin control.
//!
//! cargo run --release --example probe_variance [runs]

use gcs_probe::baseline::{self, ProbeConfig};
use gcs_probe::interpret::InterpretThresholds;
use gcs_probe::synth::{self, PlantedConfig};
use gcs_probe::train::TrainConfig;

fn main() -> gcs_probe::Result<()> {
    let runs: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let inst = synth::gen_planted(&PlantedConfig { n_nodes: 200, seed: 1, ..PlantedConfig::default() })?;
    let seeds: Vec<u64> = (0..runs).collect();
    let res = baseline::variance_experiment(
        &inst.graph,
        &inst.x_base,
        &inst.x_enh,
        &seeds,
        &ProbeConfig::default(),
        &TrainConfig::default(),
        &InterpretThresholds::default(),
    )?;
    println!("{runs} runs over {} edges; median entropy in bits:", res.gcs_entropy.len());
    println!("  simulator     {:.4}", baseline::median(&res.gcs_entropy));
    println!("  linear probe  {:.4}", baseline::median(&res.probe_entropy));
    println!("  coin control  {:.4}", baseline::median(&res.control_entropy));
    Ok(())
}

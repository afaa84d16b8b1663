//! Run a small replicated benchmark in-process and print the metric table.
//! The bundled presets under `presets/` drive the same engine through the
//! CLI at full desk scale.
//!
//! ```bash
//! cargo run --release --example simulate_benchmark
//! ```

use twophase_raking::cli::{run_simulate, SimulateConfig};

fn main() -> twophase_raking::Result<()> {
    let config: SimulateConfig = serde_json::from_str(
        r#"{
            "name": "demo",
            "cohort_size": 2000,
            "validation_size": 400,
            "beta_x": [0.4054651081081644],
            "beta_z": -0.6931471805599453,
            "censoring": [0.5],
            "error_scenario": 1,
            "designs": [{ "kind": "srs" }],
            "methods": ["true", "ht", "grn", "grmis"],
            "imputations": 10,
            "chain_iterations": 50,
            "replicates": 100,
            "seed": 20260809
        }"#,
    )
    .expect("inline config is valid");

    let (csv, manifest) = run_simulate(&config)?;
    println!("{csv}");
    println!(
        "calibrated censoring bound: {:.3}",
        manifest.censoring_bounds[0].bound
    );
    println!("wall clock: {:.1}s", manifest.wall_clock_seconds);
    Ok(())
}

//! How well does a linear model in the error-prone influence track the true
//! influence? Low R-squared for the misclassification channel is the
//! motivation for imputing better auxiliaries.
//!
//! ```bash
//! cargo run --example influence_diagnostics
//! ```

use twophase_raking::sim::{export_influence_pairs, linear_r2, Channel, InfluenceDiagnosticConfig};

fn main() -> twophase_raking::Result<()> {
    let config = InfluenceDiagnosticConfig {
        n_cohort: 2000,
        censoring_target: 0.9,
        seed: 20260809,
        ..Default::default()
    };
    let pairs = export_influence_pairs(&config)?;
    println!("channel            linear R^2 (true vs error-prone influence, exposure)");
    for channel in Channel::ALL {
        let label = match channel {
            Channel::CovariateOnly => "covariate only  ",
            Channel::TimeOnly => "follow-up only  ",
            Channel::DeltaOnly => "indicator only  ",
            Channel::All => "all three       ",
        };
        println!("{label}   {:.4}", linear_r2(&pairs, channel));
    }
    println!("\n{} rows exported (use the `diagnose` command for CSV output)", pairs.len());
    Ok(())
}

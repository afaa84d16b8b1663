//! End-to-end file workflow: simulate a two-phase dataset, write it to the
//! canonical CSV schema, read it back, and estimate hazard ratios — the
//! same path the `analyze` command drives.
//!
//! ```bash
//! cargo run --example analyze_csv
//! ```

use twophase_raking::cli::{estimates_csv_string, run_analyze, AnalyzeMethod, AnalyzeOptions};
use twophase_raking::designs::{draw_srs, DesignSpec};
use twophase_raking::imputation::ImputedVars;
use twophase_raking::io::{read_cohort_csv, write_cohort_csv, ColumnMap};
use twophase_raking::numeric::RngStream;
use twophase_raking::sim::{
    apply_error_scenario, calibrate_censoring_bound, generate_cohort, ErrorScenario, Method,
    MisclassModel, ScenarioConfig,
};

fn main() -> twophase_raking::Result<()> {
    let config = ScenarioConfig {
        n_cohort: 2000,
        n_validation: 400,
        beta_x: 1.5_f64.ln(),
        beta_z: 0.5_f64.ln(),
        lambda0: 0.1,
        censoring_target: 0.5,
        scenario: ErrorScenario::DeltaTimeCovariate,
        misclass: MisclassModel::Main,
        error_free: false,
        design: DesignSpec::srs(400),
        methods: vec![Method::Ht],
        imputations: 10,
        chain_iterations: 50,
        replicates: 1,
        seed: 4242,
        aux_intercept: true,
        cell_id: 0,
    };
    let theta = calibrate_censoring_bound(
        config.beta_x,
        config.beta_z,
        config.lambda0,
        config.censoring_target,
        RngStream::new(config.seed, 0),
    )?;
    let mut rng = RngStream::new(config.seed, 1).rng();
    let truth = generate_cohort(&config, theta, &mut rng)?;
    let coefs = config.misclass.coefficients(config.beta_x);
    let cohort = apply_error_scenario(&truth, config.scenario, &coefs, false, &mut rng)?;
    let sample = draw_srs(cohort.n(), 400, &mut rng)?;

    let path = std::env::temp_dir().join("twophase-raking-example.csv");
    write_cohort_csv(&path, &cohort, &sample)?;
    println!("wrote {}", path.display());

    let (cohort, sample) = read_cohort_csv(&path, &ColumnMap::canonical())?;
    let opts = AnalyzeOptions {
        methods: vec![
            AnalyzeMethod::Naive,
            AnalyzeMethod::Sim(Method::Ht),
            AnalyzeMethod::Sim(Method::Grn),
            AnalyzeMethod::Sim(Method::Grmis),
        ],
        imputations: 10,
        chain_iterations: 50,
        vars: ImputedVars::DeltaUX,
        seed: config.seed,
        aux_intercept: true,
        scales: (1.0, 1.0),
    };
    let (rows, warnings) = run_analyze(&cohort, &sample, &opts)?;
    print!("{}", estimates_csv_string(&rows));
    for w in warnings {
        eprintln!("warning: {w}");
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}

//! One simulated two-phase dataset, four estimators: the full-truth
//! benchmark, Horvitz-Thompson, naive raking, and raking with
//! multiply-imputed auxiliaries.
//!
//! ```bash
//! cargo run --example two_phase_estimators
//! ```

use twophase_raking::calibration::{
    build_auxiliary_naive, ht_estimate, raking_estimate, true_estimate,
};
use twophase_raking::designs::{draw_srs, DesignSpec};
use twophase_raking::imputation::{grmi_auxiliary, MiOptions};
use twophase_raking::numeric::RngStream;
use twophase_raking::sim::{
    apply_error_scenario, calibrate_censoring_bound, generate_cohort, ErrorScenario, Method,
    MisclassModel, ScenarioConfig,
};

fn main() -> twophase_raking::Result<()> {
    let beta_x = 1.5_f64.ln();
    let config = ScenarioConfig {
        n_cohort: 2000,
        n_validation: 400,
        beta_x,
        beta_z: 0.5_f64.ln(),
        lambda0: 0.1,
        censoring_target: 0.5,
        scenario: ErrorScenario::DeltaOnly,
        misclass: MisclassModel::Main,
        error_free: false,
        design: DesignSpec::srs(400),
        methods: vec![Method::True],
        imputations: 10,
        chain_iterations: 50,
        replicates: 1,
        seed: 11,
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

    println!("true log hazard ratio for x: {beta_x:+.4}\n");
    let report = |name: &str, beta: f64, var: f64| {
        println!(
            "{name:22} beta_x = {beta:+.4}   SE = {:.4}",
            var.max(0.0).sqrt()
        );
    };

    let t = true_estimate(&truth)?;
    report("full-truth benchmark", t.fit.beta[0], t.covariance[(0, 0)]);

    let ht = ht_estimate(&cohort, &sample)?;
    report("Horvitz-Thompson", ht.fit.beta[0], ht.covariance[(0, 0)]);

    let naive_aux = build_auxiliary_naive(&cohort, true)?;
    let grn = raking_estimate(&cohort, &sample, &naive_aux, Some(&ht.fit.beta))?;
    report("raking (naive aux)", grn.beta[0], grn.covariance[(0, 0)]);

    let opts = MiOptions::default();
    let mi = grmi_auxiliary(
        &cohort,
        &sample,
        &opts,
        None,
        &mut RngStream::new(config.seed, 2).rng(),
    )?;
    let grmi = raking_estimate(&cohort, &sample, &mi.aux, Some(&ht.fit.beta))?;
    report("raking (imputed aux)", grmi.beta[0], grmi.covariance[(0, 0)]);

    println!(
        "\ncalibration residual (worst component): {:.2e}",
        grmi.calib_residual
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    );
    Ok(())
}

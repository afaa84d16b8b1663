//! Draw all four phase-two designs on one cohort and show the realized
//! inclusion probabilities.
//!
//! ```bash
//! cargo run --example sampling_designs
//! ```

use twophase_raking::calibration::naive_influence;
use twophase_raking::cohort::DesignDescriptor;
use twophase_raking::designs::{
    draw_case_control, draw_scc_balanced, draw_scc_neyman, draw_srs, quantile_cutpoints,
    DesignSpec,
};
use twophase_raking::numeric::RngStream;
use twophase_raking::sim::{
    apply_error_scenario, calibrate_censoring_bound, generate_cohort, ErrorScenario, Method,
    MisclassModel, ScenarioConfig,
};

fn main() -> twophase_raking::Result<()> {
    let config = ScenarioConfig {
        n_cohort: 4000,
        n_validation: 800,
        beta_x: 3.0_f64.ln(),
        beta_z: 0.5_f64.ln(),
        lambda0: 0.1,
        censoring_target: 0.9,
        scenario: ErrorScenario::DeltaTimeCovariate,
        misclass: MisclassModel::DesignCompare,
        error_free: false,
        design: DesignSpec::srs(800),
        methods: vec![Method::Ht],
        imputations: 1,
        chain_iterations: 1,
        replicates: 1,
        seed: 99,
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
    let n_cases = cohort.delta_star().sum() as usize;
    println!(
        "cohort: N = {}, error-prone cases = {n_cases}, target n = 800\n",
        cohort.n()
    );

    let srs = draw_srs(cohort.n(), 800, &mut rng)?;
    println!("SRS:   sampled {}, pi = {:.3}", srs.n_validated(), srs.pi[0]);

    let cc = draw_case_control(&cohort.delta_star().view(), Some(800), 1.0, &mut rng)?;
    if let DesignDescriptor::CaseControl {
        cases,
        controls_sampled,
        controls_available,
    } = &cc.design
    {
        println!(
            "CC:    all {cases} cases (pi = 1), {controls_sampled} of {controls_available} controls"
        );
    }

    let strat = cohort.x_star().column(0).to_owned();
    let cuts = quantile_cutpoints(&strat.view(), &[0.2, 0.5, 0.8])?;
    let sccb = draw_scc_balanced(
        &cohort.delta_star().view(),
        &strat.view(),
        &cuts,
        800,
        &mut rng,
    )?;
    println!("SCCB:  cutpoints {cuts:.3?}");
    if let DesignDescriptor::SccBalanced { strata } = &sccb.design {
        for s in strata {
            println!(
                "       case={} bin={} size={:4} sampled={:3} pi={:.3}",
                s.case_status, s.bin, s.size, s.sampled, s.pi
            );
        }
    }

    let (_, influence) = naive_influence(&cohort)?;
    let sccn = draw_scc_neyman(
        &cohort.delta_star().view(),
        &strat.view(),
        &cuts,
        &influence.dfbeta.column(0).to_owned().view(),
        800,
        &mut rng,
    )?;
    println!("SCCN:  allocations proportional to stratum size x influence spread");
    if let DesignDescriptor::SccNeyman { strata } = &sccn.design {
        for s in strata {
            println!(
                "       case={} bin={} size={:4} sampled={:3} pi={:.3}",
                s.case_status, s.bin, s.size, s.sampled, s.pi
            );
        }
    }
    Ok(())
}

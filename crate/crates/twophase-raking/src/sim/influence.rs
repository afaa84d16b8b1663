//! Paired true/error-prone influence exports for the diagnostic scatter
//! plots: how well does a linear working model in the error-prone influence
//! track the true influence, channel by channel?

use ndarray::{Array1, Array2};

use crate::cox::{self, InfluenceBasis};
use crate::error::Result;
use crate::numeric::RngStream;

use super::config::{ErrorScenario, MisclassModel, ScenarioConfig};
use super::generate::{apply_error_scenario, calibrate_censoring_bound, generate_cohort};

/// Which error channels are switched on for one diagnostic panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    CovariateOnly,
    TimeOnly,
    DeltaOnly,
    All,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::CovariateOnly => "x",
            Channel::TimeOnly => "u",
            Channel::DeltaOnly => "delta",
            Channel::All => "all",
        }
    }

    pub const ALL: [Channel; 4] = [
        Channel::CovariateOnly,
        Channel::TimeOnly,
        Channel::DeltaOnly,
        Channel::All,
    ];
}

/// One subject's paired influence values under one channel.
#[derive(Debug, Clone, Copy)]
pub struct InfluencePair {
    pub channel: Channel,
    pub subject: usize,
    pub true_x: f64,
    pub error_x: f64,
    pub true_z: f64,
    pub error_z: f64,
}

/// Configuration for the diagnostic export; defaults mirror the 90%
/// independent-censoring setting the scatter plots use.
#[derive(Debug, Clone)]
pub struct InfluenceDiagnosticConfig {
    pub n_cohort: usize,
    pub beta_x: f64,
    pub beta_z: f64,
    pub lambda0: f64,
    pub censoring_target: f64,
    pub error_free: bool,
    pub seed: u64,
}

impl Default for InfluenceDiagnosticConfig {
    fn default() -> Self {
        InfluenceDiagnosticConfig {
            n_cohort: 2000,
            beta_x: 1.5_f64.ln(),
            beta_z: 0.5_f64.ln(),
            lambda0: 0.1,
            censoring_target: 0.9,
            error_free: false,
            seed: 1,
        }
    }
}

fn full_cohort_influence(
    covs: &Array2<f64>,
    time: &Array1<f64>,
    event: &Array1<f64>,
    basis: InfluenceBasis,
) -> Result<Array2<f64>> {
    let weights = Array1::ones(covs.nrows());
    let fit = cox::fit_cox(&covs.view(), &time.view(), &event.view(), &weights.view(), None)?;
    Ok(cox::dfbeta(&fit, &covs.view(), &time.view(), &event.view(), &weights.view(), basis)?
        .dfbeta)
}

/// Generate one cohort, corrupt it channel by channel, and export the
/// paired influence rows for all four panels.
pub fn export_influence_pairs(config: &InfluenceDiagnosticConfig) -> Result<Vec<InfluencePair>> {
    let scenario_config = ScenarioConfig {
        n_cohort: config.n_cohort,
        n_validation: config.n_cohort,
        beta_x: config.beta_x,
        beta_z: config.beta_z,
        lambda0: config.lambda0,
        censoring_target: config.censoring_target,
        scenario: ErrorScenario::DeltaTimeCovariate,
        misclass: MisclassModel::Main,
        error_free: config.error_free,
        design: crate::designs::DesignSpec::srs(config.n_cohort),
        methods: vec![super::config::Method::True],
        imputations: 1,
        chain_iterations: 1,
        replicates: 1,
        seed: config.seed,
        aux_intercept: true,
        cell_id: 0,
    };
    let theta_c = calibrate_censoring_bound(
        config.beta_x,
        config.beta_z,
        config.lambda0,
        config.censoring_target,
        RngStream::new(config.seed, 1),
    )?;
    let mut gen_rng = RngStream::new(config.seed, 2).rng();
    let truth = generate_cohort(&scenario_config, theta_c, &mut gen_rng)?;
    let coefs = MisclassModel::Main.coefficients(config.beta_x);
    let mut err_rng = RngStream::new(config.seed, 3).rng();
    let corrupted = apply_error_scenario(
        &truth,
        ErrorScenario::DeltaTimeCovariate,
        &coefs,
        config.error_free,
        &mut err_rng,
    )?;

    let (true_covs, true_time, true_event) = truth.full_truth()?;
    let base = full_cohort_influence(&true_covs, &true_time, &true_event, InfluenceBasis::TrueData)?;

    let n = truth.n();
    let p = truth.p();
    let mut pairs = Vec::with_capacity(4 * n);
    for channel in Channel::ALL {
        let mut covs = true_covs.clone();
        let mut time = true_time.clone();
        let mut event = true_event.clone();
        match channel {
            Channel::CovariateOnly => {
                covs.slice_mut(ndarray::s![.., ..p]).assign(corrupted.x_star());
            }
            Channel::TimeOnly => {
                time = corrupted.u_star().clone();
            }
            Channel::DeltaOnly => {
                event = corrupted.delta_star().clone();
            }
            Channel::All => {
                covs.slice_mut(ndarray::s![.., ..p]).assign(corrupted.x_star());
                time = corrupted.u_star().clone();
                event = corrupted.delta_star().clone();
            }
        }
        let err = full_cohort_influence(&covs, &time, &event, InfluenceBasis::ErrorProne)?;
        for i in 0..n {
            pairs.push(InfluencePair {
                channel,
                subject: i,
                true_x: base[(i, 0)],
                error_x: err[(i, 0)],
                true_z: base[(i, p)],
                error_z: err[(i, p)],
            });
        }
    }
    Ok(pairs)
}

/// Squared Pearson correlation of the (true, error-prone) exposure-influence
/// pairs for one channel.
pub fn linear_r2(pairs: &[InfluencePair], channel: Channel) -> f64 {
    let xs: Vec<f64> = pairs
        .iter()
        .filter(|p| p.channel == channel)
        .map(|p| p.error_x)
        .collect();
    let ys: Vec<f64> = pairs
        .iter()
        .filter(|p| p.channel == channel)
        .map(|p| p.true_x)
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let r = sxy / (sxx * syy).sqrt();
    r * r
}

//! Cohort generation and measurement-error application.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::numeric::{draw_bivariate_normal, expit, RngStream};

use super::config::{ErrorScenario, MisclassCoefficients, ScenarioConfig};

pub const COVARIATE_MEANS: [f64; 2] = [0.0, 2.0];
pub const COVARIATE_VARS: [f64; 2] = [1.0, 1.0];
pub const COVARIATE_RHO: f64 = 0.5;
pub const ERROR_VARS: [f64; 2] = [0.5, 0.5];
pub const ERROR_RHO: f64 = 0.5;

/// Monte Carlo draws behind the censoring-bound calibration.
pub const CALIBRATION_DRAWS: usize = 1_000_000;
pub const CALIBRATION_TOL: f64 = 0.002;

/// Find the uniform censoring upper bound hitting the target censoring rate
/// by bisection on a common set of Monte Carlo draws.
///
/// The same `(T_i, u_i)` draws are reused at every candidate bound, making
/// the empirical rate exactly monotone in the bound and the search
/// deterministic given the stream.
pub fn calibrate_censoring_bound(
    beta_x: f64,
    beta_z: f64,
    lambda0: f64,
    target: f64,
    stream: RngStream,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::parameter("censoring target must lie in (0, 1)"));
    }
    let mut rng = stream.rng();
    let mut t = Vec::with_capacity(CALIBRATION_DRAWS);
    let mut u = Vec::with_capacity(CALIBRATION_DRAWS);
    for _ in 0..CALIBRATION_DRAWS {
        let [x, z] = draw_bivariate_normal(COVARIATE_MEANS, COVARIATE_VARS, COVARIATE_RHO, &mut rng)?;
        let rate = lambda0 * (beta_x * x + beta_z * z).exp();
        let e: f64 = rng.random::<f64>();
        t.push(-e.max(f64::MIN_POSITIVE).ln() / rate);
        u.push(rng.random::<f64>());
    }
    let rate_at = |bound: f64| -> f64 {
        let censored = t
            .iter()
            .zip(u.iter())
            .filter(|(&ti, &ui)| ti > bound * ui)
            .count();
        censored as f64 / CALIBRATION_DRAWS as f64
    };

    let mut hi = 1.0;
    let mut guard = 0;
    while rate_at(hi) > target {
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(Error::parameter(format!(
                "censoring target {target} unreachable"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate_at(mid);
        if (r - target).abs() < CALIBRATION_TOL {
            return Ok(mid);
        }
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generate a truth-only cohort: covariates, exponential event times, and
/// uniform censoring on `[0, theta_c]`. The error-prone columns start equal
/// to the truth; [`apply_error_scenario`] overwrites them.
pub fn generate_cohort(
    config: &ScenarioConfig,
    theta_c: f64,
    rng: &mut impl Rng,
) -> Result<Cohort> {
    let n = config.n_cohort;
    let mut x = Array2::zeros((n, 1));
    let mut z = Array2::zeros((n, 1));
    let mut u = Array1::zeros(n);
    let mut delta = Array1::zeros(n);
    for i in 0..n {
        let [xi, zi] =
            draw_bivariate_normal(COVARIATE_MEANS, COVARIATE_VARS, COVARIATE_RHO, rng)?;
        let rate = config.lambda0 * (config.beta_x * xi + config.beta_z * zi).exp();
        let e: f64 = rng.random::<f64>();
        let t = -e.max(f64::MIN_POSITIVE).ln() / rate;
        let c = theta_c * rng.random::<f64>();
        x[(i, 0)] = xi;
        z[(i, 0)] = zi;
        u[i] = t.min(c);
        delta[i] = if t <= c { 1.0 } else { 0.0 };
    }
    Cohort::new_simulated(
        x.clone(),
        z,
        u.clone(),
        delta.clone(),
        x,
        u,
        delta,
    )
}

/// Overwrite the error-prone columns according to the scenario.
///
/// The event indicator is regenerated from a logistic model in the truth;
/// scenarios with time error add `3σ_ν - 0.2X - 1.05Z + ν`, and the
/// covariate scenario adds `0.2 + X - 0.1Z - 0.4Δ + 0.25U + ε` with
/// `(ε, ν)` bivariate normal. Negative error-prone times are reflected
/// across zero so the observed follow-up stays valid.
pub fn apply_error_scenario(
    cohort: &Cohort,
    scenario: ErrorScenario,
    coefs: &MisclassCoefficients,
    error_free: bool,
    rng: &mut impl Rng,
) -> Result<Cohort> {
    let (truth_x, truth_u, truth_d) = cohort.full_truth()?;
    let n = cohort.n();
    let x = truth_x.slice(ndarray::s![.., ..cohort.p()]).to_owned();
    let z = cohort.z().clone();

    if error_free {
        return Cohort::new_simulated(
            x.clone(),
            z,
            truth_u.clone(),
            truth_d.clone(),
            x,
            truth_u,
            truth_d,
        );
    }

    let mut delta_star = Array1::zeros(n);
    let mut u_star = truth_u.clone();
    let mut x_star = x.clone();
    let sigma_nu = ERROR_VARS[1].sqrt();

    for i in 0..n {
        let (xi, zi, ui, di) = (x[(i, 0)], z[(i, 0)], truth_u[i], truth_d[i]);
        let eta = coefs.intercept
            + coefs.delta * di
            + coefs.x * xi
            + coefs.u * ui
            + coefs.z * zi
            + coefs.delta_x * di * xi
            + coefs.delta_u * di * ui
            + coefs.delta_z * di * zi;
        delta_star[i] = if rng.random::<f64>() < expit(eta) { 1.0 } else { 0.0 };

        if scenario.has_time_error() {
            let (eps, nu) = if scenario.has_covariate_error() {
                let [e, v] = draw_bivariate_normal([0.0, 0.0], ERROR_VARS, ERROR_RHO, rng)?;
                (e, v)
            } else {
                let v: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_nu;
                (0.0, v)
            };
            let mut us = ui + sigma_nu * 3.0 - 0.2 * xi - 1.05 * zi + nu;
            if us < 0.0 {
                us = -us;
            }
            u_star[i] = us;
            if scenario.has_covariate_error() {
                x_star[(i, 0)] = 0.2 + xi - 0.1 * zi - 0.4 * di + 0.25 * ui + eps;
            }
        }
    }

    Cohort::new_simulated(x_star, z, u_star, delta_star, x, truth_u, truth_d)
}

/// Sensitivity, specificity, and predictive values of the error-prone event
/// indicator. Metrics with a zero denominator come back as `None`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MisclassMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn misclassification_metrics(
    delta_true: &ArrayView1<f64>,
    delta_star: &ArrayView1<f64>,
) -> Result<MisclassMetrics> {
    if delta_true.len() != delta_star.len() {
        return Err(Error::dimension("indicator lengths differ"));
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &s) in delta_true.iter().zip(delta_star.iter()) {
        if d != 0.0 && d != 1.0 || s != 0.0 && s != 1.0 {
            return Err(Error::parameter("indicators must be binary"));
        }
        match (d == 1.0, s == 1.0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fne += 1,
        }
    }
    let frac = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MisclassMetrics {
        sensitivity: frac(tp, tp + fne),
        specificity: frac(tn, tn + fp),
        ppv: frac(tp, tp + fp),
        npv: frac(tn, tn + fne),
    })
}

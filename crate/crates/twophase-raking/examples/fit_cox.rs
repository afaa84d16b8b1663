//! Fit a weighted Cox proportional-hazards model and print the estimates.
//!
//! ```bash
//! cargo run --example fit_cox
//! ```

use ndarray::{Array1, Array2};
use rand::Rng;
use twophase_raking::cox::{dfbeta, fit_cox, robust_covariance, InfluenceBasis};
use twophase_raking::numeric::RngStream;

fn main() -> twophase_raking::Result<()> {
    let n = 500;
    let beta_true: [f64; 2] = [0.5, -0.3];
    let mut rng = RngStream::new(2024, 0).rng();

    let covs = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.5..1.5));
    let mut time = Array1::zeros(n);
    let mut event = Array1::zeros(n);
    for i in 0..n {
        let rate = 0.2 * (beta_true[0] * covs[(i, 0)] + beta_true[1] * covs[(i, 1)]).exp();
        let t = -f64::ln(rng.random::<f64>().max(1e-300)) / rate;
        let c = rng.random_range(0.0..12.0);
        time[i] = t.min(c);
        event[i] = if t <= c { 1.0 } else { 0.0 };
    }

    let weights = Array1::ones(n);
    let fit = fit_cox(&covs.view(), &time.view(), &event.view(), &weights.view(), None)?;
    let influence = dfbeta(
        &fit,
        &covs.view(),
        &time.view(),
        &event.view(),
        &weights.view(),
        InfluenceBasis::TrueData,
    )?;
    let cov = robust_covariance(&influence);

    println!(
        "converged in {} iterations (events: {})",
        fit.iterations,
        event.sum() as usize
    );
    for (j, name) in ["x1", "x2"].iter().enumerate() {
        let se = cov[(j, j)].sqrt();
        println!(
            "{name}: beta = {:+.4} (true {:+.1}), robust SE = {:.4}, HR = {:.3}",
            fit.beta[j],
            beta_true[j],
            se,
            fit.beta[j].exp()
        );
    }
    Ok(())
}

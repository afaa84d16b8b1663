//! Seedable, stream-splittable random variate generation.
//!
//! Every stochastic routine in the crate draws from an [`RngStream`], a
//! `(seed, stream_id)` pair mapped onto a counter-based ChaCha generator.
//! Streams with the same pair replay the same sequence; distinct stream ids
//! select disjoint cipher streams, so parallel workers never share state.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Identifier for an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Instantiate the generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draw one sample from a bivariate normal with the given marginal means,
/// variances, and correlation.
pub fn draw_bivariate_normal(
    mean: [f64; 2],
    var: [f64; 2],
    rho: f64,
    rng: &mut impl Rng,
) -> Result<[f64; 2]> {
    if !(var[0] > 0.0 && var[1] > 0.0) {
        return Err(Error::parameter("bivariate normal requires positive variances"));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::parameter("bivariate normal requires |rho| < 1"));
    }
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    let s0 = var[0].sqrt();
    let s1 = var[1].sqrt();
    // Cholesky factor of the 2x2 covariance.
    let x = mean[0] + s0 * z0;
    let y = mean[1] + s1 * (rho * z0 + (1.0 - rho * rho).sqrt() * z1);
    Ok([x, y])
}

/// Draw `scale * dof / X` where `X ~ chi-squared(dof)`.
pub fn draw_scaled_inverse_chisq(scale: f64, dof: u64, rng: &mut impl Rng) -> Result<f64> {
    if dof == 0 {
        return Err(Error::parameter("inverse chi-squared requires dof >= 1"));
    }
    if !(scale > 0.0) {
        return Err(Error::parameter("inverse chi-squared requires scale > 0"));
    }
    let chi = ChiSquared::new(dof as f64)
        .map_err(|e| Error::parameter(format!("chi-squared: {e}")))?;
    let x = chi.sample(rng);
    Ok(scale * dof as f64 / x)
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

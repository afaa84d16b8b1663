//! Working regression models for imputation: logistic fits by IRLS, linear
//! fits by (weighted) least squares, and posterior coefficient draws with a
//! scaled-inverse-chi-squared residual scale.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::{draw_scaled_inverse_chisq, factor_spd, invert_spd};

pub const IRLS_TOL: f64 = 1e-10;
pub const IRLS_MAX_ITERATIONS: usize = 100;
/// Linear predictors beyond this magnitude at convergence flag separation.
pub const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlmKind {
    Logistic,
    Linear,
}

/// A fitted working model.
///
/// `tau2_hat` is the mean squared working residual (for linear fits, the
/// residual sum of squares over `n - p`), the scale entering the posterior
/// draw `τ²* = τ̂² (n-p)/χ²_{n-p}`.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub kind: GlmKind,
    pub coefficients: Array1<f64>,
    /// Unweighted `(V'V)^{-1}` of the fitted design rows.
    pub xtx_inverse: Array2<f64>,
    pub tau2_hat: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub separation: bool,
    pub ipw: Option<Array1<f64>>,
}

/// One posterior draw: coefficients plus the residual-scale draw that
/// produced them (reused when imputing continuous responses).
#[derive(Debug, Clone)]
pub struct PosteriorDraw {
    pub coefficients: Array1<f64>,
    pub tau2: f64,
}

fn normalized_weights(n: usize, ipw: Option<&ArrayView1<f64>>) -> Result<Array1<f64>> {
    match ipw {
        None => Ok(Array1::ones(n)),
        Some(w) => {
            if w.len() != n {
                return Err(Error::dimension("weight length mismatch"));
            }
            let mut sum = 0.0;
            for &wi in w.iter() {
                if !(wi > 0.0) || !wi.is_finite() {
                    return Err(Error::parameter("IPW weights must be finite and positive"));
                }
                sum += wi;
            }
            Ok(w.mapv(|wi| wi * n as f64 / sum))
        }
    }
}

fn weighted_normal_equations(
    design: &ArrayView2<f64>,
    w: &Array1<f64>,
    rhs: &Array1<f64>,
) -> Result<Array1<f64>> {
    let k = design.ncols();
    let mut xtx = Array2::<f64>::zeros((k, k));
    let mut xty = Array1::<f64>::zeros(k);
    for (row, r) in design.rows().into_iter().enumerate() {
        let r = r.as_slice().expect("design rows are contiguous");
        let wi = w[row];
        for a in 0..k {
            let xa = wi * r[a];
            xty[a] += xa * rhs[row];
            for b in a..k {
                xtx[(a, b)] += xa * r[b];
            }
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            xtx[(b, a)] = xtx[(a, b)];
        }
    }
    Ok(factor_spd(&xtx.view())?.solve(&xty.view()))
}

/// Fit a working regression model on the given rows.
pub fn fit_glm(
    design: &ArrayView2<f64>,
    response: &ArrayView1<f64>,
    kind: GlmKind,
    ipw: Option<&ArrayView1<f64>>,
) -> Result<GlmFit> {
    fit_glm_warm(design, response, kind, ipw, None)
}

/// [`fit_glm`] with a warm-start for the logistic IRLS loop; successive
/// chained-imputation refits converge in a couple of iterations from the
/// previous round's coefficients.
pub fn fit_glm_warm(
    design: &ArrayView2<f64>,
    response: &ArrayView1<f64>,
    kind: GlmKind,
    ipw: Option<&ArrayView1<f64>>,
    init: Option<&Array1<f64>>,
) -> Result<GlmFit> {
    let n = design.nrows();
    let k = design.ncols();
    if response.len() != n {
        return Err(Error::dimension("design and response disagree"));
    }
    if n <= k {
        return Err(Error::parameter(format!(
            "need more observations ({n}) than parameters ({k})"
        )));
    }
    // One Gram pass backs both the rank check and (V'V)^{-1}.
    let gram = crate::numeric::gram_matrix(design);
    crate::numeric::check_gram_full_rank(&gram, 1e-9)?;
    let xtx_inverse = invert_spd(&gram.view())?;
    let w = normalized_weights(n, ipw)?;

    match kind {
        GlmKind::Linear => {
            let beta = weighted_normal_equations(design, &w, &response.to_owned())?;
            let fitted = design.dot(&beta);
            let mut rss = 0.0;
            let mut response_scale = 0.0;
            for i in 0..n {
                let e = response[i] - fitted[i];
                rss += w[i] * e * e;
                response_scale += w[i] * response[i] * response[i];
            }
            // An exact fit leaves only round-off in the residuals; treat it
            // as a degenerate (zero) scale.
            if rss <= response_scale * 1e-28 {
                rss = 0.0;
            }
            Ok(GlmFit {
                kind,
                coefficients: beta,
                xtx_inverse,
                tau2_hat: rss / (n - k) as f64,
                n_obs: n,
                n_params: k,
                separation: false,
                ipw: ipw.map(|v| v.to_owned()),
            })
        }
        GlmKind::Logistic => {
            for &y in response.iter() {
                if y != 0.0 && y != 1.0 {
                    return Err(Error::parameter("logistic response must be 0/1"));
                }
            }
            // One pass per evaluation: fitted probabilities and the
            // log-likelihood share the same exponential.
            let eval = |eta: &Array1<f64>| -> (f64, Array1<f64>) {
                let mut ll = 0.0;
                let mut p = Array1::<f64>::zeros(n);
                for i in 0..n {
                    let e = eta[i];
                    let (pi, log1pe) = if e >= 0.0 {
                        let ex = (-e).exp();
                        (1.0 / (1.0 + ex), e + ex.ln_1p())
                    } else {
                        let ex = e.exp();
                        (ex / (1.0 + ex), ex.ln_1p())
                    };
                    ll += w[i] * (response[i] * e - log1pe);
                    p[i] = pi;
                }
                (ll, p)
            };
            let mut beta = match init {
                Some(b) if b.len() == k => b.clone(),
                _ => Array1::<f64>::zeros(k),
            };
            let mut eta = design.dot(&beta);
            let (mut ll, mut prob) = eval(&eta);
            let mut converged = false;
            for _ in 0..IRLS_MAX_ITERATIONS {
                let mut irls_w = Array1::<f64>::zeros(n);
                let mut working = Array1::<f64>::zeros(n);
                for i in 0..n {
                    let p = prob[i].clamp(1e-10, 1.0 - 1e-10);
                    let var = p * (1.0 - p);
                    irls_w[i] = w[i] * var;
                    working[i] = eta[i] + (response[i] - p) / var;
                }
                let next = weighted_normal_equations(design, &irls_w, &working)?;
                // Step-halve towards the previous iterate when the
                // likelihood fails to improve (IRLS can oscillate on
                // near-separated data).
                let mut cand = next;
                let mut accepted = false;
                let noise = 1e-11 * (1.0 + ll.abs());
                for _ in 0..=10 {
                    let cand_eta = design.dot(&cand);
                    let (cand_ll, cand_p) = eval(&cand_eta);
                    if cand_ll.is_finite() && cand_ll >= ll - noise {
                        let delta = (&cand - &beta)
                            .iter()
                            .fold(0.0_f64, |m, v| m.max(v.abs()));
                        let ll_change = (cand_ll - ll).abs();
                        beta = cand;
                        eta = cand_eta;
                        ll = cand_ll;
                        prob = cand_p;
                        accepted = true;
                        if delta < IRLS_TOL || ll_change < IRLS_TOL * (1.0 + ll.abs()) {
                            converged = true;
                        }
                        break;
                    }
                    cand = (&cand + &beta) * 0.5;
                }
                if !accepted {
                    // The concave likelihood cannot be improved in the
                    // Newton direction: we are at its numerical maximum.
                    converged = true;
                }
                if converged {
                    break;
                }
            }
            let separation = eta.iter().any(|&e| e.abs() > SEPARATION_LIMIT);
            if !converged && !separation {
                return Err(Error::Estimation(
                    "IRLS did not converge without evidence of separation".to_string(),
                ));
            }
            let mut ssw = 0.0;
            for i in 0..n {
                let p = prob[i].clamp(1e-10, 1.0 - 1e-10);
                let var = p * (1.0 - p);
                let e = (response[i] - p) / var;
                ssw += w[i] * e * e;
            }
            Ok(GlmFit {
                kind,
                coefficients: beta,
                xtx_inverse,
                tau2_hat: ssw / (n - k) as f64,
                n_obs: n,
                n_params: k,
                separation,
                ipw: ipw.map(|v| v.to_owned()),
            })
        }
    }
}

/// Draw coefficients from the approximate posterior
/// `N(β̂, τ²* (V'V)^{-1})` with `τ²* = τ̂² (n-p)/χ²_{n-p}`.
pub fn posterior_draw(fit: &GlmFit, rng: &mut impl Rng) -> Result<PosteriorDraw> {
    if fit.n_obs <= fit.n_params {
        return Err(Error::parameter("posterior draw requires n > p"));
    }
    if fit.tau2_hat == 0.0 {
        return Ok(PosteriorDraw {
            coefficients: fit.coefficients.clone(),
            tau2: 0.0,
        });
    }
    let dof = (fit.n_obs - fit.n_params) as u64;
    let tau2 = draw_scaled_inverse_chisq(fit.tau2_hat, dof, rng)?;
    let k = fit.n_params;
    let factor = factor_spd(&fit.xtx_inverse.view())?;
    let z = Array1::from_shape_fn(k, |_| rng.sample::<f64, _>(StandardNormal));
    let noise = factor.lower().dot(&z) * tau2.sqrt();
    Ok(PosteriorDraw {
        coefficients: &fit.coefficients + &noise,
        tau2,
    })
}

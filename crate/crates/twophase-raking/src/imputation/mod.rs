//! Multiple-imputation constructions of raking auxiliary variables.
//!
//! Three sources, in increasing order of machinery:
//!
//! - [`grmi_auxiliary`]: impute the event indicator from a logistic working
//!   model fitted on the validated subjects, refit the full-cohort Cox model
//!   per imputation, and average the delta-beta influence over imputations;
//! - [`fcsmi_auxiliary`]: chained (fully conditional) imputation that cycles
//!   through the event indicator, the error-prone covariate, and the
//!   follow-up-time error, refitting each univariate model on the validated
//!   subjects against the current imputed predictors;
//! - [`if_calibration_auxiliary`]: regress the validated-data influence on
//!   the imputed influence (plus imputed data and products) per coefficient
//!   and use fitted values as the auxiliary.
//!
//! Imputed values are drawn for every phase-one subject, validated ones
//! included; validated subjects contribute their true responses only through
//! the working-model fits.

mod glm;

pub use glm::{fit_glm, fit_glm_warm, posterior_draw, GlmFit, GlmKind, PosteriorDraw};

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::calibration::{ht_estimate, AuxiliaryMatrix, AuxiliarySource};
use crate::cohort::{
    build_design_matrix, Cohort, ImputedOverlay, ModelSpec, Response, Role, TwoPhaseSample,
};
use crate::cox::{self, CoxFit, InfluenceBasis};
use crate::error::{Error, Result};
use crate::numeric::expit;
use rand_distr::StandardNormal;

/// Which error-prone variables the chained imputation cycles over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputedVars {
    DeltaOnly,
    DeltaU,
    DeltaUX,
}

impl ImputedVars {
    fn has_u(self) -> bool {
        matches!(self, ImputedVars::DeltaU | ImputedVars::DeltaUX)
    }

    fn has_x(self) -> bool {
        matches!(self, ImputedVars::DeltaUX)
    }
}

/// Options shared by the imputation-based auxiliary builders.
#[derive(Debug, Clone, Copy)]
pub struct MiOptions {
    /// Number of imputations M.
    pub imputations: usize,
    /// Chained-update iterations L per imputation.
    pub chain_iterations: usize,
    /// Include all two-way interactions in the working models.
    pub interactions: bool,
    /// Prepend a constant-one auxiliary column when assembling the matrix.
    pub aux_intercept: bool,
}

impl Default for MiOptions {
    fn default() -> Self {
        MiOptions {
            imputations: 10,
            chain_iterations: 50,
            interactions: false,
            aux_intercept: true,
        }
    }
}

/// One imputation's overlay, refitted coefficients, and influence rows.
#[derive(Debug, Clone)]
pub struct PerImputation {
    pub overlay: ImputedOverlay,
    pub beta: Array1<f64>,
    pub influence: Array2<f64>,
}

/// Averaged auxiliary matrix plus the per-imputation pieces the
/// model-calibration step consumes.
#[derive(Debug, Clone)]
pub struct MiAuxiliary {
    pub aux: AuxiliaryMatrix,
    pub per_m: Vec<PerImputation>,
    pub vars: ImputedVars,
    /// Count of working-model fits that flagged separation.
    pub separation_flags: usize,
}

fn delta_model_spec(interactions: bool) -> ModelSpec {
    ModelSpec::main_effects(
        Response::Delta,
        vec![Role::DeltaStar, Role::XStar, Role::UStar, Role::Z],
    )
    .with_interactions(interactions)
}

fn subset_rows(all: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), all.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&all.row(i));
    }
    out
}

fn check_delta_classes(response: &Array1<f64>) -> Result<()> {
    let events = response.iter().filter(|&&d| d == 1.0).count();
    if events == 0 || events == response.len() {
        return Err(Error::Estimation(
            "validated event indicator has a single class; cannot fit the imputation model"
                .to_string(),
        ));
    }
    Ok(())
}

fn bernoulli_impute(
    design_all: &Array2<f64>,
    coefficients: &Array1<f64>,
    rng: &mut impl Rng,
) -> Array1<f64> {
    let eta = design_all.dot(coefficients);
    Array1::from_shape_fn(eta.len(), |i| {
        if rng.random::<f64>() < expit(eta[i]) {
            1.0
        } else {
            0.0
        }
    })
}

fn normal_impute(
    design_all: &Array2<f64>,
    coefficients: &Array1<f64>,
    tau2: f64,
    rng: &mut impl Rng,
) -> Array1<f64> {
    let mean = design_all.dot(coefficients);
    let sd = tau2.sqrt();
    Array1::from_shape_fn(mean.len(), |i| {
        mean[i] + sd * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Full-cohort Cox fit on an imputed overlay; returns the fit and its
/// delta-beta influence rows.
fn imputed_cox_influence(
    cohort: &Cohort,
    overlay: &ImputedOverlay,
    warm: Option<&Array1<f64>>,
) -> Result<(CoxFit, Array2<f64>)> {
    let n = cohort.n();
    let p = cohort.p();
    let q = cohort.q();
    let mut covs = Array2::zeros((n, p + q));
    match &overlay.x_hat {
        Some(xh) => covs.slice_mut(ndarray::s![.., ..p]).assign(xh),
        None => covs.slice_mut(ndarray::s![.., ..p]).assign(cohort.x_star()),
    }
    covs.slice_mut(ndarray::s![.., p..]).assign(cohort.z());
    let time = match &overlay.u_hat {
        Some(uh) => uh.clone(),
        None => cohort.u_star().clone(),
    };
    if overlay.u_hat.is_some() && time.iter().all(|&t| t <= 0.0) {
        return Err(Error::Estimation(
            "all imputed follow-up times are non-positive".to_string(),
        ));
    }
    let weights = Array1::ones(n);
    let fit = cox::fit_cox(
        &covs.view(),
        &time.view(),
        &overlay.delta_hat.view(),
        &weights.view(),
        warm,
    )?;
    let influence = cox::dfbeta(
        &fit,
        &covs.view(),
        &time.view(),
        &overlay.delta_hat.view(),
        &weights.view(),
        InfluenceBasis::Imputed(overlay.m_index),
    )?;
    Ok((fit, influence.dfbeta))
}

/// Auxiliaries from multiple imputation of the event indicator.
///
/// The logistic working model `Δ | Δ*, X*, U*, Z` is fitted once on the
/// validated subjects (unweighted); each imputation draws coefficients from
/// its posterior, imputes `Δ̂` for all `N` subjects, refits the full-cohort
/// Cox model on `(X*, Z, U*, Δ̂)`, and contributes its delta-beta rows to
/// the average.
pub fn grmi_auxiliary(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    opts: &MiOptions,
    warm: Option<&Array1<f64>>,
    rng: &mut impl Rng,
) -> Result<MiAuxiliary> {
    if opts.imputations == 0 {
        return Err(Error::parameter("at least one imputation required"));
    }
    let idx = sample.validated_indices();
    let spec = delta_model_spec(opts.interactions);
    let design_all = build_design_matrix(cohort, &spec, None)?;
    let design_val = subset_rows(&design_all, &idx);
    let response = cohort.validated_response(sample, Response::Delta)?;
    check_delta_classes(&response)?;
    let fit = fit_glm(
        &design_val.view(),
        &response.view(),
        GlmKind::Logistic,
        None,
    )?;
    let separation_flags = fit.separation as usize;

    let n = cohort.n();
    let k = cohort.p() + cohort.q();
    let mut acc = Array2::<f64>::zeros((n, k));
    let mut per_m = Vec::with_capacity(opts.imputations);
    let mut warm_beta = warm.cloned();
    for m in 0..opts.imputations {
        let mut delta_hat = None;
        for attempt in 0..2 {
            let draw = posterior_draw(&fit, rng)?;
            let cand = bernoulli_impute(&design_all, &draw.coefficients, rng);
            if cand.iter().any(|&d| d == 1.0) {
                delta_hat = Some(cand);
                break;
            }
            if attempt == 1 {
                return Err(Error::Estimation(format!(
                    "imputation {m} produced no events twice"
                )));
            }
        }
        let overlay = ImputedOverlay {
            delta_hat: delta_hat.unwrap(),
            x_hat: None,
            u_hat: None,
            m_index: m,
        };
        let (cox_fit, influence) = imputed_cox_influence(cohort, &overlay, warm_beta.as_ref())?;
        warm_beta = Some(cox_fit.beta.clone());
        acc += &influence;
        per_m.push(PerImputation {
            overlay,
            beta: cox_fit.beta,
            influence,
        });
    }
    acc /= opts.imputations as f64;
    let aux = AuxiliaryMatrix::from_influence(acc, AuxiliarySource::Grmi, opts.aux_intercept)?;
    Ok(MiAuxiliary {
        aux,
        per_m,
        vars: ImputedVars::DeltaOnly,
        separation_flags,
    })
}

/// Auxiliaries from fully conditional (chained) multiple imputation.
///
/// Per imputation: initial draws come from working models fitted on the
/// observed error-prone predictors, then `L` chained rounds each refit the
/// event-indicator, covariate, and time-error models on the validated
/// subjects against the current imputed predictors (true responses, imputed
/// predictors), draw coefficients, and re-impute for all `N` subjects. The
/// final overlay feeds a full-cohort Cox fit whose delta-betas are averaged
/// over imputations.
pub fn fcsmi_auxiliary(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    vars: ImputedVars,
    opts: &MiOptions,
    warm: Option<&Array1<f64>>,
    rng: &mut impl Rng,
) -> Result<MiAuxiliary> {
    if opts.imputations == 0 {
        return Err(Error::parameter("at least one imputation required"));
    }
    let idx = sample.validated_indices();
    let interactions = opts.interactions;

    // Initial working models on the observed error-prone predictors.
    let spec_full = delta_model_spec(interactions);
    let design_full_all = build_design_matrix(cohort, &spec_full, None)?;
    let design_full_val = subset_rows(&design_full_all, &idx);

    let delta_response = cohort.validated_response(sample, Response::Delta)?;
    check_delta_classes(&delta_response)?;
    let init_delta = fit_glm(
        &design_full_val.view(),
        &delta_response.view(),
        GlmKind::Logistic,
        None,
    )?;

    let x_response;
    let init_x = if vars.has_x() {
        x_response = cohort.validated_response(sample, Response::X)?;
        Some(fit_glm(
            &design_full_val.view(),
            &x_response.view(),
            GlmKind::Linear,
            None,
        )?)
    } else {
        None
    };

    let spec_no_u = ModelSpec::main_effects(
        Response::ROffset,
        vec![Role::DeltaStar, Role::XStar, Role::Z],
    )
    .with_interactions(interactions);
    let design_no_u_all = build_design_matrix(cohort, &spec_no_u, None)?;
    let r_response;
    let init_r = if vars.has_u() {
        r_response = cohort.validated_response(sample, Response::ROffset)?;
        let design_no_u_val = subset_rows(&design_no_u_all, &idx);
        Some(fit_glm(
            &design_no_u_val.view(),
            &r_response.view(),
            GlmKind::Linear,
            None,
        )?)
    } else {
        None
    };

    let mut separation_flags = init_delta.separation as usize;

    // Role sets for the chained refits.
    let x_role = if vars.has_x() { Role::XHat } else { Role::XStar };
    let u_role = if vars.has_u() { Role::UHat } else { Role::UStar };
    let spec_delta_chain = ModelSpec::main_effects(
        Response::Delta,
        vec![Role::DeltaStar, x_role, u_role, Role::Z],
    )
    .with_interactions(interactions);
    let spec_x_chain = ModelSpec::main_effects(
        Response::X,
        vec![Role::DeltaHat, Role::XStar, u_role, Role::Z],
    )
    .with_interactions(interactions);
    let spec_r_chain =
        ModelSpec::main_effects(Response::ROffset, vec![Role::DeltaHat, x_role, Role::Z])
            .with_interactions(interactions);

    let n = cohort.n();
    let k = cohort.p() + cohort.q();
    let mut acc = Array2::<f64>::zeros((n, k));
    let mut per_m = Vec::with_capacity(opts.imputations);
    let mut warm_beta = warm.cloned();
    // Successive chained refits start from the previous round's
    // coefficients; the fits are convex so only the iteration count changes.
    let mut warm_eta: Option<Array1<f64>> = None;

    for m in 0..opts.imputations {
        let mut result = None;
        for attempt in 0..2 {
            // Initial draws and imputations for all phase-one subjects.
            let d0 = posterior_draw(&init_delta, rng)?;
            let mut overlay = ImputedOverlay {
                delta_hat: bernoulli_impute(&design_full_all, &d0.coefficients, rng),
                x_hat: None,
                u_hat: None,
                m_index: m,
            };
            if let Some(fx) = &init_x {
                let dx = posterior_draw(fx, rng)?;
                let col = normal_impute(&design_full_all, &dx.coefficients, dx.tau2, rng);
                let mut xh = Array2::zeros((n, cohort.p()));
                xh.column_mut(0).assign(&col);
                overlay.x_hat = Some(xh);
            }
            if let Some(fr) = &init_r {
                let dr = posterior_draw(fr, rng)?;
                let r_hat = normal_impute(&design_no_u_all, &dr.coefficients, dr.tau2, rng);
                overlay.u_hat = Some(cohort.u_star() - &r_hat);
            }

            for _ in 0..opts.chain_iterations {
                // Event indicator given current imputed predictors.
                let design_all = build_design_matrix(cohort, &spec_delta_chain, Some(&overlay))?;
                let design_val = subset_rows(&design_all, &idx);
                let fit_d = glm::fit_glm_warm(
                    &design_val.view(),
                    &delta_response.view(),
                    GlmKind::Logistic,
                    None,
                    warm_eta.as_ref(),
                )?;
                warm_eta = Some(fit_d.coefficients.clone());
                separation_flags += fit_d.separation as usize;
                let draw_d = posterior_draw(&fit_d, rng)?;
                overlay.delta_hat = bernoulli_impute(&design_all, &draw_d.coefficients, rng);

                if vars.has_x() {
                    let design_all = build_design_matrix(cohort, &spec_x_chain, Some(&overlay))?;
                    let design_val = subset_rows(&design_all, &idx);
                    let resp = cohort.validated_response(sample, Response::X)?;
                    let fit_x =
                        fit_glm(&design_val.view(), &resp.view(), GlmKind::Linear, None)?;
                    let draw_x = posterior_draw(&fit_x, rng)?;
                    let col = normal_impute(&design_all, &draw_x.coefficients, draw_x.tau2, rng);
                    let mut xh = Array2::zeros((n, cohort.p()));
                    xh.column_mut(0).assign(&col);
                    overlay.x_hat = Some(xh);
                }

                if vars.has_u() {
                    let design_all = build_design_matrix(cohort, &spec_r_chain, Some(&overlay))?;
                    let design_val = subset_rows(&design_all, &idx);
                    let resp = cohort.validated_response(sample, Response::ROffset)?;
                    let fit_r =
                        fit_glm(&design_val.view(), &resp.view(), GlmKind::Linear, None)?;
                    let draw_r = posterior_draw(&fit_r, rng)?;
                    let r_hat = normal_impute(&design_all, &draw_r.coefficients, draw_r.tau2, rng);
                    overlay.u_hat = Some(cohort.u_star() - &r_hat);
                }
            }

            if overlay.delta_hat.iter().any(|&d| d == 1.0) {
                result = Some(overlay);
                break;
            }
            if attempt == 1 {
                return Err(Error::Estimation(format!(
                    "imputation {m} produced no events twice"
                )));
            }
        }
        let overlay = result.unwrap();
        let (cox_fit, influence) = imputed_cox_influence(cohort, &overlay, warm_beta.as_ref())?;
        warm_beta = Some(cox_fit.beta.clone());
        acc += &influence;
        per_m.push(PerImputation {
            overlay,
            beta: cox_fit.beta,
            influence,
        });
    }
    acc /= opts.imputations as f64;
    let aux = AuxiliaryMatrix::from_influence(acc, AuxiliarySource::Grfcsmi, opts.aux_intercept)?;
    Ok(MiAuxiliary {
        aux,
        per_m,
        vars,
        separation_flags,
    })
}

/// A column dropped from a model-calibration working design to restore full
/// rank, identified by imputation, coefficient, and design column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedColumn {
    pub imputation: usize,
    pub coefficient: usize,
    pub design_column: usize,
}

/// Model-calibration auxiliaries plus the rank-repair report.
#[derive(Debug, Clone)]
pub struct IfAuxiliary {
    pub aux: AuxiliaryMatrix,
    pub dropped: Vec<DroppedColumn>,
}

/// Model-calibration (influence-function imputation) auxiliaries.
///
/// For each imputation and each coefficient, the validated-data delta-beta
/// (from the inverse-probability-weighted fit) is regressed on the imputed
/// delta-beta, the imputed data, and their products; fitted values for all
/// `N` subjects are averaged over imputations. Working models are weighted
/// by `1/π`. Rank-deficient designs drop interaction columns from the last
/// one backwards until the fit is full rank.
pub fn if_calibration_auxiliary(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    base: &MiAuxiliary,
    aux_intercept: bool,
) -> Result<IfAuxiliary> {
    let ht = ht_estimate(cohort, sample)?;
    let v = cohort.validated(sample)?;
    let weights = v.pi.mapv(|p| 1.0 / p);
    let ell_true = cox::dfbeta(
        &ht.fit,
        &v.covariates.view(),
        &v.time.view(),
        &v.event.view(),
        &weights.view(),
        InfluenceBasis::TrueData,
    )?
    .dfbeta;

    let n = cohort.n();
    let kb = cohort.p() + cohort.q();
    let m_count = base.per_m.len();
    if m_count == 0 {
        return Err(Error::parameter("model calibration requires imputations"));
    }
    let mut acc = Array2::<f64>::zeros((n, kb));
    let mut dropped = Vec::new();

    for (m, piece) in base.per_m.iter().enumerate() {
        // Data columns: imputed where available, error-prone otherwise.
        let mut data_cols: Vec<Array1<f64>> = Vec::new();
        data_cols.push(piece.overlay.delta_hat.clone());
        match &piece.overlay.u_hat {
            Some(u) => data_cols.push(u.clone()),
            None => data_cols.push(cohort.u_star().clone()),
        }
        match &piece.overlay.x_hat {
            Some(x) => {
                for j in 0..x.ncols() {
                    data_cols.push(x.column(j).to_owned());
                }
            }
            None => {
                for j in 0..cohort.p() {
                    data_cols.push(cohort.x_star().column(j).to_owned());
                }
            }
        }
        for j in 0..cohort.q() {
            data_cols.push(cohort.z().column(j).to_owned());
        }

        for c in 0..kb {
            let ell_hat = piece.influence.column(c).to_owned();
            // Design: intercept, imputed influence, data columns, then
            // influence-by-data products.
            let mut cols: Vec<Array1<f64>> = vec![Array1::ones(n), ell_hat.clone()];
            cols.extend(data_cols.iter().cloned());
            let n_base = cols.len();
            for d in &data_cols {
                cols.push(&ell_hat * d);
            }

            let mut active: Vec<usize> = (0..cols.len()).collect();
            loop {
                let design_all = stack_columns(&cols, &active);
                let design_val = subset_rows(&design_all, &v.indices);
                let resp = ell_true.column(c).to_owned();
                match fit_glm(
                    &design_val.view(),
                    &resp.view(),
                    GlmKind::Linear,
                    Some(&weights.view()),
                ) {
                    Ok(fit) => {
                        let mu = design_all.dot(&fit.coefficients);
                        for i in 0..n {
                            acc[(i, c)] += mu[i];
                        }
                        break;
                    }
                    Err(Error::Singular { .. }) | Err(Error::RankDeficient { .. }) => {
                        // Drop the last remaining interaction column.
                        let last_inter = active.iter().rposition(|&col| col >= n_base);
                        match last_inter {
                            Some(pos) => {
                                dropped.push(DroppedColumn {
                                    imputation: m,
                                    coefficient: c,
                                    design_column: active[pos],
                                });
                                active.remove(pos);
                            }
                            None => {
                                return Err(Error::RankDeficient { column: 0 });
                            }
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    acc /= m_count as f64;
    let aux = AuxiliaryMatrix::from_influence(acc, AuxiliarySource::IfImputed, aux_intercept)?;
    Ok(IfAuxiliary { aux, dropped })
}

fn stack_columns(cols: &[Array1<f64>], active: &[usize]) -> Array2<f64> {
    let n = cols[0].len();
    let mut out = Array2::zeros((n, active.len()));
    for (j, &c) in active.iter().enumerate() {
        out.column_mut(j).assign(&cols[c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::DesignDescriptor;
    use crate::numeric::RngStream;
    use rand::Rng;

    fn cohort_with_noisy_delta(n: usize, seed: u64) -> (Cohort, TwoPhaseSample) {
        let mut rng = RngStream::new(seed, 0).rng();
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let z = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let u = Array1::from_shape_fn(n, |_| -f64::ln(rng.random_range(0.01..1.0)));
        let d = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        // Misclassify ~20% of indicators.
        let d_star = Array1::from_shape_fn(n, |i| {
            if rng.random_bool(0.8) {
                d[i]
            } else {
                1.0 - d[i]
            }
        });
        let cohort =
            Cohort::new_simulated(x.clone(), z, u.clone(), d_star, x, u, d).unwrap();
        let mut r = vec![false; n];
        let m = n / 3;
        let mut count = 0;
        while count < m {
            let i = rng.random_range(0..n);
            if !r[i] {
                r[i] = true;
                count += 1;
            }
        }
        let pi = Array1::from_elem(n, m as f64 / n as f64);
        let sample = TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n: m }).unwrap();
        (cohort, sample)
    }

    #[test]
    fn grmi_deterministic_given_stream() {
        let (cohort, sample) = cohort_with_noisy_delta(150, 11);
        let opts = MiOptions {
            imputations: 3,
            ..Default::default()
        };
        let a = grmi_auxiliary(&cohort, &sample, &opts, None, &mut RngStream::new(1, 5).rng())
            .unwrap();
        let b = grmi_auxiliary(&cohort, &sample, &opts, None, &mut RngStream::new(1, 5).rng())
            .unwrap();
        assert_eq!(a.aux.a, b.aux.a);
    }

    #[test]
    fn grmi_requires_both_classes() {
        let (cohort, sample) = cohort_with_noisy_delta(60, 13);
        // Rebuild with all validated deltas equal.
        let n = cohort.n();
        let ones = Array1::ones(n);
        let forced = Cohort::new_simulated(
            cohort.x_star().clone(),
            cohort.z().clone(),
            cohort.u_star().clone(),
            cohort.delta_star().clone(),
            cohort.x_star().clone(),
            cohort.u_star().clone(),
            ones,
        )
        .unwrap();
        let opts = MiOptions {
            imputations: 2,
            ..Default::default()
        };
        assert!(grmi_auxiliary(
            &forced,
            &sample,
            &opts,
            None,
            &mut RngStream::new(2, 0).rng()
        )
        .is_err());
    }

    #[test]
    fn fcsmi_runs_and_is_deterministic() {
        let (cohort, sample) = cohort_with_noisy_delta(120, 17);
        let opts = MiOptions {
            imputations: 2,
            chain_iterations: 3,
            ..Default::default()
        };
        let a = fcsmi_auxiliary(
            &cohort,
            &sample,
            ImputedVars::DeltaU,
            &opts,
            None,
            &mut RngStream::new(3, 1).rng(),
        )
        .unwrap();
        let b = fcsmi_auxiliary(
            &cohort,
            &sample,
            ImputedVars::DeltaU,
            &opts,
            None,
            &mut RngStream::new(3, 1).rng(),
        )
        .unwrap();
        assert_eq!(a.aux.a, b.aux.a);
        assert!(a.per_m[0].overlay.u_hat.is_some());
        assert!(a.per_m[0].overlay.x_hat.is_none());
    }

    #[test]
    fn if_calibration_recovers_perfect_linear_relation() {
        // When the validated influence is exactly twice the imputed one, the
        // fitted auxiliary must correlate perfectly with it.
        let (cohort, sample) = cohort_with_noisy_delta(200, 19);
        let opts = MiOptions {
            imputations: 1,
            ..Default::default()
        };
        let mut base = grmi_auxiliary(
            &cohort,
            &sample,
            &opts,
            None,
            &mut RngStream::new(4, 2).rng(),
        )
        .unwrap();
        // Construct a synthetic base whose imputed influence is half the
        // validated-data influence for validated subjects.
        let ht = ht_estimate(&cohort, &sample).unwrap();
        let v = cohort.validated(&sample).unwrap();
        let w = v.pi.mapv(|p| 1.0 / p);
        let ell = cox::dfbeta(
            &ht.fit,
            &v.covariates.view(),
            &v.time.view(),
            &v.event.view(),
            &w.view(),
            InfluenceBasis::TrueData,
        )
        .unwrap()
        .dfbeta;
        for (row, &i) in v.indices.iter().enumerate() {
            for c in 0..2 {
                base.per_m[0].influence[(i, c)] = 0.5 * ell[(row, c)];
            }
        }
        let out = if_calibration_auxiliary(&cohort, &sample, &base, false).unwrap();
        // Fitted values at validated rows reproduce the response.
        for (row, &i) in v.indices.iter().enumerate() {
            for c in 0..2 {
                let got = out.aux.a[(i, c)];
                let want = ell[(row, c)];
                assert!(
                    (got - want).abs() < 1e-6 * (1.0 + want.abs()),
                    "row {row} coef {c}: {got} vs {want}"
                );
            }
        }
    }
}

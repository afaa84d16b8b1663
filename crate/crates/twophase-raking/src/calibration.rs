//! Horvitz-Thompson and generalized-raking estimation.
//!
//! Raking minimally adjusts the design weights `1/π` so that phase-two
//! weighted totals of auxiliary variables match their known phase-one
//! totals. With distance `d(a, b) = a log(a/b) - a + b` the solution is
//! `g_i = exp(λ'A_i)`, with the Lagrange multipliers `λ` found by Newton
//! iteration on the calibration equations.

use ndarray::{Array1, Array2, Axis};

use crate::cohort::{Cohort, TwoPhaseSample};
use crate::cox::{self, CoxFit, InfluenceBasis, InfluenceSet};
use crate::error::{Error, Result};
use crate::numeric::{factor_spd, solve_spd};

pub const MAX_CALIBRATION_ITERATIONS: usize = 100;
pub const WEIGHT_CAP: f64 = 1e6;
/// Calibration equations must hold to this relative tolerance.
pub const CALIBRATION_TOL: f64 = 1e-8;

/// Where an auxiliary matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxiliarySource {
    Grn,
    Grmi,
    Grfcsmi,
    IfImputed,
}

/// Auxiliary variables known for every phase-one subject.
#[derive(Debug, Clone)]
pub struct AuxiliaryMatrix {
    pub a: Array2<f64>,
    pub source: AuxiliarySource,
    /// Phase-one column totals the calibration equations must reproduce.
    pub totals: Array1<f64>,
}

impl AuxiliaryMatrix {
    /// Wrap an influence matrix as raking auxiliaries, optionally prepending
    /// a constant-one column so the realized weight sum calibrates to `N`.
    pub fn from_influence(
        influence: Array2<f64>,
        source: AuxiliarySource,
        intercept: bool,
    ) -> Result<Self> {
        if influence.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("auxiliary values must be finite"));
        }
        let a = if intercept {
            let n = influence.nrows();
            let mut m = Array2::ones((n, influence.ncols() + 1));
            m.slice_mut(ndarray::s![.., 1..]).assign(&influence);
            m
        } else {
            influence
        };
        let totals = a.sum_axis(Axis(0));
        Ok(AuxiliaryMatrix { a, source, totals })
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }
}

/// A point estimate with its sandwich covariance.
#[derive(Debug, Clone)]
pub struct EstimateWithCovariance {
    pub fit: CoxFit,
    pub covariance: Array2<f64>,
}

/// A generalized-raking fit.
#[derive(Debug, Clone)]
pub struct RakingFit {
    pub beta: Array1<f64>,
    pub lambda: Array1<f64>,
    /// Raking weights `g_i / π_i`; zero outside the validation sample.
    pub weights: Array1<f64>,
    pub calib_residual: Array1<f64>,
    pub covariance: Array2<f64>,
    pub g_range: (f64, f64),
    pub cox: CoxFit,
}

fn check_rank_on_validated(a_val: &Array2<f64>) -> Result<()> {
    crate::numeric::check_columns_independent(&a_val.view(), 1e-9)
}

/// Solve the calibration equations by Newton iteration on the Lagrange
/// multipliers. Returns `(lambda, g)` with `g_i = exp(λ'A_i)` for every
/// phase-one subject (so `g ≡ 1` whenever the constraints already hold at
/// the design weights).
pub fn solve_raking_weights(
    aux: &AuxiliaryMatrix,
    sample: &TwoPhaseSample,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let n = aux.a.nrows();
    if sample.r.len() != n {
        return Err(Error::dimension("auxiliary matrix and sample sizes differ"));
    }
    let idx = sample.validated_indices();
    if idx.is_empty() {
        return Err(Error::ValidationTooSmall {
            observed: 0,
            required: aux.k(),
        });
    }
    let k = aux.k();
    let mut a_val = Array2::<f64>::zeros((idx.len(), k));
    let mut inv_pi = Array1::<f64>::zeros(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        a_val.row_mut(row).assign(&aux.a.row(i));
        inv_pi[row] = 1.0 / sample.pi[i];
    }
    check_rank_on_validated(&a_val)?;

    let target = &aux.totals;
    let scale = 1.0 + target.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    // Newton on the convex dual phi(lambda) = sum_i g_i/pi_i - lambda'T,
    // whose gradient is the calibration residual and whose Hessian is the
    // weighted auxiliary Gram. The line search monitors phi, not the
    // residual norm, which may rise transiently along a descent direction.
    let evaluate = |lambda: &Array1<f64>| -> (f64, Array1<f64>, Array1<f64>) {
        let eta = a_val.dot(lambda);
        let g = eta.mapv(f64::exp);
        let mut res = -target.clone();
        let mut dual = -lambda.dot(target);
        for (row, gi) in g.iter().enumerate() {
            let w = gi * inv_pi[row];
            dual += w;
            for j in 0..k {
                res[j] += w * a_val[(row, j)];
            }
        }
        (dual, res, g)
    };

    let mut lambda = Array1::<f64>::zeros(k);
    let (mut dual, mut res, mut g_val) = evaluate(&lambda);
    let mut res_norm = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut iterations = 0;

    while res_norm >= 1e-12 * scale && iterations < MAX_CALIBRATION_ITERATIONS {
        iterations += 1;
        let mut jac = Array2::<f64>::zeros((k, k));
        for (row, gi) in g_val.iter().enumerate() {
            let w = gi * inv_pi[row];
            for a in 0..k {
                let xa = a_val[(row, a)];
                for b in a..k {
                    jac[(a, b)] += w * xa * a_val[(row, b)];
                }
            }
        }
        for a in 0..k {
            for b in (a + 1)..k {
                jac[(b, a)] = jac[(a, b)];
            }
        }
        let neg_res = res.mapv(|v| -v);
        let dir = solve_spd(&jac.view(), &neg_res.view())?;

        let mut step = 1.0;
        let mut advanced = false;
        let noise = 1e-12 * (1.0 + dual.abs());
        for _ in 0..=40 {
            let cand = &lambda + &(&dir * step);
            let (cand_dual, cand_res, cand_g) = evaluate(&cand);
            if cand_dual.is_finite() && cand_dual <= dual + noise {
                lambda = cand;
                dual = cand_dual;
                res = cand_res;
                g_val = cand_g;
                res_norm = res.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        let g_max = g_val.iter().fold(0.0_f64, |m, v| m.max(*v));
        if g_max > WEIGHT_CAP {
            return Err(Error::CalibrationFailure {
                iterations,
                worst_residual: res_norm,
                max_weight: g_max,
            });
        }
        if !advanced {
            break;
        }
    }

    if res_norm >= CALIBRATION_TOL * scale {
        let g_max = g_val.iter().fold(0.0_f64, |m, v| m.max(*v));
        return Err(Error::CalibrationFailure {
            iterations,
            worst_residual: res_norm,
            max_weight: g_max,
        });
    }

    let g_all = aux.a.dot(&lambda).mapv(f64::exp);
    Ok((lambda, g_all))
}

/// Horvitz-Thompson estimate: the weighted Cox fit over validated subjects
/// with design weights `1/π` and its sandwich covariance.
pub fn ht_estimate(cohort: &Cohort, sample: &TwoPhaseSample) -> Result<EstimateWithCovariance> {
    let v = cohort.validated(sample)?;
    let required = cohort.p() + cohort.q() + 2;
    if v.indices.len() < required {
        return Err(Error::ValidationTooSmall {
            observed: v.indices.len(),
            required,
        });
    }
    let weights = v.pi.mapv(|p| 1.0 / p);
    let fit = cox::fit_cox(
        &v.covariates.view(),
        &v.time.view(),
        &v.event.view(),
        &weights.view(),
        None,
    )?;
    let covariance = sandwich_variance(cohort, sample, None, &fit, &weights)?;
    Ok(EstimateWithCovariance { fit, covariance })
}

/// Full-cohort fit on the error-prone columns and its influence matrix —
/// the naive raking auxiliary and the Neyman-allocation input.
pub fn naive_influence(cohort: &Cohort) -> Result<(CoxFit, InfluenceSet)> {
    let covs = cohort.error_prone_covariates();
    let weights = Array1::ones(cohort.n());
    let fit = cox::fit_cox(
        &covs.view(),
        &cohort.u_star().view(),
        &cohort.delta_star().view(),
        &weights.view(),
        None,
    )?;
    let influence = cox::dfbeta(
        &fit,
        &covs.view(),
        &cohort.u_star().view(),
        &cohort.delta_star().view(),
        &weights.view(),
        InfluenceBasis::ErrorProne,
    )?;
    Ok((fit, influence))
}

/// Auxiliaries from the error-prone full-cohort fit (the naive source).
pub fn build_auxiliary_naive(cohort: &Cohort, intercept: bool) -> Result<AuxiliaryMatrix> {
    let (_, influence) = naive_influence(cohort)?;
    AuxiliaryMatrix::from_influence(influence.dfbeta, AuxiliarySource::Grn, intercept)
}

/// Generalized-raking estimate with the given auxiliaries.
///
/// `warm_start` seeds the weighted Cox solve (the HT coefficients are used
/// when absent, since the raking weights stay close to the design weights).
pub fn raking_estimate(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    aux: &AuxiliaryMatrix,
    warm_start: Option<&Array1<f64>>,
) -> Result<RakingFit> {
    if aux.a.nrows() != cohort.n() {
        return Err(Error::dimension("auxiliary rows must cover the cohort"));
    }
    let (lambda, g_all) = solve_raking_weights(aux, sample)?;
    let v = cohort.validated(sample)?;
    let mut weights_val = Array1::<f64>::zeros(v.indices.len());
    let mut g_min = f64::INFINITY;
    let mut g_max = f64::NEG_INFINITY;
    for (row, &i) in v.indices.iter().enumerate() {
        weights_val[row] = g_all[i] / sample.pi[i];
        g_min = g_min.min(g_all[i]);
        g_max = g_max.max(g_all[i]);
    }

    let warm_owned;
    let warm = match warm_start {
        Some(b) => Some(b),
        None => {
            warm_owned = ht_estimate(cohort, sample)?.fit.beta;
            Some(&warm_owned)
        }
    };
    let fit = cox::fit_cox(
        &v.covariates.view(),
        &v.time.view(),
        &v.event.view(),
        &weights_val.view(),
        warm,
    )?;

    // Final constraint residual, recorded on the fit.
    let mut calib_residual = -aux.totals.clone();
    for (row, &i) in v.indices.iter().enumerate() {
        let w = weights_val[row];
        for j in 0..aux.k() {
            calib_residual[j] += w * aux.a[(i, j)];
        }
    }

    let covariance = sandwich_variance(cohort, sample, Some(aux), &fit, &weights_val)?;

    let mut weights_all = Array1::<f64>::zeros(cohort.n());
    for (row, &i) in v.indices.iter().enumerate() {
        weights_all[i] = weights_val[row];
    }

    Ok(RakingFit {
        beta: fit.beta.clone(),
        lambda,
        weights: weights_all,
        calib_residual,
        covariance,
        g_range: (g_min, g_max),
        cox: fit,
    })
}

/// Sandwich covariance for HT (`aux = None`) and raking estimators.
///
/// Each subject contributes `h_i = γ̂'A_i + R_i w_i (ℓ̂_i - γ̂'A_i)`, where
/// `ℓ̂` are delta-betas of the weighted validated-data fit and `γ̂` is the
/// weighted regression of `ℓ̂` on `A` over the validated subjects; the
/// covariance is `Σ h_i h_i'`. Without auxiliaries the first term drops and
/// this reduces to the usual IPW sandwich.
pub fn sandwich_variance(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    aux: Option<&AuxiliaryMatrix>,
    fit: &CoxFit,
    weights_val: &Array1<f64>,
) -> Result<Array2<f64>> {
    let v = cohort.validated(sample)?;
    if weights_val.len() != v.indices.len() {
        return Err(Error::dimension("weights must cover the validated subset"));
    }
    let influence = cox::dfbeta(
        fit,
        &v.covariates.view(),
        &v.time.view(),
        &v.event.view(),
        &weights_val.view(),
        InfluenceBasis::TrueData,
    )?;
    let ell = influence.dfbeta;
    let kb = ell.ncols();

    let cov = match aux {
        None => {
            let mut cov = Array2::<f64>::zeros((kb, kb));
            for row in 0..ell.nrows() {
                let w = weights_val[row];
                for a in 0..kb {
                    let ha = w * ell[(row, a)];
                    for b in a..kb {
                        cov[(a, b)] += ha * w * ell[(row, b)];
                    }
                }
            }
            for a in 0..kb {
                for b in (a + 1)..kb {
                    cov[(b, a)] = cov[(a, b)];
                }
            }
            cov
        }
        Some(aux) => {
            let ka = aux.k();
            let mut awa = Array2::<f64>::zeros((ka, ka));
            let mut awl = Array2::<f64>::zeros((ka, kb));
            for (row, &i) in v.indices.iter().enumerate() {
                let w = weights_val[row];
                for a in 0..ka {
                    let xa = w * aux.a[(i, a)];
                    for b in a..ka {
                        awa[(a, b)] += xa * aux.a[(i, b)];
                    }
                    for c in 0..kb {
                        awl[(a, c)] += xa * ell[(row, c)];
                    }
                }
            }
            for a in 0..ka {
                for b in (a + 1)..ka {
                    awa[(b, a)] = awa[(a, b)];
                }
            }
            let factor = factor_spd(&awa.view())?;
            let mut gamma = Array2::<f64>::zeros((ka, kb));
            for c in 0..kb {
                let col = awl.column(c).to_owned();
                gamma.column_mut(c).assign(&factor.solve(&col.view()));
            }

            let predictions = aux.a.dot(&gamma);
            let mut h = predictions;
            for (row, &i) in v.indices.iter().enumerate() {
                let w = weights_val[row];
                for c in 0..kb {
                    h[(i, c)] += w * (ell[(row, c)] - h[(i, c)]);
                }
            }
            h.t().dot(&h)
        }
    };

    let mut cov = cov;
    for a in 0..kb {
        for b in (a + 1)..kb {
            let v2 = 0.5 * (cov[(a, b)] + cov[(b, a)]);
            cov[(a, b)] = v2;
            cov[(b, a)] = v2;
        }
    }
    Ok(cov)
}

/// True-data benchmark: unweighted fit on the fully validated cohort with
/// robust covariance.
pub fn true_estimate(cohort: &Cohort) -> Result<EstimateWithCovariance> {
    let (covs, time, event) = cohort.full_truth()?;
    let weights = Array1::ones(cohort.n());
    let fit = cox::fit_cox(&covs.view(), &time.view(), &event.view(), &weights.view(), None)?;
    let influence = cox::dfbeta(
        &fit,
        &covs.view(),
        &time.view(),
        &event.view(),
        &weights.view(),
        InfluenceBasis::TrueData,
    )?;
    let covariance = cox::robust_covariance(&influence);
    Ok(EstimateWithCovariance { fit, covariance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::DesignDescriptor;
    use crate::numeric::RngStream;
    use ndarray::array;
    use rand::Rng;

    fn toy_cohort(n: usize, seed: u64) -> Cohort {
        let mut rng = RngStream::new(seed, 0).rng();
        let x = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let z = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let u = Array1::from_shape_fn(n, |_| -f64::ln(rng.random_range(0.001..1.0)));
        let d = Array1::from_shape_fn(n, |_| if rng.random_bool(0.6) { 1.0 } else { 0.0 });
        Cohort::new_simulated(x.clone(), z, u.clone(), d.clone(), x, u, d).unwrap()
    }

    fn census(n: usize) -> TwoPhaseSample {
        TwoPhaseSample::new(vec![true; n], Array1::ones(n), DesignDescriptor::Srs { n }).unwrap()
    }

    #[test]
    fn intercept_only_srs_needs_no_adjustment() {
        let n = 50;
        let cohort = toy_cohort(n, 1);
        let mut r = vec![false; n];
        for i in 0..10 {
            r[i * 5] = true;
        }
        let pi = Array1::from_elem(n, 10.0 / n as f64);
        let sample = TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n: 10 }).unwrap();
        let aux =
            AuxiliaryMatrix::from_influence(Array2::zeros((n, 0)), AuxiliarySource::Grn, true)
                .unwrap();
        let (lambda, g) = solve_raking_weights(&aux, &sample).unwrap();
        assert!(lambda[0].abs() < 1e-12);
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let _ = cohort;
    }

    #[test]
    fn census_weights_are_unit() {
        let n = 40;
        let cohort = toy_cohort(n, 2);
        let sample = census(n);
        let aux = build_auxiliary_naive(&cohort, true).unwrap();
        let (lambda, g) = solve_raking_weights(&aux, &sample).unwrap();
        assert!(lambda.iter().all(|v| v.abs() < 1e-10));
        assert!(g.iter().all(|&v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn full_validation_ht_equals_true_fit() {
        let n = 60;
        let cohort = toy_cohort(n, 3);
        let sample = census(n);
        let ht = ht_estimate(&cohort, &sample).unwrap();
        let truth = true_estimate(&cohort).unwrap();
        for j in 0..2 {
            assert!((ht.fit.beta[j] - truth.fit.beta[j]).abs() < 1e-12);
        }
        // With pi = 1 and no auxiliaries the sandwich is the robust
        // information-inverse covariance.
        for a in 0..2 {
            for b in 0..2 {
                let rel = (ht.covariance[(a, b)] - truth.covariance[(a, b)]).abs()
                    / (1.0 + truth.covariance[(a, b)].abs());
                assert!(rel < 1e-8);
            }
        }
    }

    #[test]
    fn full_validation_raking_equals_true_fit() {
        let n = 60;
        let cohort = toy_cohort(n, 4);
        let sample = census(n);
        let aux = build_auxiliary_naive(&cohort, true).unwrap();
        let fit = raking_estimate(&cohort, &sample, &aux, None).unwrap();
        let truth = true_estimate(&cohort).unwrap();
        for j in 0..2 {
            assert!((fit.beta[j] - truth.fit.beta[j]).abs() < 1e-10);
        }
        assert!(fit.g_range.0 > 0.0);
    }

    #[test]
    fn naive_auxiliary_columns_sum_to_zero() {
        let cohort = toy_cohort(80, 5);
        let aux = build_auxiliary_naive(&cohort, false).unwrap();
        for j in 0..aux.k() {
            assert!(aux.totals[j].abs() < 1e-8, "total {}", aux.totals[j]);
        }
    }

    #[test]
    fn zero_column_is_rank_error() {
        let n = 30;
        let sample = census(n);
        let mut a = Array2::<f64>::zeros((n, 2));
        a.column_mut(0).fill(1.0);
        let aux = AuxiliaryMatrix::from_influence(a, AuxiliarySource::Grn, false).unwrap();
        match solve_raking_weights(&aux, &sample) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, 1),
            other => panic!("expected RankDeficient, got {other:?}"),
        }
    }

    #[test]
    fn empty_validation_is_error() {
        let n = 20;
        let cohort = toy_cohort(n, 6);
        let sample = TwoPhaseSample::new(
            vec![false; n],
            Array1::from_elem(n, 0.5),
            DesignDescriptor::External,
        )
        .unwrap();
        assert!(ht_estimate(&cohort, &sample).is_err());
    }

    #[test]
    fn calibration_residual_is_tiny_and_weights_positive() {
        let n = 200;
        let cohort = toy_cohort(n, 7);
        let mut rng = RngStream::new(7, 9).rng();
        let mut r = vec![false; n];
        let mut count = 0;
        while count < 60 {
            let i = rng.random_range(0..n);
            if !r[i] {
                r[i] = true;
                count += 1;
            }
        }
        let pi = Array1::from_elem(n, 60.0 / n as f64);
        let sample = TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n: 60 }).unwrap();
        let aux = build_auxiliary_naive(&cohort, true).unwrap();
        let fit = raking_estimate(&cohort, &sample, &aux, None).unwrap();
        let scale = 1.0 + aux.totals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let worst = fit
            .calib_residual
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(worst < CALIBRATION_TOL * scale);
        assert!(fit.g_range.0 > 0.0);
        // Calibration holds: weighted totals match phase-one totals.
        let mut tot = array![0.0, 0.0, 0.0];
        for i in 0..n {
            for j in 0..3 {
                tot[j] += fit.weights[i] * aux.a[(i, j)];
            }
        }
        for j in 0..3 {
            assert!((tot[j] - aux.totals[j]).abs() < CALIBRATION_TOL * scale);
        }
    }
}

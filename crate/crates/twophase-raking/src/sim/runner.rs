//! Replicated estimation: one cohort per replicate, a design draw, every
//! requested estimator, and schedule-independent aggregation.

use std::collections::HashMap;

use ndarray::Array1;
use rayon::prelude::*;

use crate::calibration::{
    build_auxiliary_naive, ht_estimate, naive_influence, raking_estimate, true_estimate,
    AuxiliaryMatrix, AuxiliarySource,
};
use crate::cohort::{Cohort, TwoPhaseSample};
use crate::designs::{
    draw_case_control, draw_scc_balanced, draw_scc_neyman, draw_srs, quantile_cutpoints,
    DesignKind,
};
use crate::error::{Error, Result};
use crate::imputation::{
    fcsmi_auxiliary, grmi_auxiliary, if_calibration_auxiliary, ImputedVars, MiAuxiliary,
    MiOptions,
};
use crate::numeric::RngStream;

use super::config::{ErrorScenario, Method, ScenarioConfig};
use super::generate::{
    apply_error_scenario, calibrate_censoring_bound, generate_cohort, misclassification_metrics,
};
use super::metrics::{
    aggregate_metrics, MethodEstimate, MethodOutcome, MetricsReport, ReplicateRecord,
};

/// Stream-id layout: cell (high bits), replicate, lane. The calibration
/// stream sits above any reachable replicate lane.
const CELL_SHIFT: u32 = 40;
const LANE_BITS: u32 = 6;
const CALIBRATION_MARK: u64 = 1 << 39;

mod lane {
    pub const GENERATE: u64 = 0;
    pub const ERROR: u64 = 1;
    pub const DESIGN: u64 = 2;
    pub const GRMI_S: u64 = 3;
    pub const GRMI_C: u64 = 4;
    pub const FCS_S: u64 = 5;
    pub const FCS_C: u64 = 6;
}

fn replicate_stream(config: &ScenarioConfig, replicate: usize, lane: u64) -> RngStream {
    let id = (config.cell_id << CELL_SHIFT)
        | ((replicate as u64) << LANE_BITS)
        | lane;
    RngStream::new(config.seed, id)
}

pub fn calibration_stream(config: &ScenarioConfig) -> RngStream {
    RngStream::new(config.seed, (config.cell_id << CELL_SHIFT) | CALIBRATION_MARK)
}

/// Result of a full batch: per-replicate records plus aggregated metrics.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub records: Vec<ReplicateRecord>,
    pub report: MetricsReport,
    pub theta_c: f64,
}

fn estimate_from(beta: &Array1<f64>, covariance: &ndarray::Array2<f64>, p: usize) -> MethodEstimate {
    MethodEstimate {
        beta_x: beta[0],
        se_x: covariance[(0, 0)].max(0.0).sqrt(),
        beta_z: beta[p],
        se_z: covariance[(p, p)].max(0.0).sqrt(),
    }
}

fn method_needs_naive(methods: &[Method], design: DesignKind) -> bool {
    design == DesignKind::Sccn || methods.iter().any(|m| !matches!(m, Method::True | Method::Ht))
}

fn draw_design(
    config: &ScenarioConfig,
    cohort: &Cohort,
    naive_influence_col: Option<&Array1<f64>>,
    replicate: usize,
) -> Result<TwoPhaseSample> {
    let mut rng = replicate_stream(config, replicate, lane::DESIGN).rng();
    let n_target = config.design.n_target.unwrap_or(config.n_validation);
    match config.design.kind {
        DesignKind::Srs => draw_srs(cohort.n(), n_target, &mut rng),
        DesignKind::Cc => draw_case_control(
            &cohort.delta_star().view(),
            Some(n_target),
            config.design.cc_ratio,
            &mut rng,
        ),
        DesignKind::Sccb | DesignKind::Sccn => {
            let strat = cohort.x_star().column(0).to_owned();
            let cutpoints = match &config.design.cutpoints {
                Some(c) => c.clone(),
                None => quantile_cutpoints(&strat.view(), &config.design.cutpoint_quantiles)?,
            };
            if config.design.kind == DesignKind::Sccb {
                draw_scc_balanced(
                    &cohort.delta_star().view(),
                    &strat.view(),
                    &cutpoints,
                    n_target,
                    &mut rng,
                )
            } else {
                let influence = naive_influence_col.ok_or_else(|| {
                    Error::Estimation("Neyman design requires the naive influence".to_string())
                })?;
                draw_scc_neyman(
                    &cohort.delta_star().view(),
                    &strat.view(),
                    &cutpoints,
                    &influence.view(),
                    n_target,
                    &mut rng,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MiBase {
    Grmi { interactions: bool },
    Fcs { interactions: bool },
}

fn base_for(method: Method) -> Option<MiBase> {
    match method {
        Method::Grmis | Method::IfGrmis => Some(MiBase::Grmi { interactions: false }),
        Method::Grmic | Method::IfGrmic => Some(MiBase::Grmi { interactions: true }),
        Method::Grfcsmis | Method::IfGrfcsmis => Some(MiBase::Fcs { interactions: false }),
        Method::Grfcsmic | Method::IfGrfcsmic => Some(MiBase::Fcs { interactions: true }),
        _ => None,
    }
}

fn fcs_vars(scenario: ErrorScenario) -> ImputedVars {
    match scenario {
        ErrorScenario::DeltaOnly => ImputedVars::DeltaOnly,
        ErrorScenario::DeltaTime => ImputedVars::DeltaU,
        ErrorScenario::DeltaTimeCovariate => ImputedVars::DeltaUX,
    }
}

/// Run every requested method on one replicate. Per-method failures are
/// recorded, never propagated; the batch always completes.
pub fn run_replication(config: &ScenarioConfig, theta_c: f64, replicate: usize) -> ReplicateRecord {
    match run_replication_inner(config, theta_c, replicate) {
        Ok(record) => record,
        Err(e) => {
            // Cohort generation itself failed: every method fails alike.
            let msg = format!("replicate setup failed: {e}");
            ReplicateRecord {
                replicate,
                outcomes: config
                    .methods
                    .iter()
                    .map(|&m| (m, MethodOutcome::Failed(msg.clone())))
                    .collect(),
                misclass: None,
                warnings: Vec::new(),
            }
        }
    }
}

fn run_replication_inner(
    config: &ScenarioConfig,
    theta_c: f64,
    replicate: usize,
) -> Result<ReplicateRecord> {
    let p = config_p();
    let mut gen_rng = replicate_stream(config, replicate, lane::GENERATE).rng();
    let truth = generate_cohort(config, theta_c, &mut gen_rng)?;
    let coefs = config.misclass.coefficients(config.beta_x);
    let mut err_rng = replicate_stream(config, replicate, lane::ERROR).rng();
    let cohort = apply_error_scenario(
        &truth,
        config.scenario,
        &coefs,
        config.error_free,
        &mut err_rng,
    )?;
    let misclass = misclassification_metrics(
        &truth.delta_star().view(),
        &cohort.delta_star().view(),
    )
    .ok();

    // The error-prone full-cohort fit backs GRN, the Neyman design, and the
    // warm starts; compute it once when anything needs it.
    let naive = if method_needs_naive(&config.methods, config.design.kind) {
        Some(naive_influence(&cohort))
    } else {
        None
    };
    let naive_col = naive.as_ref().and_then(|r| {
        r.as_ref()
            .ok()
            .map(|(_, infl)| infl.dfbeta.column(0).to_owned())
    });

    let sample = draw_design(config, &cohort, naive_col.as_ref(), replicate)?;

    let mut outcomes: Vec<(Method, MethodOutcome)> = Vec::with_capacity(config.methods.len());
    let ht = ht_estimate(&cohort, &sample);
    let warm = ht.as_ref().ok().map(|e| e.fit.beta.clone());
    let naive_beta = naive
        .as_ref()
        .and_then(|r| r.as_ref().ok().map(|(fit, _)| fit.beta.clone()));

    // Imputation bases are shared between the data-imputation and
    // model-calibration variants of the same method.
    let mut bases: HashMap<MiBase, Result<MiAuxiliary>> = HashMap::new();
    for &method in &config.methods {
        let Some(base) = base_for(method) else { continue };
        bases.entry(base).or_insert_with(|| {
            let (lane_id, interactions, is_fcs) = match base {
                MiBase::Grmi { interactions } => (
                    if interactions { lane::GRMI_C } else { lane::GRMI_S },
                    interactions,
                    false,
                ),
                MiBase::Fcs { interactions } => (
                    if interactions { lane::FCS_C } else { lane::FCS_S },
                    interactions,
                    true,
                ),
            };
            let opts = MiOptions {
                imputations: config.imputations,
                chain_iterations: config.chain_iterations,
                interactions,
                aux_intercept: config.aux_intercept,
            };
            let mut rng = replicate_stream(config, replicate, lane_id).rng();
            if is_fcs {
                fcsmi_auxiliary(
                    &cohort,
                    &sample,
                    fcs_vars(config.scenario),
                    &opts,
                    naive_beta.as_ref(),
                    &mut rng,
                )
            } else {
                grmi_auxiliary(&cohort, &sample, &opts, naive_beta.as_ref(), &mut rng)
            }
        });
    }
    let mut warnings: Vec<String> = Vec::new();
    for (base, result) in &bases {
        if let Ok(aux) = result {
            if aux.separation_flags > 0 {
                warnings.push(format!(
                    "replicate {replicate}: {base:?} flagged separation in {} working-model fits",
                    aux.separation_flags
                ));
            }
        }
    }
    let base_of = |method: Method| -> Result<&MiAuxiliary> {
        match bases.get(&base_for(method).expect("method has a base")).unwrap() {
            Ok(aux) => Ok(aux),
            Err(e) => Err(Error::Estimation(format!("imputation base failed: {e}"))),
        }
    };

    let mut if_warnings: Vec<String> = Vec::new();
    for &method in &config.methods {
        let outcome = (|| -> Result<MethodEstimate> {
            match method {
                Method::True => {
                    let est = true_estimate(&truth)?;
                    Ok(estimate_from(&est.fit.beta, &est.covariance, p))
                }
                Method::Ht => match &ht {
                    Ok(est) => Ok(estimate_from(&est.fit.beta, &est.covariance, p)),
                    Err(e) => Err(Error::Estimation(e.to_string())),
                },
                Method::Grn => {
                    let aux = match &naive {
                        Some(Ok((_, infl))) => AuxiliaryMatrix::from_influence(
                            infl.dfbeta.clone(),
                            AuxiliarySource::Grn,
                            config.aux_intercept,
                        )?,
                        Some(Err(e)) => {
                            return Err(Error::Estimation(format!("naive fit failed: {e}")))
                        }
                        None => build_auxiliary_naive(&cohort, config.aux_intercept)?,
                    };
                    let fit = raking_estimate(&cohort, &sample, &aux, warm.as_ref())?;
                    Ok(estimate_from(&fit.beta, &fit.covariance, p))
                }
                Method::Grmis | Method::Grmic | Method::Grfcsmis | Method::Grfcsmic => {
                    let base = base_of(method)?;
                    let fit = raking_estimate(&cohort, &sample, &base.aux, warm.as_ref())?;
                    Ok(estimate_from(&fit.beta, &fit.covariance, p))
                }
                Method::IfGrmis | Method::IfGrmic | Method::IfGrfcsmis | Method::IfGrfcsmic => {
                    let base = base_of(method)?;
                    let if_aux =
                        if_calibration_auxiliary(&cohort, &sample, base, config.aux_intercept)?;
                    if !if_aux.dropped.is_empty() {
                        if_warnings.push(format!(
                            "replicate {replicate}: {} dropped {} rank-deficient working-model columns",
                            method.name(),
                            if_aux.dropped.len()
                        ));
                    }
                    let fit = raking_estimate(&cohort, &sample, &if_aux.aux, warm.as_ref())?;
                    Ok(estimate_from(&fit.beta, &fit.covariance, p))
                }
            }
        })();
        outcomes.push((
            method,
            match outcome {
                Ok(e) => MethodOutcome::Estimate(e),
                Err(e) => MethodOutcome::Failed(e.to_string()),
            },
        ));
    }

    warnings.extend(if_warnings);
    Ok(ReplicateRecord {
        replicate,
        outcomes,
        misclass,
        warnings,
    })
}

const fn config_p() -> usize {
    // Generators are univariate in X; the exposure coefficient sits first
    // and the precise covariate follows.
    1
}

/// Calibrate the censoring bound, run all replicates in parallel, and
/// aggregate. Deterministic for a fixed `(config, seed)` at any thread
/// count.
pub fn run_batch(config: &ScenarioConfig) -> Result<BatchResult> {
    config.validate()?;
    let theta_c = calibrate_censoring_bound(
        config.beta_x,
        config.beta_z,
        config.lambda0,
        config.censoring_target,
        calibration_stream(config),
    )?;
    let records: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replication(config, theta_c, r))
        .collect();
    let report = aggregate_metrics(&records, &config.methods, config.beta_x)?;
    Ok(BatchResult {
        records,
        report,
        theta_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::DesignSpec;
    use crate::sim::config::MisclassModel;

    fn tiny_config(methods: Vec<Method>, replicates: usize) -> ScenarioConfig {
        ScenarioConfig {
            n_cohort: 300,
            n_validation: 80,
            beta_x: 1.5_f64.ln(),
            beta_z: 0.5_f64.ln(),
            lambda0: 0.1,
            censoring_target: 0.5,
            scenario: ErrorScenario::DeltaOnly,
            misclass: MisclassModel::Main,
            error_free: false,
            design: DesignSpec::srs(80),
            methods,
            imputations: 2,
            chain_iterations: 2,
            replicates,
            seed: 424242,
            aux_intercept: true,
            cell_id: 0,
        }
    }

    #[test]
    fn replication_deterministic() {
        let config = tiny_config(vec![Method::True, Method::Ht, Method::Grn], 1);
        let theta = 30.0;
        let a = run_replication(&config, theta, 3);
        let b = run_replication(&config, theta, 3);
        for ((ma, oa), (mb, ob)) in a.outcomes.iter().zip(b.outcomes.iter()) {
            assert_eq!(ma, mb);
            match (oa, ob) {
                (MethodOutcome::Estimate(ea), MethodOutcome::Estimate(eb)) => {
                    assert_eq!(ea.beta_x.to_bits(), eb.beta_x.to_bits());
                    assert_eq!(ea.se_x.to_bits(), eb.se_x.to_bits());
                }
                _ => panic!("estimation failed"),
            }
        }
    }

    #[test]
    fn true_method_matches_direct_fit() {
        let config = tiny_config(vec![Method::True], 1);
        let theta = 30.0;
        let rec = run_replication(&config, theta, 0);
        let mut gen_rng = replicate_stream(&config, 0, lane::GENERATE).rng();
        let truth = generate_cohort(&config, theta, &mut gen_rng).unwrap();
        let direct = true_estimate(&truth).unwrap();
        match &rec.outcomes[0].1 {
            MethodOutcome::Estimate(e) => {
                assert_eq!(e.beta_x, direct.fit.beta[0]);
            }
            other => panic!("expected estimate, got {other:?}"),
        }
    }

    #[test]
    fn batch_runs_and_aggregates() {
        let config = tiny_config(vec![Method::Ht, Method::Grn], 6);
        let result = run_batch(&config).unwrap();
        assert_eq!(result.records.len(), 6);
        let grn = result.report.method(Method::Grn).unwrap();
        assert!(grn.fail_rate < 0.5);
        assert!(result.report.method(Method::Ht).unwrap().re == Some(1.0));
    }
}

//! Replicate records and metric aggregation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::config::Method;
use super::generate::MisclassMetrics;

/// Two-sided 97.5% standard normal quantile (95% Wald intervals).
pub const Z_95: f64 = 1.959963984540054;

/// One method's estimate on one replicate.
#[derive(Debug, Clone, Copy)]
pub struct MethodEstimate {
    pub beta_x: f64,
    pub se_x: f64,
    pub beta_z: f64,
    pub se_z: f64,
}

#[derive(Debug, Clone)]
pub enum MethodOutcome {
    Estimate(MethodEstimate),
    Failed(String),
}

/// All requested methods on one replicate, plus the replicate's
/// misclassification block and any estimation warnings.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub outcomes: Vec<(Method, MethodOutcome)>,
    pub misclass: Option<MisclassMetrics>,
    pub warnings: Vec<String>,
}

/// Aggregated performance of one method.
#[derive(Debug, Clone)]
pub struct MethodMetrics {
    pub method: Method,
    /// Percent bias when the true coefficient is nonzero; otherwise the raw
    /// mean bias.
    pub pct_bias: f64,
    /// Sample standard deviation of the estimates (absent with < 2
    /// successes).
    pub ese: Option<f64>,
    /// `ESE(HT) / ESE(method)`; absent when HT was not run.
    pub re: Option<f64>,
    /// Mean model-based standard error.
    pub ase: f64,
    pub mse: f64,
    /// 95% Wald coverage of the true coefficient.
    pub cp: f64,
    /// Rejection rate of `H0: beta = 0` at 5%; present only when the true
    /// coefficient is zero.
    pub type1: Option<f64>,
    pub fail_rate: f64,
    pub successes: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_method: Vec<MethodMetrics>,
    /// Mean misclassification rates over replicates.
    pub misclass: Option<MisclassMetrics>,
}

impl MetricsReport {
    pub fn method(&self, m: Method) -> Option<&MethodMetrics> {
        self.per_method.iter().find(|mm| mm.method == m)
    }

    /// Relative efficiency of `m` versus the HT estimator; errors when HT
    /// was not part of the run.
    pub fn relative_efficiency(&self, m: Method) -> Result<f64> {
        self.method(m)
            .and_then(|mm| mm.re)
            .ok_or_else(|| Error::Estimation("RE requested but HT was not run".to_string()))
    }
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

fn mean_of(acc: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = acc.iter().filter_map(|v| *v).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Aggregate replicate records into the standard report.
///
/// Records are sorted by replicate index first, so the metrics are invariant
/// to the order the replicates arrive in.
pub fn aggregate_metrics(
    records: &[ReplicateRecord],
    methods: &[Method],
    beta_x_true: f64,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::parameter("no replicates to aggregate"));
    }
    let mut ordered: Vec<&ReplicateRecord> = records.iter().collect();
    ordered.sort_by_key(|r| r.replicate);

    let mut per_method_values: BTreeMap<&'static str, Vec<MethodEstimate>> = BTreeMap::new();
    let mut failures: BTreeMap<&'static str, usize> = BTreeMap::new();
    for rec in &ordered {
        for (method, outcome) in &rec.outcomes {
            match outcome {
                MethodOutcome::Estimate(e) => {
                    per_method_values.entry(method.name()).or_default().push(*e)
                }
                MethodOutcome::Failed(_) => {
                    *failures.entry(method.name()).or_default() += 1;
                }
            }
        }
    }

    let ht_ese = per_method_values
        .get(Method::Ht.name())
        .and_then(|v| sample_sd(&v.iter().map(|e| e.beta_x).collect::<Vec<_>>()));

    let total = ordered.len() as f64;
    let mut per_method = Vec::new();
    for &method in methods {
        let estimates = per_method_values
            .get(method.name())
            .cloned()
            .unwrap_or_default();
        let n_ok = estimates.len();
        if n_ok == 0 {
            return Err(Error::Estimation(format!(
                "method {} succeeded on no replicate",
                method.name()
            )));
        }
        let bx: Vec<f64> = estimates.iter().map(|e| e.beta_x).collect();
        let mean_bx = bx.iter().sum::<f64>() / n_ok as f64;
        let pct_bias = if beta_x_true != 0.0 {
            100.0 * (mean_bx - beta_x_true) / beta_x_true
        } else {
            mean_bx
        };
        let ese = sample_sd(&bx);
        let ase = estimates.iter().map(|e| e.se_x).sum::<f64>() / n_ok as f64;
        let mse = bx
            .iter()
            .map(|b| (b - beta_x_true) * (b - beta_x_true))
            .sum::<f64>()
            / n_ok as f64;
        let cp = estimates
            .iter()
            .filter(|e| (e.beta_x - beta_x_true).abs() <= Z_95 * e.se_x)
            .count() as f64
            / n_ok as f64;
        let type1 = if beta_x_true == 0.0 {
            Some(
                estimates
                    .iter()
                    .filter(|e| e.beta_x.abs() > Z_95 * e.se_x)
                    .count() as f64
                    / n_ok as f64,
            )
        } else {
            None
        };
        let re = match (method, ht_ese, ese) {
            (Method::Ht, Some(_), _) => Some(1.0),
            (_, Some(h), Some(e)) if e > 0.0 => Some(h / e),
            _ => None,
        };
        let fails = failures.get(method.name()).copied().unwrap_or(0);
        per_method.push(MethodMetrics {
            method,
            pct_bias,
            ese,
            re,
            ase,
            mse,
            cp,
            type1,
            fail_rate: fails as f64 / total,
            successes: n_ok,
        });
    }

    let sens = mean_of(
        &ordered
            .iter()
            .map(|r| r.misclass.and_then(|m| m.sensitivity))
            .collect::<Vec<_>>(),
    );
    let spec = mean_of(
        &ordered
            .iter()
            .map(|r| r.misclass.and_then(|m| m.specificity))
            .collect::<Vec<_>>(),
    );
    let ppv = mean_of(
        &ordered
            .iter()
            .map(|r| r.misclass.and_then(|m| m.ppv))
            .collect::<Vec<_>>(),
    );
    let npv = mean_of(
        &ordered
            .iter()
            .map(|r| r.misclass.and_then(|m| m.npv))
            .collect::<Vec<_>>(),
    );
    let misclass = if ordered.iter().any(|r| r.misclass.is_some()) {
        Some(MisclassMetrics {
            sensitivity: sens,
            specificity: spec,
            ppv,
            npv,
        })
    } else {
        None
    };

    Ok(MetricsReport {
        per_method,
        misclass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(replicate: usize, method: Method, bx: f64, se: f64) -> ReplicateRecord {
        ReplicateRecord {
            replicate,
            outcomes: vec![(
                method,
                MethodOutcome::Estimate(MethodEstimate {
                    beta_x: bx,
                    se_x: se,
                    beta_z: 0.0,
                    se_z: 1.0,
                }),
            )],
            misclass: None,
            warnings: Vec::new(),
        }
    }

    #[test]
    fn constant_estimates_have_zero_spread() {
        let beta = 0.5;
        let records: Vec<_> = (0..5).map(|i| rec(i, Method::True, beta, 0.1)).collect();
        let report = aggregate_metrics(&records, &[Method::True], beta).unwrap();
        let m = report.method(Method::True).unwrap();
        assert_eq!(m.pct_bias, 0.0);
        assert_eq!(m.ese, Some(0.0));
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.cp, 1.0);
        assert_eq!(m.fail_rate, 0.0);
    }

    #[test]
    fn hand_computed_three_replicates() {
        // Estimates 0.9, 1.0, 1.4 around truth 1.0 with SEs 0.2, 0.1, 0.1.
        let mk = |i, bx, se| ReplicateRecord {
            replicate: i,
            outcomes: vec![
                (
                    Method::Ht,
                    MethodOutcome::Estimate(MethodEstimate {
                        beta_x: bx,
                        se_x: se,
                        beta_z: 0.0,
                        se_z: 1.0,
                    }),
                ),
                (
                    Method::Grn,
                    MethodOutcome::Estimate(MethodEstimate {
                        beta_x: bx * 0.5 + 0.5,
                        se_x: se,
                        beta_z: 0.0,
                        se_z: 1.0,
                    }),
                ),
            ],
            misclass: None,
            warnings: Vec::new(),
        };
        let records = vec![mk(0, 0.9, 0.2), mk(1, 1.0, 0.1), mk(2, 1.4, 0.1)];
        let report = aggregate_metrics(&records, &[Method::Ht, Method::Grn], 1.0).unwrap();
        let ht = report.method(Method::Ht).unwrap();
        // mean 1.1, bias 10%, sd = sqrt(((0.2)^2+(0.1)^2+(0.3)^2)/2)
        assert!((ht.pct_bias - 10.0).abs() < 1e-12);
        let expect_sd = ((0.04 + 0.01 + 0.09) / 2.0_f64).sqrt();
        assert!((ht.ese.unwrap() - expect_sd).abs() < 1e-12);
        assert!((ht.mse - (0.01 + 0.0 + 0.16) / 3.0).abs() < 1e-12);
        // CP: |0.9-1|=0.1 <= 1.96*0.2 yes; |0|<=1.96*0.1 yes; |0.4| <= 0.196 no.
        assert!((ht.cp - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ht.re, Some(1.0));
        // GRN halves the spread: RE = 2.
        let grn = report.method(Method::Grn).unwrap();
        assert!((grn.re.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let records: Vec<_> = (0..20)
            .map(|i| rec(i, Method::True, 0.3 + 0.01 * i as f64, 0.05))
            .collect();
        let mut shuffled = records.clone();
        shuffled.reverse();
        let a = aggregate_metrics(&records, &[Method::True], 0.4).unwrap();
        let b = aggregate_metrics(&shuffled, &[Method::True], 0.4).unwrap();
        let ma = a.method(Method::True).unwrap();
        let mb = b.method(Method::True).unwrap();
        assert_eq!(ma.pct_bias, mb.pct_bias);
        assert_eq!(ma.ese, mb.ese);
        assert_eq!(ma.mse, mb.mse);
    }

    #[test]
    fn re_requires_ht() {
        let records: Vec<_> = (0..3).map(|i| rec(i, Method::True, 0.5, 0.1)).collect();
        let report = aggregate_metrics(&records, &[Method::True], 0.5).unwrap();
        assert!(report.relative_efficiency(Method::True).is_err());
    }

    #[test]
    fn zero_truth_reports_raw_bias_and_type1() {
        let records: Vec<_> = (0..4)
            .map(|i| rec(i, Method::True, if i % 2 == 0 { 0.3 } else { -0.1 }, 0.1))
            .collect();
        let report = aggregate_metrics(&records, &[Method::True], 0.0).unwrap();
        let m = report.method(Method::True).unwrap();
        assert!((m.pct_bias - 0.1).abs() < 1e-12);
        // |0.3| > 1.96*0.1 rejects; |-0.1| does not.
        assert_eq!(m.type1, Some(0.5));
    }
}

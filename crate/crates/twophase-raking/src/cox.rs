//! Weighted Cox proportional-hazards fitting and per-subject influence
//! (delta-beta) computation.
//!
//! The partial likelihood uses the Breslow convention for ties: every event
//! at a tied time shares the full risk set. Fitting is Newton-Raphson with
//! step halving; score residuals and delta-betas come from a second
//! O(N log N) pass over the event-time table.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numeric::{invert_spd, solve_spd};

pub const MAX_ITERATIONS: usize = 50;
pub const MAX_STEP_HALVINGS: usize = 10;
/// Convergence: |score|_inf < SCORE_TOL * (weighted event count).
pub const SCORE_TOL: f64 = 1e-9;
pub const STEP_TOL: f64 = 1e-10;

/// A fitted weighted Cox model.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub beta: Array1<f64>,
    pub score: Array1<f64>,
    /// Observed information of the weighted partial likelihood at `beta`.
    pub information: Array2<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub weights: Array1<f64>,
}

/// Where an influence matrix was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfluenceBasis {
    TrueData,
    ErrorProne,
    Imputed(usize),
}

/// Per-subject delta-beta contributions: `score_residuals * information^-1`.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    pub dfbeta: Array2<f64>,
    pub basis: InfluenceBasis,
}

struct Problem {
    /// Covariates with column means removed (numerical conditioning only;
    /// the partial likelihood, score, and information are shift-invariant).
    x: Array2<f64>,
    time: Array1<f64>,
    event: Array1<f64>,
    weights: Array1<f64>,
    /// Subject indices sorted by time descending.
    order: Vec<usize>,
    weighted_events: f64,
}

fn validate(
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
) -> Result<()> {
    let n = covariates.nrows();
    if time.len() != n || event.len() != n || weights.len() != n {
        return Err(Error::dimension("covariates, time, event, weights disagree"));
    }
    if n == 0 {
        return Err(Error::parameter("empty dataset"));
    }
    if covariates.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("non-finite covariate"));
    }
    if time.iter().any(|v| !v.is_finite()) {
        return Err(Error::parameter("non-finite time"));
    }
    for &d in event.iter() {
        if d != 0.0 && d != 1.0 {
            return Err(Error::parameter("event indicator not in {0, 1}"));
        }
    }
    let mut wsum = 0.0;
    for &w in weights.iter() {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::parameter("weights must be finite and >= 0"));
        }
        wsum += w;
    }
    if wsum <= 0.0 {
        return Err(Error::parameter("weights sum to zero"));
    }
    let wev: f64 = event
        .iter()
        .zip(weights.iter())
        .map(|(&d, &w)| d * w)
        .sum();
    if wev <= 0.0 {
        return Err(Error::NoEvents);
    }
    // A covariate constant across all positively weighted subjects carries
    // no information; the information matrix would be exactly singular.
    for j in 0..covariates.ncols() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            if weights[i] > 0.0 {
                lo = lo.min(covariates[(i, j)]);
                hi = hi.max(covariates[(i, j)]);
            }
        }
        if lo == hi {
            return Err(Error::Singular { min_eigen: 0.0 });
        }
    }
    Ok(())
}

fn build_problem(
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
) -> Result<Problem> {
    validate(covariates, time, event, weights)?;
    let n = covariates.nrows();
    let k = covariates.ncols();
    let mut x = covariates.to_owned();
    for j in 0..k {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).mapv_inplace(|v| v - mean);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].partial_cmp(&time[a]).unwrap().then(a.cmp(&b)));
    let weighted_events = event
        .iter()
        .zip(weights.iter())
        .map(|(&d, &w)| d * w)
        .sum();
    Ok(Problem {
        x,
        time: time.to_owned(),
        event: event.to_owned(),
        weights: weights.to_owned(),
        order,
        weighted_events,
    })
}

struct Evaluation {
    loglik: f64,
    score: Array1<f64>,
    information: Array2<f64>,
}

impl Problem {
    fn k(&self) -> usize {
        self.x.ncols()
    }

    fn linear_predictor(&self, beta: &Array1<f64>) -> Array1<f64> {
        self.x.dot(beta)
    }

    /// One descending sweep: accumulate risk-set sums, then fold in every
    /// event of each tie group against the full group risk set (Breslow).
    fn evaluate(&self, beta: &Array1<f64>) -> Evaluation {
        let k = self.k();
        let eta = self.linear_predictor(beta);
        let mut s0 = 0.0;
        let mut s1 = Array1::<f64>::zeros(k);
        let mut s2 = Array2::<f64>::zeros((k, k));
        let mut loglik = 0.0;
        let mut score = Array1::<f64>::zeros(k);
        let mut information = Array2::<f64>::zeros((k, k));

        let mut pos = 0;
        while pos < self.order.len() {
            let t = self.time[self.order[pos]];
            let mut end = pos;
            while end < self.order.len() && self.time[self.order[end]] == t {
                end += 1;
            }
            for &i in &self.order[pos..end] {
                let we = self.weights[i] * eta[i].exp();
                s0 += we;
                for a in 0..k {
                    let xa = self.x[(i, a)];
                    s1[a] += we * xa;
                    for b in a..k {
                        s2[(a, b)] += we * xa * self.x[(i, b)];
                    }
                }
            }
            for &i in &self.order[pos..end] {
                if self.event[i] == 1.0 && self.weights[i] > 0.0 {
                    let w = self.weights[i];
                    loglik += w * (eta[i] - s0.ln());
                    for a in 0..k {
                        let xbar_a = s1[a] / s0;
                        score[a] += w * (self.x[(i, a)] - xbar_a);
                        for b in a..k {
                            let xbar_b = s1[b] / s0;
                            information[(a, b)] += w * (s2[(a, b)] / s0 - xbar_a * xbar_b);
                        }
                    }
                }
            }
            pos = end;
        }
        for a in 0..k {
            for b in (a + 1)..k {
                let v = information[(a, b)];
                information[(b, a)] = v;
                let s = s2[(a, b)];
                s2[(b, a)] = s;
            }
        }
        Evaluation {
            loglik,
            score,
            information,
        }
    }

    /// Event-time table in ascending order: time, cumulative-hazard increment
    /// `dw/S0`, and risk-set covariate mean at that time.
    fn event_table(&self, beta: &Array1<f64>) -> EventTable {
        let k = self.k();
        let eta = self.linear_predictor(beta);
        let mut s0 = 0.0;
        let mut s1 = Array1::<f64>::zeros(k);
        let mut rows: Vec<(f64, f64, Array1<f64>)> = Vec::new();

        let mut pos = 0;
        while pos < self.order.len() {
            let t = self.time[self.order[pos]];
            let mut end = pos;
            while end < self.order.len() && self.time[self.order[end]] == t {
                end += 1;
            }
            let mut dw = 0.0;
            let mut any_event = false;
            for &i in &self.order[pos..end] {
                let we = self.weights[i] * eta[i].exp();
                s0 += we;
                for a in 0..k {
                    s1[a] += we * self.x[(i, a)];
                }
                if self.event[i] == 1.0 {
                    any_event = true;
                    dw += self.weights[i];
                }
            }
            if any_event && s0 > 0.0 {
                let xbar = &s1 / s0;
                rows.push((t, dw / s0, xbar));
            }
            pos = end;
        }
        rows.reverse();
        let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut g0 = Vec::with_capacity(rows.len());
        let mut g1: Vec<Array1<f64>> = Vec::with_capacity(rows.len());
        let mut xbars: Vec<Array1<f64>> = Vec::with_capacity(rows.len());
        let mut acc0 = 0.0;
        let mut acc1 = Array1::<f64>::zeros(k);
        for (_, a, xbar) in rows {
            acc0 += a;
            acc1 = acc1 + &xbar * a;
            g0.push(acc0);
            g1.push(acc1.clone());
            xbars.push(xbar);
        }
        EventTable {
            times,
            g0,
            g1,
            xbars,
        }
    }
}

struct EventTable {
    times: Vec<f64>,
    /// Prefix sums of dw/S0 (Breslow cumulative hazard increments).
    g0: Vec<f64>,
    /// Prefix sums of (dw/S0) * xbar.
    g1: Vec<Array1<f64>>,
    xbars: Vec<Array1<f64>>,
}

impl EventTable {
    fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&et| et <= t)
    }

    fn exact_index(&self, t: f64) -> Option<usize> {
        let i = self.count_le(t);
        if i > 0 && self.times[i - 1] == t {
            Some(i - 1)
        } else {
            None
        }
    }
}

/// Weighted Breslow partial log-likelihood at `beta`.
pub fn partial_loglik(
    beta: &ArrayView1<f64>,
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
) -> Result<f64> {
    let problem = build_problem(covariates, time, event, weights)?;
    if beta.len() != problem.k() {
        return Err(Error::dimension("beta length mismatch"));
    }
    Ok(problem.evaluate(&beta.to_owned()).loglik)
}

/// Weighted partial likelihood score at `beta`.
pub fn partial_score(
    beta: &ArrayView1<f64>,
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let problem = build_problem(covariates, time, event, weights)?;
    if beta.len() != problem.k() {
        return Err(Error::dimension("beta length mismatch"));
    }
    Ok(problem.evaluate(&beta.to_owned()).score)
}

/// Fit the weighted Cox model by Newton-Raphson with step halving.
pub fn fit_cox(
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
    init: Option<&Array1<f64>>,
) -> Result<CoxFit> {
    let problem = build_problem(covariates, time, event, weights)?;
    let k = problem.k();
    let mut beta = match init {
        Some(b) => {
            if b.len() != k {
                return Err(Error::dimension("init beta length mismatch"));
            }
            b.clone()
        }
        None => Array1::zeros(k),
    };
    let score_tol = SCORE_TOL * problem.weighted_events;

    let mut eval = problem.evaluate(&beta);
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        let delta = solve_spd(&eval.information.view(), &eval.score.view())?;
        let score_norm = eval.score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let step_norm = delta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if score_norm < score_tol && step_norm < STEP_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = false;
        // Round-off in the log-likelihood is relative to its magnitude;
        // accept any step inside that noise band.
        let noise = 1e-11 * (1.0 + eval.loglik.abs());
        for _ in 0..=MAX_STEP_HALVINGS {
            let cand = &beta + &(&delta * step);
            let cand_eval = problem.evaluate(&cand);
            if cand_eval.loglik.is_finite() && cand_eval.loglik >= eval.loglik - noise {
                beta = cand;
                eval = cand_eval;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The likelihood cannot move along the Newton direction even at
            // the smallest step; stop and let the convergence check decide.
            break;
        }
    }
    if !converged {
        let score_norm = eval.score.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let delta = solve_spd(&eval.information.view(), &eval.score.view())?;
        let step_norm = delta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if score_norm < score_tol && step_norm < STEP_TOL {
            converged = true;
        }
    }
    Ok(CoxFit {
        beta,
        score: eval.score,
        information: eval.information,
        loglik: eval.loglik,
        converged,
        iterations,
        weights: weights.to_owned(),
    })
}

/// Per-subject score residuals at the fitted coefficients.
///
/// Row `i` is the event term minus the cumulative-hazard offset; the
/// weighted column sums vanish at the MLE.
pub fn score_residuals(
    fit: &CoxFit,
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
) -> Result<Array2<f64>> {
    if !fit.converged {
        return Err(Error::UnconvergedFit);
    }
    let problem = build_problem(covariates, time, event, weights)?;
    let k = problem.k();
    if fit.beta.len() != k {
        return Err(Error::dimension("fit does not match covariate count"));
    }
    let table = problem.event_table(&fit.beta);
    let eta = problem.linear_predictor(&fit.beta);
    let n = problem.x.nrows();
    let mut residuals = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let idx = table.count_le(problem.time[i]);
        let scale = eta[i].exp();
        for a in 0..k {
            let mut r = 0.0;
            if idx > 0 {
                r -= scale * (problem.x[(i, a)] * table.g0[idx - 1] - table.g1[idx - 1][a]);
            }
            if problem.event[i] == 1.0 {
                if let Some(own) = table.exact_index(problem.time[i]) {
                    r += problem.x[(i, a)] - table.xbars[own][a];
                }
            }
            residuals[(i, a)] = r;
        }
    }
    Ok(residuals)
}

/// Delta-beta influence contributions: `score_residuals * information^-1`.
pub fn dfbeta(
    fit: &CoxFit,
    covariates: &ArrayView2<f64>,
    time: &ArrayView1<f64>,
    event: &ArrayView1<f64>,
    weights: &ArrayView1<f64>,
    basis: InfluenceBasis,
) -> Result<InfluenceSet> {
    let residuals = score_residuals(fit, covariates, time, event, weights)?;
    let inv = invert_spd(&fit.information.view())?;
    Ok(InfluenceSet {
        dfbeta: residuals.dot(&inv),
        basis,
    })
}

/// Robust (sandwich) covariance of an unweighted census fit: the sum of
/// outer products of the delta-beta rows.
pub fn robust_covariance(influence: &InfluenceSet) -> Array2<f64> {
    let d = &influence.dfbeta;
    d.t().dot(d)
}

/// Mean of each dfbeta column, for stationarity diagnostics.
pub fn column_means(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).unwrap()
}

//! Phase-two validation-sample selection.
//!
//! Four designs, each recording the exact realized inclusion probabilities:
//! simple random sampling, case-control (all error-prone cases plus a random
//! control sample), balanced stratified case-control over the eight
//! case-status-by-covariate-quartile strata, and Neyman-allocated stratified
//! case-control where stratum allocations track `N_h * SD_h(influence)`.

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::cohort::{DesignDescriptor, StratumInfo, TwoPhaseSample};
use crate::error::{Error, Result};

/// Requested design, as read from configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    #[serde(default)]
    pub n_target: Option<usize>,
    /// Control:case ratio used when `n_target` is absent for case-control.
    #[serde(default = "default_cc_ratio")]
    pub cc_ratio: f64,
    /// Quantiles of the stratification variable defining the cutpoints.
    #[serde(default = "default_quantiles")]
    pub cutpoint_quantiles: Vec<f64>,
    /// Absolute cutpoints; takes precedence over the quantiles when present.
    #[serde(default)]
    pub cutpoints: Option<Vec<f64>>,
}

fn default_cc_ratio() -> f64 {
    1.0
}

fn default_quantiles() -> Vec<f64> {
    vec![0.2, 0.5, 0.8]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Srs,
    Cc,
    Sccb,
    Sccn,
}

impl std::fmt::Display for DesignKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DesignKind::Srs => "SRS",
            DesignKind::Cc => "CC",
            DesignKind::Sccb => "SCCB",
            DesignKind::Sccn => "SCCN",
        };
        write!(f, "{s}")
    }
}

impl DesignSpec {
    pub fn srs(n: usize) -> Self {
        DesignSpec {
            kind: DesignKind::Srs,
            n_target: Some(n),
            cc_ratio: 1.0,
            cutpoint_quantiles: default_quantiles(),
            cutpoints: None,
        }
    }

    pub fn with_kind(kind: DesignKind, n: usize) -> Self {
        DesignSpec {
            kind,
            n_target: Some(n),
            cc_ratio: 1.0,
            cutpoint_quantiles: default_quantiles(),
            cutpoints: None,
        }
    }
}

/// Sample `k` of `0..n` without replacement, in sorted order.
fn sample_indices(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Simple random sample of `n` from `n_phase1` subjects; `π = n/N`.
pub fn draw_srs(n_phase1: usize, n: usize, rng: &mut impl Rng) -> Result<TwoPhaseSample> {
    if n == 0 || n > n_phase1 {
        return Err(Error::parameter(format!(
            "SRS size {n} out of range for cohort of {n_phase1}"
        )));
    }
    let mut r = vec![false; n_phase1];
    for i in sample_indices(n_phase1, n, rng) {
        r[i] = true;
    }
    let pi = Array1::from_elem(n_phase1, n as f64 / n_phase1 as f64);
    TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n })
}

/// Case-control: every error-prone case, plus a simple random sample of
/// controls filling `n_target` (or `cc_ratio` controls per case when
/// `n_target` is absent). Control inclusion probability is the realized
/// sampled/available fraction.
pub fn draw_case_control(
    delta_star: &ArrayView1<f64>,
    n_target: Option<usize>,
    cc_ratio: f64,
    rng: &mut impl Rng,
) -> Result<TwoPhaseSample> {
    let n = delta_star.len();
    let cases: Vec<usize> = (0..n).filter(|&i| delta_star[i] == 1.0).collect();
    let controls: Vec<usize> = (0..n).filter(|&i| delta_star[i] == 0.0).collect();
    if cases.is_empty() {
        return Err(Error::parameter("case-control design requires at least one case"));
    }
    let wanted_controls = match n_target {
        Some(t) => {
            if t < cases.len() {
                return Err(Error::parameter(format!(
                    "target size {t} is below the {} error-prone cases",
                    cases.len()
                )));
            }
            t - cases.len()
        }
        None => (cc_ratio * cases.len() as f64).round() as usize,
    };
    // Never more controls than exist; realized probabilities stay exact.
    let take = wanted_controls.min(controls.len());
    let mut r = vec![false; n];
    for &i in &cases {
        r[i] = true;
    }
    let mut pi = Array1::from_elem(n, 1.0);
    if !controls.is_empty() {
        let p_control = if take == 0 {
            // Unsampled controls still need a valid recorded probability;
            // a zero-control design cannot occur because take >= 1 whenever
            // estimation is possible, but keep the vector well-formed.
            1.0 / (controls.len() as f64 + 1.0)
        } else {
            take as f64 / controls.len() as f64
        };
        for &i in &controls {
            pi[i] = p_control;
        }
        for pos in sample_indices(controls.len(), take, rng) {
            r[controls[pos]] = true;
        }
    }
    TwoPhaseSample::new(
        r,
        pi,
        DesignDescriptor::CaseControl {
            cases: cases.len(),
            controls_sampled: take,
            controls_available: controls.len(),
        },
    )
}

/// Empirical quantile cutpoints (linear interpolation between order
/// statistics).
pub fn quantile_cutpoints(values: &ArrayView1<f64>, quantiles: &[f64]) -> Result<Vec<f64>> {
    let mut prev = 0.0;
    for &q in quantiles {
        if !(q > 0.0 && q < 1.0) || q <= prev && prev != 0.0 {
            return Err(Error::parameter(
                "quantiles must be strictly increasing within (0, 1)",
            ));
        }
        prev = q;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    Ok(quantiles
        .iter()
        .map(|&q| {
            let h = (n as f64 - 1.0) * q;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        })
        .collect())
}

fn bin_of(value: f64, cutpoints: &[f64]) -> usize {
    cutpoints.iter().filter(|&&c| value > c).count()
}

/// Largest-remainder apportionment of `total` across `weights`, ties broken
/// by ascending index.
fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return vec![0; weights.len()];
    }
    let shares: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        alloc[i] += 1;
    }
    alloc
}

/// Clamp allocations to stratum capacities, redistributing any deficit
/// proportionally to the remaining capacities (largest-remainder rounding)
/// until the total allocation is feasible.
fn redistribute_to_capacity(mut alloc: Vec<usize>, capacity: &[usize]) -> Vec<usize> {
    loop {
        let mut deficit = 0;
        for (a, &cap) in alloc.iter_mut().zip(capacity.iter()) {
            if *a > cap {
                deficit += *a - cap;
                *a = cap;
            }
        }
        if deficit == 0 {
            return alloc;
        }
        let free: Vec<f64> = alloc
            .iter()
            .zip(capacity.iter())
            .map(|(&a, &cap)| (cap - a) as f64)
            .collect();
        if free.iter().sum::<f64>() <= 0.0 {
            return alloc;
        }
        let extra = largest_remainder(deficit, &free);
        for (a, e) in alloc.iter_mut().zip(extra) {
            *a += e;
        }
    }
}

struct Strata {
    /// Stratum id per subject: case_status * bins + bin.
    of_subject: Vec<usize>,
    members: Vec<Vec<usize>>,
    n_bins: usize,
}

fn build_strata(
    delta_star: &ArrayView1<f64>,
    strat_values: &ArrayView1<f64>,
    cutpoints: &[f64],
) -> Result<Strata> {
    if delta_star.len() != strat_values.len() {
        return Err(Error::dimension("delta_star and stratification variable disagree"));
    }
    let n_bins = cutpoints.len() + 1;
    let n_strata = 2 * n_bins;
    let mut of_subject = vec![0usize; delta_star.len()];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_strata];
    for i in 0..delta_star.len() {
        let case = if delta_star[i] == 1.0 { 1 } else { 0 };
        let s = case * n_bins + bin_of(strat_values[i], cutpoints);
        of_subject[i] = s;
        members[s].push(i);
    }
    Ok(Strata {
        of_subject,
        members,
        n_bins,
    })
}

fn finish_stratified(
    strata: Strata,
    alloc: Vec<usize>,
    rng: &mut impl Rng,
    neyman: bool,
) -> Result<TwoPhaseSample> {
    let n = strata.of_subject.len();
    let mut r = vec![false; n];
    let mut pi = Array1::from_elem(n, 1.0);
    let mut info = Vec::new();
    for (s, members) in strata.members.iter().enumerate() {
        let take = alloc[s];
        if members.is_empty() {
            continue;
        }
        let p = take as f64 / members.len() as f64;
        for &i in members {
            // Unsampled strata keep a nominal positive probability; no
            // validated subject lives there so it never enters a weight.
            pi[i] = if take == 0 { f64::MIN_POSITIVE } else { p };
        }
        for pos in sample_indices(members.len(), take, rng) {
            r[members[pos]] = true;
        }
        info.push(StratumInfo {
            case_status: (s / strata.n_bins) as u8,
            bin: s % strata.n_bins,
            size: members.len(),
            sampled: take,
            pi: p,
        });
    }
    // pi must lie in (0, 1]; sanitize the zero-allocation sentinel.
    for v in pi.iter_mut() {
        if *v <= 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    let descriptor = if neyman {
        DesignDescriptor::SccNeyman { strata: info }
    } else {
        DesignDescriptor::SccBalanced { strata: info }
    };
    TwoPhaseSample::new(r, pi, descriptor)
}

/// Balanced stratified case-control: equal target allocation across the
/// `2 * (cutpoints+1)` strata, exhausted strata taken whole with the deficit
/// redistributed proportionally to remaining capacity.
pub fn draw_scc_balanced(
    delta_star: &ArrayView1<f64>,
    strat_values: &ArrayView1<f64>,
    cutpoints: &[f64],
    n_target: usize,
    rng: &mut impl Rng,
) -> Result<TwoPhaseSample> {
    if n_target > delta_star.len() {
        return Err(Error::parameter("target size exceeds the cohort"));
    }
    let strata = build_strata(delta_star, strat_values, cutpoints)?;
    let weights: Vec<f64> = strata
        .members
        .iter()
        .map(|m| if m.is_empty() { 0.0 } else { 1.0 })
        .collect();
    let alloc = largest_remainder(n_target, &weights);
    let capacity: Vec<usize> = strata.members.iter().map(Vec::len).collect();
    let alloc = redistribute_to_capacity(alloc, &capacity);
    finish_stratified(strata, alloc, rng, false)
}

/// Neyman-allocated stratified case-control: allocations proportional to
/// `N_h * SD_h(influence)` with a floor of one per nonempty stratum.
pub fn draw_scc_neyman(
    delta_star: &ArrayView1<f64>,
    strat_values: &ArrayView1<f64>,
    cutpoints: &[f64],
    influence: &ArrayView1<f64>,
    n_target: usize,
    rng: &mut impl Rng,
) -> Result<TwoPhaseSample> {
    if n_target > delta_star.len() {
        return Err(Error::parameter("target size exceeds the cohort"));
    }
    if influence.len() != delta_star.len() {
        return Err(Error::dimension("influence column must cover the cohort"));
    }
    let strata = build_strata(delta_star, strat_values, cutpoints)?;
    let mut weights = Vec::with_capacity(strata.members.len());
    for members in &strata.members {
        if members.is_empty() {
            weights.push(0.0);
            continue;
        }
        let nh = members.len() as f64;
        let mean = members.iter().map(|&i| influence[i]).sum::<f64>() / nh;
        let var = members
            .iter()
            .map(|&i| (influence[i] - mean).powi(2))
            .sum::<f64>()
            / nh;
        weights.push(nh * var.sqrt());
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::parameter(
            "Neyman allocation weights are all zero (no within-stratum variation)",
        ));
    }
    let nonempty: Vec<usize> = strata
        .members
        .iter()
        .enumerate()
        .filter_map(|(s, m)| if m.is_empty() { None } else { Some(s) })
        .collect();
    if n_target < nonempty.len() {
        return Err(Error::parameter(format!(
            "target size {n_target} cannot cover the minimum of one per {} nonempty strata",
            nonempty.len()
        )));
    }
    // Floor of one per nonempty stratum keeps every realized probability
    // positive, then the remainder follows the Neyman weights.
    let mut alloc = vec![0usize; strata.members.len()];
    for &s in &nonempty {
        alloc[s] = 1;
    }
    let rest = largest_remainder(n_target - nonempty.len(), &weights);
    for (a, e) in alloc.iter_mut().zip(rest) {
        *a += e;
    }
    let capacity: Vec<usize> = strata.members.iter().map(Vec::len).collect();
    let alloc = redistribute_to_capacity(alloc, &capacity);
    finish_stratified(strata, alloc, rng, true)
}

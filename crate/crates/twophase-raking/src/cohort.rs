//! Data model for the phase-one cohort, its error-prone view, and the
//! validated phase-two sample.
//!
//! A [`Cohort`] always carries the error-prone columns (`X*`, `Z`, `U*`,
//! `Δ*`) for every subject. Truth columns (`X`, `U`, `Δ`) are stored behind
//! a per-subject mask: simulated cohorts know the truth everywhere, real
//! datasets only on validated rows. Estimators reach truth through
//! [`Cohort::validated`], which refuses subjects outside the sample, so the
//! analysis path cannot silently peek at unvalidated truth.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// How the phase-two sample was drawn, with enough metadata to audit the
/// realized inclusion probabilities.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DesignDescriptor {
    Srs {
        n: usize,
    },
    CaseControl {
        cases: usize,
        controls_sampled: usize,
        controls_available: usize,
    },
    SccBalanced {
        strata: Vec<StratumInfo>,
    },
    SccNeyman {
        strata: Vec<StratumInfo>,
    },
    /// Probabilities supplied externally (e.g. a π column in a CSV).
    External,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StratumInfo {
    pub case_status: u8,
    pub bin: usize,
    pub size: usize,
    pub sampled: usize,
    pub pi: f64,
}

/// Validation indicators and known inclusion probabilities.
#[derive(Debug, Clone)]
pub struct TwoPhaseSample {
    pub r: Vec<bool>,
    pub pi: Array1<f64>,
    pub design: DesignDescriptor,
}

impl TwoPhaseSample {
    pub fn new(r: Vec<bool>, pi: Array1<f64>, design: DesignDescriptor) -> Result<Self> {
        if r.len() != pi.len() {
            return Err(Error::dimension("r and pi lengths differ"));
        }
        for (i, &p) in pi.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::parameter(format!(
                    "inclusion probability out of (0, 1] for subject {i}: {p}"
                )));
            }
        }
        Ok(TwoPhaseSample { r, pi, design })
    }

    pub fn n_validated(&self) -> usize {
        self.r.iter().filter(|&&v| v).count()
    }

    pub fn validated_indices(&self) -> Vec<usize> {
        self.r
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| if v { Some(i) } else { None })
            .collect()
    }
}

/// Per-subject truth columns, present where `mask` is set.
#[derive(Debug, Clone)]
struct TruthColumns {
    mask: Vec<bool>,
    x: Array2<f64>,
    u: Array1<f64>,
    delta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    x_star: Array2<f64>,
    z: Array2<f64>,
    u_star: Array1<f64>,
    delta_star: Array1<f64>,
    truth: TruthColumns,
}

/// Truth rows extracted for the validated subset, in `indices` order.
#[derive(Debug, Clone)]
pub struct ValidatedTruth {
    pub indices: Vec<usize>,
    /// `[X, Z]` side by side, one row per validated subject.
    pub covariates: Array2<f64>,
    pub time: Array1<f64>,
    pub event: Array1<f64>,
    pub pi: Array1<f64>,
}

fn check_indicator(name: &str, v: &Array1<f64>) -> Result<()> {
    for (i, &d) in v.iter().enumerate() {
        if d != 0.0 && d != 1.0 {
            return Err(Error::parameter(format!("{name}[{i}] = {d} not in {{0, 1}}")));
        }
    }
    Ok(())
}

impl Cohort {
    /// Cohort with full truth (simulation mode, or a completely validated
    /// dataset).
    pub fn new_simulated(
        x_star: Array2<f64>,
        z: Array2<f64>,
        u_star: Array1<f64>,
        delta_star: Array1<f64>,
        x_true: Array2<f64>,
        u_true: Array1<f64>,
        delta_true: Array1<f64>,
    ) -> Result<Self> {
        let n = x_star.nrows();
        let mask = vec![true; n];
        Self::new_partial(x_star, z, u_star, delta_star, x_true, u_true, delta_true, mask)
    }

    /// Cohort whose truth columns are only present where `truth_mask` is set
    /// (entries elsewhere are ignored and may be NaN).
    #[allow(clippy::too_many_arguments)]
    pub fn new_partial(
        x_star: Array2<f64>,
        z: Array2<f64>,
        u_star: Array1<f64>,
        delta_star: Array1<f64>,
        x_true: Array2<f64>,
        u_true: Array1<f64>,
        delta_true: Array1<f64>,
        truth_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = x_star.nrows();
        if z.nrows() != n
            || u_star.len() != n
            || delta_star.len() != n
            || x_true.nrows() != n
            || u_true.len() != n
            || delta_true.len() != n
            || truth_mask.len() != n
        {
            return Err(Error::dimension("cohort columns disagree on subject count"));
        }
        if x_true.ncols() != x_star.ncols() {
            return Err(Error::dimension("x and x_star disagree on column count"));
        }
        for (i, &u) in u_star.iter().enumerate() {
            if !(u >= 0.0) {
                return Err(Error::parameter(format!("u_star[{i}] = {u} < 0")));
            }
        }
        check_indicator("delta_star", &delta_star)?;
        for i in 0..n {
            if truth_mask[i] {
                if !(u_true[i] >= 0.0) {
                    return Err(Error::parameter(format!("u[{i}] = {} < 0", u_true[i])));
                }
                let d = delta_true[i];
                if d != 0.0 && d != 1.0 {
                    return Err(Error::parameter(format!("delta[{i}] = {d} not in {{0, 1}}")));
                }
                if x_true.row(i).iter().any(|v| !v.is_finite()) {
                    return Err(Error::parameter(format!("x[{i}] not finite")));
                }
            }
        }
        Ok(Cohort {
            x_star,
            z,
            u_star,
            delta_star,
            truth: TruthColumns {
                mask: truth_mask,
                x: x_true,
                u: u_true,
                delta: delta_true,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.x_star.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_star.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    pub fn x_star(&self) -> &Array2<f64> {
        &self.x_star
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn u_star(&self) -> &Array1<f64> {
        &self.u_star
    }

    pub fn delta_star(&self) -> &Array1<f64> {
        &self.delta_star
    }

    pub fn truth_mask(&self) -> &[bool] {
        &self.truth.mask
    }

    /// `[X*, Z]` for the full cohort (the naive analysis covariates).
    pub fn error_prone_covariates(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n(), self.p() + self.q()));
        m.slice_mut(ndarray::s![.., ..self.p()]).assign(&self.x_star);
        m.slice_mut(ndarray::s![.., self.p()..]).assign(&self.z);
        m
    }

    /// Truth row accessor for the analysis path: errors outside the sample.
    pub fn truth_row(
        &self,
        i: usize,
        sample: &TwoPhaseSample,
    ) -> Result<(Vec<f64>, f64, f64)> {
        if !sample.r[i] {
            return Err(Error::NotValidated { subject: i });
        }
        if !self.truth.mask[i] {
            return Err(Error::schema(format!(
                "subject {i} is marked validated but carries no truth columns"
            )));
        }
        Ok((
            self.truth.x.row(i).to_vec(),
            self.truth.u[i],
            self.truth.delta[i],
        ))
    }

    /// Extract the validated truth block for estimation.
    pub fn validated(&self, sample: &TwoPhaseSample) -> Result<ValidatedTruth> {
        if sample.r.len() != self.n() {
            return Err(Error::dimension("sample and cohort sizes differ"));
        }
        let indices = sample.validated_indices();
        if indices.is_empty() {
            return Err(Error::ValidationTooSmall {
                observed: 0,
                required: self.p() + self.q() + 2,
            });
        }
        let k = self.p() + self.q();
        let mut covariates = Array2::zeros((indices.len(), k));
        let mut time = Array1::zeros(indices.len());
        let mut event = Array1::zeros(indices.len());
        let mut pi = Array1::zeros(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if !self.truth.mask[i] {
                return Err(Error::schema(format!(
                    "subject {i} is marked validated but carries no truth columns"
                )));
            }
            for j in 0..self.p() {
                covariates[(row, j)] = self.truth.x[(i, j)];
            }
            for j in 0..self.q() {
                covariates[(row, self.p() + j)] = self.z[(i, j)];
            }
            time[row] = self.truth.u[i];
            event[row] = self.truth.delta[i];
            pi[row] = sample.pi[i];
        }
        Ok(ValidatedTruth {
            indices,
            covariates,
            time,
            event,
            pi,
        })
    }

    /// Full-cohort truth, available only when every subject is validated
    /// (simulation mode). This is the benchmark path; two-phase estimators
    /// must go through [`Cohort::validated`].
    pub fn full_truth(&self) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
        if self.truth.mask.iter().any(|&m| !m) {
            return Err(Error::schema(
                "full truth requested but some subjects are unvalidated".to_string(),
            ));
        }
        let mut covariates = Array2::zeros((self.n(), self.p() + self.q()));
        covariates
            .slice_mut(ndarray::s![.., ..self.p()])
            .assign(&self.truth.x);
        covariates
            .slice_mut(ndarray::s![.., self.p()..])
            .assign(&self.z);
        Ok((covariates, self.truth.u.clone(), self.truth.delta.clone()))
    }

    /// Truth minus star, by column role, for validated subjects (used for the
    /// censoring-offset response `R = U* - U`).
    pub fn validated_response(
        &self,
        sample: &TwoPhaseSample,
        response: Response,
    ) -> Result<Array1<f64>> {
        let v = self.validated(sample)?;
        let mut out = Array1::zeros(v.indices.len());
        for (row, &i) in v.indices.iter().enumerate() {
            out[row] = match response {
                Response::Delta => self.truth.delta[i],
                Response::X => self.truth.x[(i, 0)],
                Response::ROffset => self.u_star[i] - self.truth.u[i],
            };
        }
        Ok(out)
    }
}

/// Imputed replacements for the error-prone columns, indexed by imputation.
#[derive(Debug, Clone)]
pub struct ImputedOverlay {
    pub delta_hat: Array1<f64>,
    pub x_hat: Option<Array2<f64>>,
    pub u_hat: Option<Array1<f64>>,
    pub m_index: usize,
}

/// Response variable of a working regression model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Delta,
    X,
    ROffset,
}

/// Column roles a working-model design matrix can reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    DeltaStar,
    DeltaHat,
    XStar,
    XHat,
    UStar,
    UHat,
    Z,
}

impl Role {
    /// Canonical ordering: delta block, x block, u block, z block.
    fn rank(self) -> u8 {
        match self {
            Role::DeltaStar | Role::DeltaHat => 0,
            Role::XStar | Role::XHat => 1,
            Role::UStar | Role::UHat => 2,
            Role::Z => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interactions {
    None,
    AllTwoWay,
}

/// Working-model specification: response, predictor roles, and whether all
/// pairwise interactions are appended.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub response: Response,
    pub predictors: Vec<Role>,
    pub interactions: Interactions,
}

impl ModelSpec {
    pub fn main_effects(response: Response, predictors: Vec<Role>) -> Self {
        ModelSpec {
            response,
            predictors,
            interactions: Interactions::None,
        }
    }

    pub fn with_interactions(mut self, on: bool) -> Self {
        self.interactions = if on {
            Interactions::AllTwoWay
        } else {
            Interactions::None
        };
        self
    }
}

/// Build the design matrix for a working model over all `N` subjects.
///
/// Columns are ordered: intercept, then the delta/x/u/z roles in canonical
/// order, then all two-way products in sorted pair order when requested.
/// Roles referencing imputed values pull from `overlay` and error when it is
/// absent.
pub fn build_design_matrix(
    cohort: &Cohort,
    spec: &ModelSpec,
    overlay: Option<&ImputedOverlay>,
) -> Result<Array2<f64>> {
    let n = cohort.n();
    let mut roles = spec.predictors.clone();
    roles.sort_by_key(|r| (r.rank(), *r));
    roles.dedup();

    let mut main_cols: Vec<Array1<f64>> = Vec::new();
    for role in &roles {
        match role {
            Role::DeltaStar => main_cols.push(cohort.delta_star.clone()),
            Role::DeltaHat => {
                let o = overlay.ok_or_else(|| Error::schema("DeltaHat requires an overlay"))?;
                main_cols.push(o.delta_hat.clone());
            }
            Role::XStar => {
                for j in 0..cohort.p() {
                    main_cols.push(cohort.x_star.index_axis(Axis(1), j).to_owned());
                }
            }
            Role::XHat => {
                let o = overlay.ok_or_else(|| Error::schema("XHat requires an overlay"))?;
                let x = o
                    .x_hat
                    .as_ref()
                    .ok_or_else(|| Error::schema("XHat requested but overlay has no x_hat"))?;
                for j in 0..x.ncols() {
                    main_cols.push(x.index_axis(Axis(1), j).to_owned());
                }
            }
            Role::UStar => main_cols.push(cohort.u_star.clone()),
            Role::UHat => {
                let o = overlay.ok_or_else(|| Error::schema("UHat requires an overlay"))?;
                let u = o
                    .u_hat
                    .as_ref()
                    .ok_or_else(|| Error::schema("UHat requested but overlay has no u_hat"))?;
                main_cols.push(u.clone());
            }
            Role::Z => {
                for j in 0..cohort.q() {
                    main_cols.push(cohort.z.index_axis(Axis(1), j).to_owned());
                }
            }
        }
    }

    let n_main = main_cols.len();
    let n_inter = match spec.interactions {
        Interactions::None => 0,
        Interactions::AllTwoWay => n_main * (n_main - 1) / 2,
    };
    let mut design = Array2::zeros((n, 1 + n_main + n_inter));
    design.column_mut(0).fill(1.0);
    for (j, col) in main_cols.iter().enumerate() {
        design.column_mut(1 + j).assign(col);
    }
    if let Interactions::AllTwoWay = spec.interactions {
        let mut k = 1 + n_main;
        for a in 0..n_main {
            for b in (a + 1)..n_main {
                let prod = &main_cols[a] * &main_cols[b];
                design.column_mut(k).assign(&prod);
                k += 1;
            }
        }
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_cohort() -> Cohort {
        let n = 6;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 * 0.5 - 1.0);
        let z = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
        let u = Array1::from_shape_fn(n, |i| 1.0 + i as f64);
        let d = array![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        Cohort::new_simulated(x.clone(), z, u.clone(), d.clone(), x, u, d).unwrap()
    }

    fn full_sample(n: usize) -> TwoPhaseSample {
        TwoPhaseSample::new(vec![true; n], Array1::ones(n), DesignDescriptor::Srs { n }).unwrap()
    }

    #[test]
    fn main_effects_design_is_n_by_five() {
        let c = toy_cohort();
        let spec = ModelSpec::main_effects(
            Response::Delta,
            vec![Role::DeltaStar, Role::XStar, Role::UStar, Role::Z],
        );
        let m = build_design_matrix(&c, &spec, None).unwrap();
        assert_eq!(m.dim(), (6, 5));
        assert!(m.column(0).iter().all(|&v| v == 1.0));
        // Canonical order: intercept, delta, x, u, z.
        assert_eq!(m[(2, 1)], 1.0); // delta_star
        assert_eq!(m[(2, 2)], 0.0); // x at i=2
        assert_eq!(m[(2, 3)], 3.0); // u
    }

    #[test]
    fn no_u_design_is_n_by_four() {
        let c = toy_cohort();
        let spec = ModelSpec::main_effects(
            Response::ROffset,
            vec![Role::DeltaStar, Role::XStar, Role::Z],
        );
        let m = build_design_matrix(&c, &spec, None).unwrap();
        assert_eq!(m.dim(), (6, 4));
    }

    #[test]
    fn all_two_way_adds_choose_two_columns() {
        let c = toy_cohort();
        let spec = ModelSpec::main_effects(
            Response::Delta,
            vec![Role::DeltaStar, Role::XStar, Role::UStar, Role::Z],
        )
        .with_interactions(true);
        let m = build_design_matrix(&c, &spec, None).unwrap();
        assert_eq!(m.dim(), (6, 1 + 4 + 6));
        // First interaction is delta_star * x.
        for i in 0..6 {
            assert_eq!(m[(i, 5)], m[(i, 1)] * m[(i, 2)]);
        }
    }

    #[test]
    fn overlay_roles_require_overlay() {
        let c = toy_cohort();
        let spec = ModelSpec::main_effects(Response::X, vec![Role::DeltaHat, Role::Z]);
        assert!(build_design_matrix(&c, &spec, None).is_err());
        let overlay = ImputedOverlay {
            delta_hat: Array1::ones(6),
            x_hat: None,
            u_hat: None,
            m_index: 0,
        };
        let m = build_design_matrix(&c, &spec, Some(&overlay)).unwrap();
        assert_eq!(m.dim(), (6, 3));
        assert!(m.column(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truth_access_masked_outside_sample() {
        let c = toy_cohort();
        let mut r = vec![false; 6];
        r[2] = true;
        r[4] = true;
        r[5] = true;
        let pi = Array1::from_elem(6, 0.5);
        let s = TwoPhaseSample::new(r, pi, DesignDescriptor::Srs { n: 3 }).unwrap();
        assert!(c.truth_row(2, &s).is_ok());
        match c.truth_row(1, &s) {
            Err(Error::NotValidated { subject }) => assert_eq!(subject, 1),
            other => panic!("expected NotValidated, got {other:?}"),
        }
        let v = c.validated(&s).unwrap();
        assert_eq!(v.indices, vec![2, 4, 5]);
        assert_eq!(v.time[0], 3.0);
    }

    #[test]
    fn full_truth_requires_complete_mask() {
        let c = toy_cohort();
        assert!(c.full_truth().is_ok());
        let n = 4;
        let x = Array2::zeros((n, 1));
        let z = Array2::zeros((n, 1));
        let u = Array1::ones(n);
        let d = array![1.0, 0.0, 1.0, 0.0];
        let partial = Cohort::new_partial(
            x.clone(),
            z,
            u.clone(),
            d.clone(),
            x,
            u,
            d,
            vec![true, false, true, false],
        )
        .unwrap();
        assert!(partial.full_truth().is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        let n = 3;
        let x = Array2::zeros((n, 1));
        let z = Array2::zeros((n, 1));
        let u = array![1.0, -2.0, 3.0];
        let d = array![1.0, 0.0, 1.0];
        assert!(Cohort::new_simulated(x.clone(), z.clone(), u, d.clone(), x.clone(), array![1.0, 2.0, 3.0], d).is_err());
        let bad_pi = Array1::from_elem(n, 1.5);
        assert!(TwoPhaseSample::new(vec![true; n], bad_pi, DesignDescriptor::External).is_err());
    }

    #[test]
    fn sample_counts() {
        let s = full_sample(6);
        assert_eq!(s.n_validated(), 6);
        assert_eq!(s.validated_indices().len(), 6);
    }
}

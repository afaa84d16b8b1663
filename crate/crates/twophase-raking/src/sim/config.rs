//! Simulation scenario configuration.

use serde::{Deserialize, Serialize};

use crate::designs::DesignSpec;
use crate::error::{Error, Result};

/// Which variables carry error in the generated data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorScenario {
    /// Misclassified event indicator only.
    DeltaOnly,
    /// Misclassification plus additive follow-up-time error.
    DeltaTime,
    /// Misclassification, time error, and covariate error.
    DeltaTimeCovariate,
}

impl ErrorScenario {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(ErrorScenario::DeltaOnly),
            2 => Ok(ErrorScenario::DeltaTime),
            3 => Ok(ErrorScenario::DeltaTimeCovariate),
            other => Err(Error::Config(format!("unknown error scenario {other}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            ErrorScenario::DeltaOnly => 1,
            ErrorScenario::DeltaTime => 2,
            ErrorScenario::DeltaTimeCovariate => 3,
        }
    }

    pub fn has_time_error(self) -> bool {
        !matches!(self, ErrorScenario::DeltaOnly)
    }

    pub fn has_covariate_error(self) -> bool {
        matches!(self, ErrorScenario::DeltaTimeCovariate)
    }
}

/// Misclassification generator families for the event indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisclassModel {
    /// Main-effects logistic model.
    Main,
    /// Alternative main-effects model used in the design-comparison runs;
    /// the intercept depends on the target effect size.
    DesignCompare,
    /// Main effects plus event-by-covariate interactions.
    Interactions,
}

/// Logistic coefficients generating the error-prone event indicator from
/// the true data.
#[derive(Debug, Clone, Copy)]
pub struct MisclassCoefficients {
    pub intercept: f64,
    pub delta: f64,
    pub x: f64,
    pub u: f64,
    pub z: f64,
    pub delta_x: f64,
    pub delta_u: f64,
    pub delta_z: f64,
}

impl MisclassModel {
    pub fn coefficients(self, beta_x: f64) -> MisclassCoefficients {
        match self {
            MisclassModel::Main => MisclassCoefficients {
                intercept: -1.1,
                delta: 3.0,
                x: -0.3,
                u: -0.2,
                z: 0.1,
                delta_x: 0.0,
                delta_u: 0.0,
                delta_z: 0.0,
            },
            MisclassModel::DesignCompare => MisclassCoefficients {
                // Larger effect sizes pair with the lower intercept.
                intercept: if beta_x > 3.0_f64.ln() - 1e-9 { -1.5 } else { -1.0 },
                delta: 4.0,
                x: 0.5,
                u: -0.5,
                z: -0.5,
                delta_x: 0.0,
                delta_u: 0.0,
                delta_z: 0.0,
            },
            MisclassModel::Interactions => MisclassCoefficients {
                intercept: -1.1,
                delta: 0.5,
                x: -0.25,
                u: -0.1,
                z: 0.2,
                delta_x: 0.85,
                delta_u: 0.2,
                delta_z: 0.8,
            },
        }
    }
}

/// Estimators the replication engine can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    True,
    Ht,
    Grn,
    Grmis,
    Grmic,
    Grfcsmis,
    Grfcsmic,
    IfGrmis,
    IfGrmic,
    IfGrfcsmis,
    IfGrfcsmic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::True => "True",
            Method::Ht => "HT",
            Method::Grn => "GRN",
            Method::Grmis => "GRMIS",
            Method::Grmic => "GRMIC",
            Method::Grfcsmis => "GRFCSMIS",
            Method::Grfcsmic => "GRFCSMIC",
            Method::IfGrmis => "IF-GRMIS",
            Method::IfGrmic => "IF-GRMIC",
            Method::IfGrfcsmis => "IF-GRFCSMIS",
            Method::IfGrfcsmic => "IF-GRFCSMIC",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "true" => Method::True,
            "ht" => Method::Ht,
            "grn" => Method::Grn,
            "grmis" => Method::Grmis,
            "grmic" => Method::Grmic,
            "grfcsmis" => Method::Grfcsmis,
            "grfcsmic" => Method::Grfcsmic,
            "if-grmis" => Method::IfGrmis,
            "if-grmic" => Method::IfGrmic,
            "if-grfcsmis" => Method::IfGrfcsmis,
            "if-grfcsmic" => Method::IfGrfcsmic,
            other => return Err(Error::Config(format!("unknown method '{other}'"))),
        })
    }
}

/// One simulation cell: a full description of the data-generating process,
/// the design, and the estimators to run.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub n_cohort: usize,
    pub n_validation: usize,
    pub beta_x: f64,
    pub beta_z: f64,
    pub lambda0: f64,
    pub censoring_target: f64,
    pub scenario: ErrorScenario,
    pub misclass: MisclassModel,
    /// When set, the error-prone columns equal the truth.
    pub error_free: bool,
    pub design: DesignSpec,
    pub methods: Vec<Method>,
    pub imputations: usize,
    pub chain_iterations: usize,
    pub replicates: usize,
    pub seed: u64,
    pub aux_intercept: bool,
    /// Stream-id prefix isolating this cell from others in a batch.
    pub cell_id: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.censoring_target > 0.0 && self.censoring_target < 1.0) {
            return Err(Error::Config("censoring target must lie in (0, 1)".into()));
        }
        if self.n_validation > self.n_cohort {
            return Err(Error::Config("validation size exceeds cohort size".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate required".into()));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::Config("baseline rate must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        Ok(())
    }
}

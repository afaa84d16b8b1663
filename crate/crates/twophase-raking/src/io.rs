//! Tabular IO: the cohort CSV schema, metric tables, influence-pair
//! exports, and the run manifest.
//!
//! Numeric cells are written with 17 significant digits so every 64-bit
//! float round-trips exactly; absent values are empty cells.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, DesignDescriptor, TwoPhaseSample};
use crate::error::{Error, Result};
use crate::sim::{MethodMetrics, MisclassMetrics};

/// 17 significant digits: exact round-trip for f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_f64(x),
        None => String::new(),
    }
}

pub const METRICS_HEADER: &str =
    "scenario,censoring,beta_x_true,design,method,pct_bias,ese,re,ase,mse,cp,type1,fail_rate";

/// One metrics CSV row: a simulation cell crossed with a method.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub scenario: u8,
    pub censoring: f64,
    pub beta_x_true: f64,
    pub design: String,
    pub metrics: MethodMetrics,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv_string(rows))?;
    Ok(())
}

/// Render the metrics CSV to a string (used by determinism checks).
pub fn metrics_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.scenario,
            fmt_f64(row.censoring),
            fmt_f64(row.beta_x_true),
            row.design,
            m.method.name(),
            fmt_f64(m.pct_bias),
            fmt_opt(m.ese),
            fmt_opt(m.re),
            fmt_f64(m.ase),
            fmt_f64(m.mse),
            fmt_f64(m.cp),
            fmt_opt(m.type1),
            fmt_f64(m.fail_rate),
        ));
    }
    out
}

pub const COHORT_HEADER: &str = "id,x_star,z,u_star,delta_star,r,pi,x_true,u_true,delta_true";

/// Write a cohort and its sample to the canonical CSV schema. Truth cells
/// are empty outside the validation sample.
pub fn write_cohort_csv(path: &Path, cohort: &Cohort, sample: &TwoPhaseSample) -> Result<()> {
    if cohort.p() != 1 || cohort.q() != 1 {
        return Err(Error::schema(
            "canonical cohort CSV covers one error-prone and one precise covariate",
        ));
    }
    let mut out = String::new();
    out.push_str(COHORT_HEADER);
    out.push('\n');
    for i in 0..cohort.n() {
        let (x_true, u_true, d_true) = if sample.r[i] {
            let (x, u, d) = cohort.truth_row(i, sample)?;
            (fmt_f64(x[0]), fmt_f64(u), fmt_f64(d))
        } else {
            (String::new(), String::new(), String::new())
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            i,
            fmt_f64(cohort.x_star()[(i, 0)]),
            fmt_f64(cohort.z()[(i, 0)]),
            fmt_f64(cohort.u_star()[i]),
            fmt_f64(cohort.delta_star()[i]),
            if sample.r[i] { 1 } else { 0 },
            fmt_f64(sample.pi[i]),
            x_true,
            u_true,
            d_true,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Column mapping for reading an external two-phase CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub x_star: String,
    pub z: String,
    pub u_star: String,
    pub delta_star: String,
    pub r: String,
    #[serde(default)]
    pub pi: Option<String>,
    pub x_true: String,
    pub u_true: String,
    pub delta_true: String,
    /// Per-unit scaling applied when reporting hazard ratios, keyed by
    /// covariate column name.
    #[serde(default)]
    pub hr_scale: BTreeMap<String, f64>,
}

impl ColumnMap {
    pub fn canonical() -> Self {
        ColumnMap {
            x_star: "x_star".into(),
            z: "z".into(),
            u_star: "u_star".into(),
            delta_star: "delta_star".into(),
            r: "r".into(),
            pi: Some("pi".into()),
            x_true: "x_true".into(),
            u_true: "u_true".into(),
            delta_true: "delta_true".into(),
            hr_scale: BTreeMap::new(),
        }
    }
}

/// Read a two-phase CSV under a column mapping. Truth cells must be present
/// exactly on rows with `r = 1`; π comes from the mapped column when named.
pub fn read_cohort_csv(path: &Path, map: &ColumnMap) -> Result<(Cohort, TwoPhaseSample)> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("missing column '{name}'")))
    };
    let ix = col(&map.x_star)?;
    let iz = col(&map.z)?;
    let iu = col(&map.u_star)?;
    let id_ = col(&map.delta_star)?;
    let ir = col(&map.r)?;
    let ipi = match &map.pi {
        Some(name) => Some(col(name)?),
        None => None,
    };
    let ixt = col(&map.x_true)?;
    let iut = col(&map.u_true)?;
    let idt = col(&map.delta_true)?;

    let parse = |field: &str, row: usize, name: &str| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            Error::schema(format!("row {row}: cannot parse {name} value '{field}'"))
        })
    };

    let mut x_star = Vec::new();
    let mut z = Vec::new();
    let mut u_star = Vec::new();
    let mut delta_star = Vec::new();
    let mut r = Vec::new();
    let mut pi = Vec::new();
    let mut x_true = Vec::new();
    let mut u_true = Vec::new();
    let mut delta_true = Vec::new();
    let mut mask = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        x_star.push(parse(&record[ix], row, "x_star")?);
        z.push(parse(&record[iz], row, "z")?);
        u_star.push(parse(&record[iu], row, "u_star")?);
        delta_star.push(parse(&record[id_], row, "delta_star")?);
        let r_i = parse(&record[ir], row, "r")?;
        if r_i != 0.0 && r_i != 1.0 {
            return Err(Error::schema(format!("row {row}: r must be 0/1")));
        }
        let validated = r_i == 1.0;
        r.push(validated);
        if let Some(ipi) = ipi {
            let p = parse(&record[ipi], row, "pi")?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::schema(format!(
                    "row {row}: pi = {p} outside (0, 1]"
                )));
            }
            pi.push(p);
        }
        let truth_fields = [&record[ixt], &record[iut], &record[idt]];
        let any_truth = truth_fields.iter().any(|f| !f.trim().is_empty());
        if validated {
            if !any_truth && truth_fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::schema(format!(
                    "row {row}: validated but truth columns are empty"
                )));
            }
            x_true.push(parse(&record[ixt], row, "x_true")?);
            u_true.push(parse(&record[iut], row, "u_true")?);
            delta_true.push(parse(&record[idt], row, "delta_true")?);
            mask.push(true);
        } else {
            x_true.push(f64::NAN);
            u_true.push(f64::NAN);
            delta_true.push(f64::NAN);
            mask.push(false);
        }
    }

    let n = x_star.len();
    if n == 0 {
        return Err(Error::schema("empty data file"));
    }
    let pi = if pi.is_empty() {
        return Err(Error::schema(
            "no pi column mapped; provide one or derive the sample from a design",
        ));
    } else {
        Array1::from_vec(pi)
    };
    let cohort = Cohort::new_partial(
        Array2::from_shape_vec((n, 1), x_star).unwrap(),
        Array2::from_shape_vec((n, 1), z).unwrap(),
        Array1::from_vec(u_star),
        Array1::from_vec(delta_star),
        Array2::from_shape_vec((n, 1), x_true).unwrap(),
        Array1::from_vec(u_true),
        Array1::from_vec(delta_true),
        mask,
    )?;
    let sample = TwoPhaseSample::new(r, pi, DesignDescriptor::External)?;
    Ok((cohort, sample))
}

/// Read only the columns a design draw needs.
pub struct DesignInput {
    pub delta_star: Array1<f64>,
    pub strat: Array1<f64>,
    pub influence: Option<Array1<f64>>,
}

pub fn read_design_input(
    path: &Path,
    delta_star_col: &str,
    strat_col: &str,
    influence_col: Option<&str>,
) -> Result<DesignInput> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema(format!("missing column '{name}'")))
    };
    let id_ = col(delta_star_col)?;
    let is = col(strat_col)?;
    let ii = match influence_col {
        Some(name) => Some(col(name)?),
        None => None,
    };
    let mut delta = Vec::new();
    let mut strat = Vec::new();
    let mut infl = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        delta.push(record[id_].trim().parse::<f64>().map_err(|_| {
            Error::schema(format!("row {row}: bad {delta_star_col}"))
        })?);
        strat.push(record[is].trim().parse::<f64>().map_err(|_| {
            Error::schema(format!("row {row}: bad {strat_col}"))
        })?);
        if let Some(ii) = ii {
            infl.push(record[ii].trim().parse::<f64>().map_err(|_| {
                Error::schema(format!("row {row}: bad influence column"))
            })?);
        }
    }
    Ok(DesignInput {
        delta_star: Array1::from_vec(delta),
        strat: Array1::from_vec(strat),
        influence: if infl.is_empty() {
            None
        } else {
            Some(Array1::from_vec(infl))
        },
    })
}

/// Everything needed to reproduce a run bit-for-bit, plus surfaced warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default)]
    pub censoring_bounds: Vec<CensoringBound>,
    #[serde(default)]
    pub method_failures: Vec<MethodFailureCount>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub misclassification: Vec<MisclassSummary>,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoringBound {
    pub beta_x: f64,
    pub beta_z: f64,
    pub lambda0: f64,
    pub target: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodFailureCount {
    pub cell: String,
    pub method: String,
    pub failures: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MisclassSummary {
    pub cell: String,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

impl From<(&str, &MisclassMetrics)> for MisclassSummary {
    fn from((cell, m): (&str, &MisclassMetrics)) -> Self {
        MisclassSummary {
            cell: cell.to_string(),
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            ppv: m.ppv,
            npv: m.npv,
        }
    }
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            censoring_bounds: Vec::new(),
            method_failures: Vec::new(),
            warnings: Vec::new(),
            misclassification: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::schema(format!("manifest serialization: {e}")))?;
        file.write_all(text.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// Influence-pair CSV used by the diagnostics command.
pub const INFLUENCE_HEADER: &str = "channel,subject,true_x,errorprone_x,true_z,errorprone_z";

pub fn influence_csv_string(pairs: &[crate::sim::InfluencePair]) -> String {
    let mut out = String::new();
    out.push_str(INFLUENCE_HEADER);
    out.push('\n');
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.channel.name(),
            p.subject,
            fmt_f64(p.true_x),
            fmt_f64(p.error_x),
            fmt_f64(p.true_z),
            fmt_f64(p.error_z),
        ));
    }
    out
}

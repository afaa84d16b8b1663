//! Command-line surface: `simulate`, `analyze`, `design`, and `diagnose`.
//!
//! Every command writes its outputs plus a JSON manifest capturing the
//! configuration, seed, calibrated constants, and all warnings; exit code 0
//! means every output file was written and schema-valid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    build_auxiliary_naive, ht_estimate, naive_influence, raking_estimate, true_estimate,
};
use crate::cohort::{Cohort, DesignDescriptor, TwoPhaseSample};
use crate::cox;
use crate::designs::{
    draw_case_control, draw_scc_balanced, draw_scc_neyman, draw_srs, quantile_cutpoints,
    DesignKind, DesignSpec,
};
use crate::error::{Error, Result};
use crate::imputation::{
    fcsmi_auxiliary, grmi_auxiliary, if_calibration_auxiliary, ImputedVars, MiOptions,
};
use crate::io::{
    self, fmt_f64, influence_csv_string, read_cohort_csv, read_design_input, ColumnMap,
    MetricsRow, RunManifest,
};
use crate::sim::{
    run_batch, ErrorScenario, InfluenceDiagnosticConfig, Method, MisclassModel, ScenarioConfig,
    Z_95,
};

#[derive(Parser)]
#[command(
    name = "twophase-raking",
    version,
    about = "Generalized raking estimation for Cox models in two-phase designs"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated simulation benchmark from a JSON config.
    Simulate(SimulateArgs),
    /// Estimate hazard ratios from a two-phase CSV dataset.
    Analyze(AnalyzeArgs),
    /// Draw a phase-two validation sample for a dataset.
    Design(DesignArgs),
    /// Export paired true/error-prone influence values for diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (falls back to TWOPHASE_RAKING_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to TWOPHASE_RAKING_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// desk: config as written; paper: 2000 replicates, M=50, L=500.
    #[arg(long, default_value = "desk")]
    profile: Profile,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Two-phase dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Column-mapping JSON.
    #[arg(long)]
    map: PathBuf,
    /// Comma-separated estimator list (true, naive, ht, grn, grmis, grmic,
    /// grfcsmis, grfcsmic, if-…).
    #[arg(long)]
    methods: String,
    /// Column holding the inclusion probabilities.
    #[arg(long, conflicts_with = "design")]
    pi_column: Option<String>,
    /// Design JSON describing how the realized sample was drawn; inclusion
    /// probabilities are derived retrospectively from it.
    #[arg(long)]
    design: Option<PathBuf>,
    /// Imputations per auxiliary construction.
    #[arg(long, default_value_t = 10)]
    m_imputations: usize,
    /// Chained-update iterations per imputation.
    #[arg(long, default_value_t = 50)]
    l_iterations: usize,
    /// Variables the chained imputation cycles over.
    #[arg(long, default_value = "delta-u-x")]
    impute: ImputeChoice,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ImputeChoice {
    #[value(name = "delta")]
    Delta,
    #[value(name = "delta-u")]
    DeltaU,
    #[value(name = "delta-u-x")]
    DeltaUX,
}

impl ImputeChoice {
    fn vars(self) -> ImputedVars {
        match self {
            ImputeChoice::Delta => ImputedVars::DeltaOnly,
            ImputeChoice::DeltaU => ImputedVars::DeltaU,
            ImputeChoice::DeltaUX => ImputedVars::DeltaUX,
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Dataset CSV with the error-prone event indicator (and stratification
    /// columns as needed).
    #[arg(long)]
    data: PathBuf,
    /// Design-spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output sample CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Diagnostic configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::Config(format!(
            "{what} {}: {} (at JSON path '{}')",
            path.display(),
            e.inner(),
            e.path()
        ))
    })
}

fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match flag {
        Some(d) => d,
        None => match std::env::var_os("TWOPHASE_RAKING_OUT") {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("."),
        },
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn configure_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("TWOPHASE_RAKING_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        // Ignore failure: the global pool may already be initialized.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// Batch simulation configuration: the cross of censoring targets, effect
/// sizes, and designs defines the cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub name: String,
    pub cohort_size: usize,
    pub validation_size: usize,
    pub beta_x: Vec<f64>,
    pub beta_z: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    pub censoring: Vec<f64>,
    pub error_scenario: u8,
    #[serde(default = "default_misclass")]
    pub misclassification: MisclassModel,
    #[serde(default)]
    pub error_free: bool,
    pub designs: Vec<DesignSpec>,
    pub methods: Vec<String>,
    #[serde(default = "default_m")]
    pub imputations: usize,
    #[serde(default = "default_l")]
    pub chain_iterations: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_intercept")]
    pub auxiliary_intercept: bool,
}

fn default_lambda0() -> f64 {
    0.1
}
fn default_misclass() -> MisclassModel {
    MisclassModel::Main
}
fn default_m() -> usize {
    10
}
fn default_l() -> usize {
    50
}
fn default_intercept() -> bool {
    true
}

impl SimulateConfig {
    pub fn parse_methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|s| Method::parse(s)).collect()
    }

    /// Expand into per-cell scenario configs, cell ids in grid order.
    pub fn cells(&self) -> Result<Vec<ScenarioConfig>> {
        let scenario = ErrorScenario::from_index(self.error_scenario)?;
        let methods = self.parse_methods()?;
        let mut cells = Vec::new();
        let mut cell_id = 0u64;
        for &censoring in &self.censoring {
            for &beta_x in &self.beta_x {
                for design in &self.designs {
                    let mut design = design.clone();
                    if design.n_target.is_none() {
                        design.n_target = Some(self.validation_size);
                    }
                    cells.push(ScenarioConfig {
                        n_cohort: self.cohort_size,
                        n_validation: self.validation_size,
                        beta_x,
                        beta_z: self.beta_z,
                        lambda0: self.lambda0,
                        censoring_target: censoring,
                        scenario,
                        misclass: self.misclassification,
                        error_free: self.error_free,
                        design,
                        methods: methods.clone(),
                        imputations: self.imputations,
                        chain_iterations: self.chain_iterations,
                        replicates: self.replicates,
                        seed: self.seed,
                        aux_intercept: self.auxiliary_intercept,
                        cell_id,
                    });
                    cell_id += 1;
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Config("empty simulation grid".into()));
        }
        Ok(cells)
    }

    pub fn apply_profile_paper(&mut self) {
        self.replicates = 2000;
        self.imputations = 50;
        self.chain_iterations = 500;
    }
}

/// Run the simulate command against a parsed config; returns the metrics
/// CSV as a string plus the manifest. Split out for tests.
pub fn run_simulate(config: &SimulateConfig) -> Result<(String, RunManifest)> {
    let start = Instant::now();
    let cells = config.cells()?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut manifest = RunManifest::new(
        "simulate",
        config.seed,
        serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
    );
    for cell in &cells {
        let label = format!(
            "scenario={} censoring={} beta_x={} design={}",
            cell.scenario.index(),
            cell.censoring_target,
            cell.beta_x,
            cell.design.kind
        );
        let batch = run_batch(cell)?;
        manifest.censoring_bounds.push(io::CensoringBound {
            beta_x: cell.beta_x,
            beta_z: cell.beta_z,
            lambda0: cell.lambda0,
            target: cell.censoring_target,
            bound: batch.theta_c,
        });
        if let Some(m) = &batch.report.misclass {
            manifest
                .misclassification
                .push(io::MisclassSummary::from((label.as_str(), m)));
        }
        for metrics in &batch.report.per_method {
            if metrics.fail_rate > 0.0 {
                manifest.method_failures.push(io::MethodFailureCount {
                    cell: label.clone(),
                    method: metrics.method.name().to_string(),
                    failures: (metrics.fail_rate * cell.replicates as f64).round() as usize,
                    replicates: cell.replicates,
                });
            }
            let mut metrics = metrics.clone();
            if cell.replicates < 2 {
                metrics.ese = None;
                manifest
                    .warnings
                    .push(format!("{label}: single replicate, ESE undefined"));
            }
            rows.push(MetricsRow {
                scenario: cell.scenario.index(),
                censoring: cell.censoring_target,
                beta_x_true: cell.beta_x,
                design: cell.design.kind.to_string(),
                metrics,
            });
        }
        for rec in &batch.records {
            manifest.warnings.extend(rec.warnings.iter().cloned());
        }
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((io::metrics_csv_string(&rows), manifest))
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    configure_threads(args.threads);
    let mut config: SimulateConfig = parse_json_file(&args.config, "simulate config")?;
    if args.profile == Profile::Paper {
        config.apply_profile_paper();
    }
    let dir = out_dir(args.out)?;
    let (csv, manifest) = run_simulate(&config)?;
    let csv_path = dir.join(format!("{}_metrics.csv", config.name));
    std::fs::write(&csv_path, csv)?;
    manifest.write(&dir.join(format!("{}_manifest.json", config.name)))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Design description used to derive retrospective inclusion probabilities
/// for `analyze`, or to draw a fresh sample for `design`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    #[serde(flatten)]
    pub spec: DesignSpec,
    /// Column holding the stratification variable (SCC designs).
    #[serde(default)]
    pub strat_column: Option<String>,
    /// Column holding the error-prone event indicator.
    #[serde(default = "default_delta_star")]
    pub delta_star_column: String,
    /// Column holding the influence values for Neyman allocation.
    #[serde(default)]
    pub influence_column: Option<String>,
}

fn default_delta_star() -> String {
    "delta_star".to_string()
}

/// Derive π from a realized sample under a declared design.
fn derive_pi(
    design: &DesignFile,
    delta_star: &Array1<f64>,
    strat: Option<&Array1<f64>>,
    r: &[bool],
) -> Result<Array1<f64>> {
    let n = delta_star.len();
    let n_val = r.iter().filter(|&&v| v).count();
    if n_val == 0 {
        return Err(Error::schema("no validated rows"));
    }
    match design.spec.kind {
        DesignKind::Srs => Ok(Array1::from_elem(n, n_val as f64 / n as f64)),
        DesignKind::Cc => {
            let mut pi = Array1::from_elem(n, 1.0);
            let (mut cases, mut controls, mut val_controls) = (0usize, 0usize, 0usize);
            for i in 0..n {
                if delta_star[i] == 1.0 {
                    cases += 1;
                } else {
                    controls += 1;
                    if r[i] {
                        val_controls += 1;
                    }
                }
            }
            if cases == 0 || controls == 0 {
                return Err(Error::schema("case-control design needs both classes"));
            }
            let p = val_controls as f64 / controls as f64;
            for i in 0..n {
                if delta_star[i] == 0.0 {
                    pi[i] = p.max(f64::MIN_POSITIVE);
                }
            }
            Ok(pi)
        }
        DesignKind::Sccb | DesignKind::Sccn => {
            let strat = strat.ok_or_else(|| {
                Error::Config("stratified designs need strat_column".to_string())
            })?;
            let cutpoints = match &design.spec.cutpoints {
                Some(c) => c.clone(),
                None => quantile_cutpoints(&strat.view(), &design.spec.cutpoint_quantiles)?,
            };
            let bins = cutpoints.len() + 1;
            let mut size = BTreeMap::<usize, (usize, usize)>::new();
            let stratum_of = |i: usize| -> usize {
                let case = if delta_star[i] == 1.0 { 1 } else { 0 };
                let bin = cutpoints.iter().filter(|&&c| strat[i] > c).count();
                case * bins + bin
            };
            for i in 0..n {
                let e = size.entry(stratum_of(i)).or_insert((0, 0));
                e.0 += 1;
                if r[i] {
                    e.1 += 1;
                }
            }
            let mut pi = Array1::from_elem(n, 1.0);
            for i in 0..n {
                let (total, sampled) = size[&stratum_of(i)];
                pi[i] = (sampled as f64 / total as f64).max(f64::MIN_POSITIVE);
            }
            Ok(pi)
        }
    }
}

/// Estimates table row for `analyze`.
#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub method: String,
    pub covariate: String,
    pub scale: f64,
    pub beta: f64,
    pub se: f64,
}

impl EstimateRow {
    pub fn hazard_ratio(&self) -> (f64, f64, f64, f64) {
        let hr = (self.scale * self.beta).exp();
        let lo = (self.scale * self.beta - Z_95 * self.scale.abs() * self.se).exp();
        let hi = (self.scale * self.beta + Z_95 * self.scale.abs() * self.se).exp();
        (hr, lo, hi, hi - lo)
    }
}

pub const ESTIMATES_HEADER: &str = "method,covariate,scale,beta,se,hr,hr_lo,hr_hi,ci_width";

pub fn estimates_csv_string(rows: &[EstimateRow]) -> String {
    let mut out = String::new();
    out.push_str(ESTIMATES_HEADER);
    out.push('\n');
    for row in rows {
        let (hr, lo, hi, width) = row.hazard_ratio();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.method,
            row.covariate,
            fmt_f64(row.scale),
            fmt_f64(row.beta),
            fmt_f64(row.se),
            fmt_f64(hr),
            fmt_f64(lo),
            fmt_f64(hi),
            fmt_f64(width),
        ));
    }
    out
}

/// Methods `analyze` accepts: the simulation estimators plus the full-cohort
/// naive fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeMethod {
    Naive,
    Sim(Method),
}

impl AnalyzeMethod {
    pub fn parse(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("naive") {
            Ok(AnalyzeMethod::Naive)
        } else {
            Ok(AnalyzeMethod::Sim(Method::parse(s)?))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AnalyzeMethod::Naive => "Naive",
            AnalyzeMethod::Sim(m) => m.name(),
        }
    }
}

/// Options for the analyze workflow, independent of argument parsing.
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub methods: Vec<AnalyzeMethod>,
    pub imputations: usize,
    pub chain_iterations: usize,
    pub vars: ImputedVars,
    pub seed: u64,
    pub aux_intercept: bool,
    /// Hazard-ratio scaling: (x scale, z scale).
    pub scales: (f64, f64),
}

/// Estimate every requested method on a loaded two-phase dataset.
pub fn run_analyze(
    cohort: &Cohort,
    sample: &TwoPhaseSample,
    opts: &AnalyzeOptions,
) -> Result<(Vec<EstimateRow>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let p = cohort.p();
    let push = |rows: &mut Vec<EstimateRow>,
                method: &str,
                beta: &Array1<f64>,
                cov: &ndarray::Array2<f64>,
                scales: (f64, f64)| {
        rows.push(EstimateRow {
            method: method.to_string(),
            covariate: "x".to_string(),
            scale: scales.0,
            beta: beta[0],
            se: cov[(0, 0)].max(0.0).sqrt(),
        });
        rows.push(EstimateRow {
            method: method.to_string(),
            covariate: "z".to_string(),
            scale: scales.1,
            beta: beta[p],
            se: cov[(p, p)].max(0.0).sqrt(),
        });
    };

    let ht = ht_estimate(cohort, sample)?;
    let warm = Some(&ht.fit.beta);
    let mi_opts = MiOptions {
        imputations: opts.imputations,
        chain_iterations: opts.chain_iterations,
        interactions: false,
        aux_intercept: opts.aux_intercept,
    };

    for &method in &opts.methods {
        match method {
            AnalyzeMethod::Naive => {
                let (fit, influence) = naive_influence(cohort)?;
                let cov = cox::robust_covariance(&influence);
                push(&mut rows, method.name(), &fit.beta, &cov, opts.scales);
            }
            AnalyzeMethod::Sim(Method::True) => {
                let est = true_estimate(cohort)?;
                push(&mut rows, method.name(), &est.fit.beta, &est.covariance, opts.scales);
            }
            AnalyzeMethod::Sim(Method::Ht) => {
                push(&mut rows, method.name(), &ht.fit.beta, &ht.covariance, opts.scales);
            }
            AnalyzeMethod::Sim(Method::Grn) => {
                let aux = build_auxiliary_naive(cohort, opts.aux_intercept)?;
                let fit = raking_estimate(cohort, sample, &aux, warm)?;
                push(&mut rows, method.name(), &fit.beta, &fit.covariance, opts.scales);
            }
            AnalyzeMethod::Sim(m) => {
                let interactions = matches!(
                    m,
                    Method::Grmic | Method::Grfcsmic | Method::IfGrmic | Method::IfGrfcsmic
                );
                let fcs = matches!(
                    m,
                    Method::Grfcsmis
                        | Method::Grfcsmic
                        | Method::IfGrfcsmis
                        | Method::IfGrfcsmic
                );
                let opts_m = MiOptions {
                    interactions,
                    ..mi_opts
                };
                let lane = match m {
                    Method::Grmis | Method::IfGrmis => 3,
                    Method::Grmic | Method::IfGrmic => 4,
                    Method::Grfcsmis | Method::IfGrfcsmis => 5,
                    _ => 6,
                };
                let mut rng = crate::numeric::RngStream::new(opts.seed, lane).rng();
                let base = if fcs {
                    fcsmi_auxiliary(cohort, sample, opts.vars, &opts_m, None, &mut rng)?
                } else {
                    grmi_auxiliary(cohort, sample, &opts_m, None, &mut rng)?
                };
                if base.separation_flags > 0 {
                    warnings.push(format!(
                        "{}: {} working-model fits flagged separation",
                        m.name(),
                        base.separation_flags
                    ));
                }
                let aux = if matches!(
                    m,
                    Method::IfGrmis | Method::IfGrmic | Method::IfGrfcsmis | Method::IfGrfcsmic
                ) {
                    let if_aux = if_calibration_auxiliary(cohort, sample, &base, opts.aux_intercept)?;
                    if !if_aux.dropped.is_empty() {
                        warnings.push(format!(
                            "{}: dropped {} rank-deficient working-model columns",
                            m.name(),
                            if_aux.dropped.len()
                        ));
                    }
                    if_aux.aux
                } else {
                    base.aux
                };
                let fit = raking_estimate(cohort, sample, &aux, warm)?;
                push(&mut rows, m.name(), &fit.beta, &fit.covariance, opts.scales);
            }
        }
    }
    Ok((rows, warnings))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    configure_threads(args.threads);
    let start = Instant::now();
    let map: ColumnMap = parse_json_file(&args.map, "column map")?;
    let methods: Vec<AnalyzeMethod> = args
        .methods
        .split(',')
        .map(AnalyzeMethod::parse)
        .collect::<Result<_>>()?;

    let mut map_for_read = map.clone();
    if let Some(col) = &args.pi_column {
        map_for_read.pi = Some(col.clone());
    }
    let design_file: Option<DesignFile> = match &args.design {
        Some(path) => Some(parse_json_file(path, "design spec")?),
        None => None,
    };
    if map_for_read.pi.is_none() && design_file.is_none() {
        return Err(Error::Config(
            "provide --pi-column or --design to establish inclusion probabilities".into(),
        ));
    }

    let (cohort, mut sample) = if map_for_read.pi.is_some() {
        read_cohort_csv(&args.data, &map_for_read)?
    } else {
        // Read with a fabricated unit-pi column, then derive pi from the
        // declared design.
        let mut no_pi = map_for_read.clone();
        no_pi.pi = None;
        read_cohort_with_derived_pi(&args.data, &no_pi, design_file.as_ref().unwrap())?
    };
    if let Some(design) = &design_file {
        sample.design = descriptor_for(design.spec.kind);
    }

    let scales = (
        map.hr_scale.get(&map.x_true).copied().unwrap_or(1.0),
        map.hr_scale.get(&map.z).copied().unwrap_or(1.0),
    );
    let opts = AnalyzeOptions {
        methods,
        imputations: args.m_imputations,
        chain_iterations: args.l_iterations,
        vars: args.impute.vars(),
        seed: args.seed,
        aux_intercept: true,
        scales,
    };
    let (rows, warnings) = run_analyze(&cohort, &sample, &opts)?;

    let dir = out_dir(args.out)?;
    let csv_path = dir.join("estimates.csv");
    std::fs::write(&csv_path, estimates_csv_string(&rows))?;
    let mut manifest = RunManifest::new(
        "analyze",
        args.seed,
        serde_json::json!({
            "data": args.data.display().to_string(),
            "map": map,
            "methods": rows.iter().map(|r| r.method.clone()).collect::<Vec<_>>(),
            "imputations": args.m_imputations,
            "chain_iterations": args.l_iterations,
        }),
    );
    manifest.warnings = warnings;
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&dir.join("estimates_manifest.json"))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn descriptor_for(kind: DesignKind) -> DesignDescriptor {
    match kind {
        DesignKind::Srs => DesignDescriptor::Srs { n: 0 },
        DesignKind::Cc => DesignDescriptor::CaseControl {
            cases: 0,
            controls_sampled: 0,
            controls_available: 0,
        },
        DesignKind::Sccb => DesignDescriptor::SccBalanced { strata: Vec::new() },
        DesignKind::Sccn => DesignDescriptor::SccNeyman { strata: Vec::new() },
    }
}

fn read_cohort_with_derived_pi(
    data: &Path,
    map: &ColumnMap,
    design: &DesignFile,
) -> Result<(Cohort, TwoPhaseSample)> {
    // First pass: design columns, then the realized sample indicator; the
    // derived probabilities are appended so the standard reader handles the
    // rest.
    let strat_col = design.strat_column.as_deref().unwrap_or(&map.x_star);
    let input = read_design_input(data, &map.delta_star, strat_col, None)?;
    let (cohort, sample) = {
        let mut rdr = csv::Reader::from_path(data)?;
        let headers = rdr.headers()?.clone();
        let ri = headers
            .iter()
            .position(|h| h == map.r)
            .ok_or_else(|| Error::schema(format!("missing column '{}'", map.r)))?;
        let mut r = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            r.push(rec[ri].trim() == "1");
        }
        let pi = derive_pi(design, &input.delta_star, Some(&input.strat), &r)?;
        let tmp = write_augmented(data, &pi)?;
        let mut aug = map.clone();
        aug.pi = Some("__derived_pi".to_string());
        let out = read_cohort_csv(&tmp, &aug)?;
        std::fs::remove_file(&tmp).ok();
        out
    };
    Ok((cohort, sample))
}

/// Append a derived-π column so the standard reader path handles the rest.
fn write_augmented(data: &Path, pi: &Array1<f64>) -> Result<PathBuf> {
    let text = std::fs::read_to_string(data)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::schema("empty data file"))?;
    let mut out = String::new();
    out.push_str(header);
    out.push_str(",__derived_pi\n");
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push_str(line);
        out.push(',');
        out.push_str(&fmt_f64(pi[i]));
        out.push('\n');
    }
    let tmp = std::env::temp_dir().join(format!(
        "twophase-raking-derived-{}-{}.csv",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::write(&tmp, out)?;
    Ok(tmp)
}

fn cmd_design(args: DesignArgs) -> Result<()> {
    let start = Instant::now();
    let design: DesignFile = parse_json_file(&args.spec, "design spec")?;
    let strat_col = design.strat_column.as_deref();
    let needs_strat = matches!(design.spec.kind, DesignKind::Sccb | DesignKind::Sccn);
    if needs_strat && strat_col.is_none() {
        return Err(Error::Config("stratified designs need strat_column".into()));
    }
    let input = read_design_input(
        &args.data,
        &design.delta_star_column,
        strat_col.unwrap_or(&design.delta_star_column),
        design.influence_column.as_deref(),
    )?;
    let n = input.delta_star.len();
    let n_target = design
        .spec
        .n_target
        .ok_or_else(|| Error::Config("design spec needs n_target".into()))?;
    let mut rng = crate::numeric::RngStream::new(args.seed, 0).rng();
    let sample = match design.spec.kind {
        DesignKind::Srs => draw_srs(n, n_target, &mut rng)?,
        DesignKind::Cc => draw_case_control(
            &input.delta_star.view(),
            Some(n_target),
            design.spec.cc_ratio,
            &mut rng,
        )?,
        DesignKind::Sccb | DesignKind::Sccn => {
            let cutpoints = match &design.spec.cutpoints {
                Some(c) => c.clone(),
                None => quantile_cutpoints(&input.strat.view(), &design.spec.cutpoint_quantiles)?,
            };
            if design.spec.kind == DesignKind::Sccb {
                draw_scc_balanced(
                    &input.delta_star.view(),
                    &input.strat.view(),
                    &cutpoints,
                    n_target,
                    &mut rng,
                )?
            } else {
                let influence = input.influence.as_ref().ok_or_else(|| {
                    Error::Config(
                        "Neyman allocation needs influence_column in the design spec".into(),
                    )
                })?;
                draw_scc_neyman(
                    &input.delta_star.view(),
                    &input.strat.view(),
                    &cutpoints,
                    &influence.view(),
                    n_target,
                    &mut rng,
                )?
            }
        }
    };

    let scc_cutpoints = if needs_strat {
        Some(match &design.spec.cutpoints {
            Some(c) => c.clone(),
            None => quantile_cutpoints(&input.strat.view(), &design.spec.cutpoint_quantiles)?,
        })
    } else {
        None
    };
    let stratum_label = |i: usize| -> String {
        let case = if input.delta_star[i] == 1.0 { "case" } else { "control" };
        match &scc_cutpoints {
            Some(cuts) => {
                let bin = cuts.iter().filter(|&&c| input.strat[i] > c).count();
                format!("{case}:bin{bin}")
            }
            None => match &sample.design {
                DesignDescriptor::CaseControl { .. } => case.to_string(),
                _ => "all".to_string(),
            },
        }
    };
    let mut out = String::from("id,r,pi,stratum\n");
    for i in 0..n {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i,
            if sample.r[i] { 1 } else { 0 },
            fmt_f64(sample.pi[i]),
            stratum_label(i),
        ));
    }
    std::fs::write(&args.out, out)?;

    let mut manifest = RunManifest::new(
        "design",
        args.seed,
        serde_json::to_value(&design).map_err(|e| Error::Config(e.to_string()))?,
    );
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    match &sample.design {
        DesignDescriptor::SccBalanced { strata } | DesignDescriptor::SccNeyman { strata } => {
            for s in strata {
                manifest.warnings.push(format!(
                    "stratum case={} bin={}: size {} sampled {} pi {:.6}",
                    s.case_status, s.bin, s.size, s.sampled, s.pi
                ));
                if s.sampled == s.size {
                    manifest.warnings.push(format!(
                        "stratum case={} bin={} exhausted; allocation redistributed",
                        s.case_status, s.bin
                    ));
                }
            }
        }
        DesignDescriptor::CaseControl {
            cases,
            controls_sampled,
            controls_available,
        } => {
            manifest.warnings.push(format!(
                "cases={cases} controls_sampled={controls_sampled} of {controls_available}"
            ));
        }
        _ => {}
    }
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Diagnose-config JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    #[serde(default = "default_diag_n")]
    pub cohort_size: usize,
    #[serde(default = "default_diag_bx")]
    pub beta_x: f64,
    #[serde(default = "default_diag_bz")]
    pub beta_z: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_diag_cens")]
    pub censoring: f64,
    #[serde(default)]
    pub error_free: bool,
    pub seed: u64,
}

fn default_diag_n() -> usize {
    2000
}
fn default_diag_bx() -> f64 {
    1.5_f64.ln()
}
fn default_diag_bz() -> f64 {
    0.5_f64.ln()
}
fn default_diag_cens() -> f64 {
    0.9
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let start = Instant::now();
    let config: DiagnoseConfig = parse_json_file(&args.config, "diagnose config")?;
    let diag = InfluenceDiagnosticConfig {
        n_cohort: config.cohort_size,
        beta_x: config.beta_x,
        beta_z: config.beta_z,
        lambda0: config.lambda0,
        censoring_target: config.censoring,
        error_free: config.error_free,
        seed: config.seed,
    };
    let pairs = crate::sim::export_influence_pairs(&diag)?;
    std::fs::write(&args.out, influence_csv_string(&pairs))?;
    let mut manifest = RunManifest::new(
        "diagnose",
        config.seed,
        serde_json::to_value(&config).map_err(|e| Error::Config(e.to_string()))?,
    );
    for ch in crate::sim::Channel::ALL {
        manifest.warnings.push(format!(
            "channel {}: linear R^2 = {:.4}",
            ch.name(),
            crate::sim::linear_r2(&pairs, ch)
        ));
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Entry point used by the binary.
pub fn run() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Design(args) => cmd_design(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

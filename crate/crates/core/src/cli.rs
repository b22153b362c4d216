//! The four run verbs. Each writes its files under the output directory
//! and returns an [`Outcome`]; [`exit_code`] maps errors to exit statuses.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::functional::{
    embedding_constant, geometry_constants, geometry_inputs, mp_radius, sphere_bound, EnergyBreakdown,
    GeometryConstants, GeometryInputs, Params, Problem,
};
use crate::grid::{write_field_csv, Field, Grid};
use crate::quasimetric::QuasiMetricSpace;
use crate::solver::{
    seed_bump, solve, ContractReport, Contracts, IterRecord, PositivityCertificate, SolveResult,
};
use crate::verify::{
    fibering_direction, fibering_scan, gradient_check, log_grid, poincare_check, sphere_bound_check, GradientCheck,
    InequalityReport, PoincareSetup, SignBand, SphereReport,
};
use crate::weights::{relative_change, validate_exponents, weight_report, ExponentVerdict, Weight, WeightReport, WeightSetup};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_WEIGHTS: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

pub const GRADIENT_MIN_SLOPE: f64 = 1.9;
pub const GRADIENT_MAX_ERROR: f64 = 1e-6;
/// Tolerance of the closed-form geometry identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
/// Allowed relative change of the K0 estimate between two seeds.
pub const K0_SEED_STABILITY: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Weights,
    Solve,
    Verify,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Weights => "check-weights",
            Stage::Solve => "solve",
            Stage::Verify => "verify",
            Stage::Report => "report",
        }
    }

    fn failure_code(self) -> i32 {
        match self {
            Stage::Weights => EXIT_WEIGHTS,
            Stage::Solve => EXIT_SOLVER,
            Stage::Verify => EXIT_VERIFY,
            Stage::Report => EXIT_CONFIG,
        }
    }
}

/// Exit status of an error raised while running `stage`.
pub fn exit_code(stage: Stage, err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parameter(_) | Error::InvalidWeight(_) | Error::Io(_) | Error::Json(_) => EXIT_CONFIG,
        _ => stage.failure_code(),
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub stage: Stage,
    pub passed: bool,
    pub files: Vec<PathBuf>,
    /// Names of failed checks.
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            self.stage.failure_code()
        }
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

fn write_field(dir: &Path, name: &str, grid: &Grid, u: &Field) -> Result<PathBuf> {
    let path = dir.join(name);
    write_field_csv(grid, u, BufWriter::new(fs::File::create(&path)?))?;
    Ok(path)
}

fn write_rows(dir: &Path, name: &str, header: &str, rows: impl Iterator<Item = String>) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut w = BufWriter::new(fs::File::create(&path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(path)
}

/// Records wall-clock data under `stage` in `metadata.json`, outside the
/// reproducible outputs.
fn record_metadata(dir: &Path, stage: Stage, started: SystemTime, elapsed: f64) -> Result<PathBuf> {
    let path = dir.join("metadata.json");
    let mut meta: serde_json::Map<String, Value> = match fs::read_to_string(&path) {
        Ok(t) => serde_json::from_str(&t).unwrap_or_default(),
        Err(_) => Default::default(),
    };
    let secs = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    meta.insert(
        stage.name().into(),
        serde_json::json!({
            "started_unix": secs,
            "elapsed_seconds": elapsed,
            "threads": rayon::current_num_threads(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    );
    write_json(dir, "metadata.json", &meta)
}

fn timed(cfg: &ExperimentConfig, stage: Stage, f: impl FnOnce(&Path) -> Result<Outcome>) -> Result<Outcome> {
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir)?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let mut out = f(&dir)?;
    out.files.push(record_metadata(&dir, stage, started, clock.elapsed().as_secs_f64())?);
    Ok(out)
}

fn problem(cfg: &ExperimentConfig) -> Result<Problem> {
    Problem::new(cfg.grid()?, cfg.weights.omega.clone(), cfg.v_weight(), cfg.problem.params)
}

fn geometry(cfg: &ExperimentConfig, pr: &Problem) -> Result<GeometryInputs> {
    let (radius, x0) = cfg.enclosing_ball(&pr.grid);
    geometry_inputs(pr, cfg.geometry.c0, radius, &x0, cfg.geometry.resolution)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsDocument {
    pub omega: Weight,
    pub v: Weight,
    pub report: WeightReport,
    pub stability: f64,
    pub passed: bool,
}

pub fn cmd_check_weights(cfg: &ExperimentConfig) -> Result<Outcome> {
    timed(cfg, Stage::Weights, |dir| {
        let prm = cfg.problem.params;
        let v = cfg.v_weight();
        let (family, profile) = cfg.families()?;
        let w = &cfg.weights;
        let report = weight_report(&WeightSetup {
            omega: &w.omega,
            v: &v,
            p: prm.p,
            q: prm.q,
            n: prm.n,
            m: prm.m,
            family: &family,
            profile_family: &profile,
            refine: w.refine,
            probes: w.probes,
            profile_fraction: w.profile_fraction,
        })?;
        let passed = report.passes(w.stability);
        let mut failures = Vec::new();
        if !passed {
            let d = &report.diverged;
            for (bad, name) in [
                (d.ap || !report.ap_constant.is_finite(), "ap_constant"),
                (d.balance || !report.balance_constant.is_finite(), "balance_constant"),
                (relative_change(report.balance_constant, report.balance_refined) >= w.stability, "balance_refinement"),
                (!report.compactness_vanishes, "compactness"),
            ] {
                if bad {
                    failures.push(name.to_string());
                }
            }
        }
        let doc = WeightsDocument { omega: w.omega.clone(), v, report, stability: w.stability, passed };
        Ok(Outcome { stage: Stage::Weights, passed, files: vec![write_json(dir, "weights.json", &doc)?], failures })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub energy: EnergyBreakdown,
    pub norm: f64,
    pub gradient: f64,
    pub residual: Option<f64>,
    pub positivity: Option<PositivityCertificate>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub params: Params,
    pub exponents: ExponentVerdict,
    pub geometry: GeometryConstants,
    pub mu_warning: bool,
    pub u1: Option<BranchSummary>,
    pub u1_error: Option<String>,
    pub u1_no_negative_minimum: bool,
    pub u0: Option<BranchSummary>,
    pub u0_error: Option<String>,
    pub u0_restarts: Option<usize>,
    pub u0_path_nodes: Option<usize>,
    pub u0_above_sphere_bound: Option<bool>,
    pub distinctness: Option<f64>,
    pub thresholds: Contracts,
    pub contracts: ContractReport,
    pub passed: bool,
}

impl SolveSummary {
    pub fn new(params: Params, exponents: ExponentVerdict, res: &SolveResult, thresholds: &Contracts) -> Self {
        let contracts = res.contracts(thresholds);
        SolveSummary {
            params,
            exponents,
            geometry: res.geometry,
            mu_warning: res.mu_warning,
            u1: res.u1.as_ref().map(|s| BranchSummary {
                energy: s.energy,
                norm: s.norm,
                gradient: s.gradient,
                residual: res.residual_u1,
                positivity: res.positivity_u1.clone(),
                iterations: s.log.len() + s.polish_log.len(),
            }),
            u1_error: res.u1_error.clone(),
            u1_no_negative_minimum: res.u1_no_negative_minimum,
            u0: res.u0.as_ref().map(|s| BranchSummary {
                energy: s.energy,
                norm: s.norm,
                gradient: s.gradient,
                residual: res.residual_u0,
                positivity: res.positivity_u0.clone(),
                iterations: s.path_log.len() + s.polish_log.len(),
            }),
            u0_error: res.u0_error.clone(),
            u0_restarts: res.u0.as_ref().map(|s| s.restarts),
            u0_path_nodes: res.u0.as_ref().map(|s| s.nodes),
            u0_above_sphere_bound: res.u0.as_ref().map(|s| s.above_sphere_bound),
            distinctness: res.distinctness,
            thresholds: *thresholds,
            passed: contracts.all(),
            contracts,
        }
    }
}

/// Validates the exponents; `mu = 0` is let through so that the
/// local-minimum branch can report its absence.
pub fn check_exponents(prm: &Params, proportional: bool) -> Result<ExponentVerdict> {
    prm.validate()?;
    let verdict = validate_exponents(prm.p, prm.q, prm.gamma, prm.mu, prm.n, prm.m, proportional);
    let bad: Vec<String> = verdict
        .violated()
        .iter()
        .filter(|c| c.name != "mu_positive" && !(c.name == "gamma_strict" && verdict.gamma_caveat))
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Parameter(bad.join("; ")));
    }
    Ok(verdict)
}

fn iteration_row(phase: &str, r: &IterRecord) -> String {
    format!("{phase},{},{:e},{:e},{:e}", r.iteration, r.energy, r.gradient, r.step)
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Outcome> {
    timed(cfg, Stage::Solve, |dir| {
        let prm = cfg.problem.params;
        let verdict = check_exponents(&prm, cfg.problem.proportional)?;
        cfg.solver.validate()?;
        let pr = problem(cfg)?;
        let geom = geometry_constants(&geometry(cfg, &pr)?)?;
        let res = solve(&pr, &geom, &cfg.solver)?;
        let summary = SolveSummary::new(prm, verdict, &res, &cfg.contracts);
        let mut files = vec![write_json(dir, "summary.json", &summary)?];
        if let Some(s) = &res.u1 {
            files.push(write_field(dir, "u1.csv", &pr.grid, &s.u)?);
        }
        if let Some(s) = &res.u0 {
            files.push(write_field(dir, "u0.csv", &pr.grid, &s.u)?);
        }
        let descent = res.u1.iter().flat_map(|s| s.log.iter().map(|r| iteration_row("u1_descent", r)));
        let polish1 = res.u1.iter().flat_map(|s| s.polish_log.iter().map(|r| iteration_row("u1_polish", r)));
        let polish0 = res.u0.iter().flat_map(|s| s.polish_log.iter().map(|r| iteration_row("u0_polish", r)));
        files.push(write_rows(dir, "iterations.csv", "phase,iteration,I,gradient,step", descent.chain(polish1).chain(polish0))?);
        let path = res.u0.iter().flat_map(|s| {
            s.path_log.iter().map(|r| {
                format!("{},{},{},{:e},{:e},{:e}", r.iteration, r.nodes, r.max_index, r.max_energy, r.gradient, r.step)
            })
        });
        files.push(write_rows(dir, "path_log.csv", "iteration,nodes,max_index,max_I,gradient,step", path)?);
        let failures = summary.contracts.failures().into_iter().map(String::from).collect();
        Ok(Outcome { stage: Stage::Solve, passed: summary.passed, files, failures })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryIdentities {
    /// `|(1/q) A^q rho^{q-p} - 1/(4p)|` relative to `1/(4p)`.
    pub radius_balance_error: f64,
    /// `|sphere_bound - rho^p / (2p)|` relative to the bound.
    pub sphere_bound_error: f64,
    pub passed: bool,
}

pub fn geometry_identities(g: &GeometryInputs) -> Result<GeometryIdentities> {
    let (p, q) = (g.p, g.q);
    let a = embedding_constant(g);
    let rho = mp_radius(g)?;
    let target = 1.0 / (4.0 * p);
    let radius_balance_error = ((a.powf(q) * rho.powf(q - p) / q) - target).abs() / target;
    let sb = sphere_bound(g)?;
    let sphere_bound_error = (sb - rho.powf(p) / (2.0 * p)).abs() / sb;
    Ok(GeometryIdentities {
        radius_balance_error,
        sphere_bound_error,
        passed: radius_balance_error <= IDENTITY_TOLERANCE && sphere_bound_error <= IDENTITY_TOLERANCE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberingSummary {
    pub points: usize,
    pub bands: Vec<SignBand>,
    pub identity_error: f64,
    pub sphere_t: f64,
    pub negative_at_start: bool,
    pub negative_at_end: bool,
    pub sphere_in_positive_band: bool,
    pub three_bands: bool,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiMetricSummary {
    pub k0: f64,
    pub k0_next_seed: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalitiesDocument {
    pub poincare: InequalityReport,
    pub geometry: GeometryConstants,
    pub identities: GeometryIdentities,
    pub sphere: SphereReport,
    pub fibering: FiberingSummary,
    pub gradient: GradientCheck,
    pub quasi_metric: QuasiMetricSummary,
    pub checks: Vec<CheckRow>,
    pub passed: bool,
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    timed(cfg, Stage::Verify, |dir| {
        let prm = cfg.problem.params;
        prm.validate()?;
        let vb = &cfg.verify;
        let pr = problem(cfg)?;
        let v = cfg.v_weight();
        let (radius, x0) = cfg.enclosing_ball(&pr.grid);

        let mut setup = PoincareSetup::new(&cfg.weights.omega, &v, prm, cfg.domain.lo.clone(), cfg.domain.hi.clone());
        setup.radius = radius;
        setup.x0 = x0;
        setup.samples = vb.poincare_samples;
        setup.resolution = vb.poincare_resolution;
        setup.levels = vb.poincare_levels;
        setup.lattice = vb.lattice;
        setup.quadrature = cfg.geometry.resolution;
        setup.stability = vb.stability;
        setup.seed = cfg.seed;
        let poincare = poincare_check(&setup)?;
        let poincare_ok = poincare.max_ratio.is_finite() && poincare.stable != Some(false);

        let gi = geometry(cfg, &pr)?;
        let geometry = geometry_constants(&gi)?;
        let identities = geometry_identities(&gi)?;
        let sphere = sphere_bound_check(&pr, &gi, vb.sphere_samples, vb.lattice, cfg.seed)?;
        let sphere_ok = sphere.report.max_ratio <= 1.0;

        let dirn = fibering_direction(&pr, &seed_bump(&pr, geometry.mp_radius))?;
        let scan = fibering_scan(&pr, &dirn, &log_grid(vb.scan_lo, vb.scan_hi, vb.scan_points), geometry.mp_radius)?;
        let shape_ok = if prm.mu > 0.0 {
            scan.three_bands && scan.sphere_in_positive_band
        } else {
            scan.bands.iter().map(|b| b.positive).eq([true, false])
        };
        let fibering = FiberingSummary {
            points: scan.points.len(),
            bands: scan.bands.clone(),
            identity_error: scan.identity_error,
            sphere_t: scan.sphere_t,
            negative_at_start: scan.negative_at_start,
            negative_at_end: scan.negative_at_end,
            sphere_in_positive_band: scan.sphere_in_positive_band,
            three_bands: scan.three_bands,
            passed: shape_ok && scan.identity_error <= vb.identity_tolerance,
        };

        let gradient = gradient_check(&pr, vb.gradient_pairs, &vb.gradient_steps, cfg.seed)?;
        let gradient_ok = gradient.aggregate_slope >= GRADIENT_MIN_SLOPE && gradient.max_relative_error <= GRADIENT_MAX_ERROR;

        let n = prm.n;
        let qm = QuasiMetricSpace::new(cfg.weights.omega.clone(), prm.p, n, prm.m, pr.grid.diameter())?;
        let a = qm.quasi_triangle_constant(vb.qm_samples, &cfg.domain.lo, &cfg.domain.hi, cfg.seed)?;
        let b = qm.quasi_triangle_constant(vb.qm_samples, &cfg.domain.lo, &cfg.domain.hi, cfg.seed.wrapping_add(1))?;
        let quasi_metric = QuasiMetricSummary {
            k0: a.k0_estimate,
            k0_next_seed: b.k0_estimate,
            samples: a.samples,
            passed: a.k0_estimate.is_finite() && relative_change(a.k0_estimate, b.k0_estimate) <= K0_SEED_STABILITY,
        };

        let checks: Vec<CheckRow> = [
            ("poincare", poincare_ok),
            ("geometry_identities", identities.passed),
            ("sphere_bound", sphere_ok),
            ("fibering", fibering.passed),
            ("gradient_order", gradient_ok),
            ("quasi_triangle", quasi_metric.passed),
        ]
        .into_iter()
        .map(|(name, passed)| CheckRow { name: name.into(), passed })
        .collect();
        let passed = checks.iter().all(|c| c.passed);
        let failures = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        let profile_rows = scan.points.iter().map(|s| format!("{:e},{:e},{:e}", s.t, s.energy, s.closed_form));
        let profile = write_rows(dir, "fibering.csv", "t,I,closed_form", profile_rows)?;
        let doc = InequalitiesDocument {
            poincare,
            geometry,
            identities,
            sphere,
            fibering,
            gradient,
            quasi_metric,
            checks,
            passed,
        };
        Ok(Outcome {
            stage: Stage::Verify,
            passed,
            files: vec![write_json(dir, "inequalities.json", &doc)?, profile],
            failures,
        })
    })
}

/// Reports merged by [`cmd_report`].
pub const REPORT_INPUTS: [&str; 3] = ["weights.json", "summary.json", "inequalities.json"];

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::String(s) => out.push((prefix.into(), s.replace(',', ";"))),
        other => out.push((prefix.into(), other.to_string())),
    }
}

/// Merges whatever reports exist in `run_dir` into `report.json` and a
/// flat `report.csv` of every scalar. Passes once the merge succeeds;
/// `all_passed` carries the verdicts of the merged stages.
pub fn cmd_report(cfg: &ExperimentConfig, run_dir: &Path) -> Result<Outcome> {
    if !run_dir.is_dir() {
        return Err(Error::Config {
            key: "output.dir".into(),
            line: 0,
            msg: format!("run directory {} does not exist", run_dir.display()),
        });
    }
    let cfg = ExperimentConfig { output: run_dir.to_path_buf(), ..cfg.clone() };
    timed(&cfg, Stage::Report, |dir| {
        let mut merged = serde_json::Map::new();
        let mut failures = Vec::new();
        for name in REPORT_INPUTS {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let v: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
            if v.get("passed") == Some(&Value::Bool(false)) {
                failures.push(name.to_string());
            }
            merged.insert(name.trim_end_matches(".json").into(), v);
        }
        if merged.is_empty() {
            return Err(Error::Config {
                key: "output.dir".into(),
                line: 0,
                msg: format!("no reports in {}", dir.display()),
            });
        }
        merged.insert("all_passed".into(), Value::Bool(failures.is_empty()));
        let merged = Value::Object(merged);
        let mut rows = Vec::new();
        flatten("", &merged, &mut rows);
        let json = write_json(dir, "report.json", &merged)?;
        let csv = write_rows(dir, "report.csv", "key,value", rows.into_iter().map(|(k, v)| format!("{k},{v}")))?;
        Ok(Outcome { stage: Stage::Report, passed: true, files: vec![json, csv], failures })
    })
}

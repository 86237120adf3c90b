//! Workflows behind the `cl-lincov` binary: LinCov series, Monte Carlo
//! ensembles, their comparison, and chance-constrained planning. Each
//! workflow reads a scenario, writes CSV/JSON artifacts into an output
//! directory and returns a summary.

use std::fs;
use std::path::{Path, PathBuf};

use cl_lincov::lincov::{self, filter_consistency};
use cl_lincov::montecarlo::{
    compare, denial_exit_times, ensemble_stats, simulate_ensemble, ComparisonReport, EnsembleStats,
    NAV_ERROR_STATES, TRUTH_STATES,
};
use cl_lincov::rrt::{evaluate_path, PathEvaluation, PlanResult, PlanStats};
use cl_lincov::scenario::Scenario;
use cl_lincov::{LinCovSeries, NominalTrajectory};
use serde::Serialize;

/// Below this many runs the σ estimates carry more than ~13% sampling error.
pub const FEW_RUNS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cl_lincov::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(
                cl_lincov::Error::Config { .. }
                | cl_lincov::Error::Domain(_)
                | cl_lincov::Error::DimensionMismatch { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command-line overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub iterations: Option<usize>,
    pub tolerance: Option<f64>,
}

/// Loads a scenario, applies overrides and re-validates.
pub fn load_scenario(path: &Path, o: &Overrides) -> CliResult<Scenario> {
    let mut sc = Scenario::load(path)?;
    apply(&mut sc, o)?;
    Ok(sc)
}

pub fn apply(sc: &mut Scenario, o: &Overrides) -> CliResult<()> {
    if let Some(r) = o.runs {
        sc.monte_carlo.runs = r;
    }
    if let Some(s) = o.seed {
        sc.seed = s;
    }
    if let Some(t) = o.threshold {
        sc.planner.threshold = t;
    }
    if let Some(n) = o.iterations {
        sc.planner.iterations = n;
    }
    if let Some(t) = o.tolerance {
        sc.monte_carlo.tolerance = t;
    }
    sc.validate()?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn create_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn nav_names() -> impl Iterator<Item = &'static str> {
    NAV_ERROR_STATES.iter().map(|n| n.trim_start_matches("err_"))
}

/// Nominal trajectory, 3σ of each truth dispersion, of the true estimation
/// error and of the filter's own covariance.
pub fn write_lincov_csv(path: &Path, nominal: &NominalTrajectory, series: &LinCovSeries) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    header.extend(TRUTH_STATES.iter().map(|s| s.to_string()));
    header.extend(TRUTH_STATES.iter().map(|s| format!("d3s_{s}")));
    header.extend(nav_names().map(|s| format!("ptrue3s_{s}")));
    header.extend(nav_names().map(|s| format!("phat3s_{s}")));
    w.write_record(&header)?;
    for s in &series.samples {
        let x = nominal.samples[s.step].point.x.to_vector();
        let mut row = vec![num(s.time)];
        row.extend(x.iter().map(|v| num(*v)));
        row.extend((0..7).map(|i| num(3.0 * s.d_true[(i, i)].max(0.0).sqrt())));
        row.extend((0..4).map(|i| num(3.0 * s.p_true[(i, i)].max(0.0).sqrt())));
        row.extend((0..4).map(|i| num(3.0 * s.p_hat[(i, i)].max(0.0).sqrt())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_mc_csv(path: &Path, stats: &EnsembleStats) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string()];
    for s in TRUTH_STATES.iter().chain(NAV_ERROR_STATES.iter()) {
        header.push(format!("mean_{s}"));
        header.push(format!("std_{s}"));
    }
    w.write_record(&header)?;
    for k in 0..stats.times.len() {
        let mut row = vec![num(stats.times[k])];
        for i in 0..7 {
            row.push(num(stats.truth_mean[k][i]));
            row.push(num(stats.truth_std[k][i]));
        }
        for i in 0..4 {
            row.push(num(stats.nav_mean[k][i]));
            row.push(num(stats.nav_std[k][i]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_comparison_csv(path: &Path, report: &ComparisonReport) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string(), "flagged".to_string()];
    for s in &report.states {
        header.push(format!("mc_sigma_{}", s.name));
        header.push(format!("lincov_sigma_{}", s.name));
        header.push(format!("ratio_{}", s.name));
    }
    w.write_record(&header)?;
    for k in 0..report.times.len() {
        let mut row = vec![num(report.times[k]), (report.flagged[k] as u8).to_string()];
        for s in &report.states {
            row.push(num(s.mc_sigma[k]));
            row.push(num(s.lincov_sigma[k]));
            row.push(num(s.ratio[k]));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Worst symmetric/PSD diagnostics over a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HealthSummary {
    pub points: usize,
    pub max_asymmetry: f64,
    /// smallest `min eigenvalue / trace` seen
    pub min_relative_eigenvalue: f64,
    pub all_ok: bool,
}

pub fn health_summary(series: &LinCovSeries) -> HealthSummary {
    let mut h = HealthSummary {
        points: series.samples.len(),
        max_asymmetry: 0.0,
        min_relative_eigenvalue: f64::INFINITY,
        all_ok: true,
    };
    for s in &series.samples {
        let d = s.c_a.health();
        h.max_asymmetry = h.max_asymmetry.max(d.max_asymmetry);
        if d.trace > 0.0 {
            h.min_relative_eigenvalue = h.min_relative_eigenvalue.min(d.min_eigenvalue / d.trace);
        }
        h.all_ok &= d.ok();
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinCovSummary {
    pub scenario: String,
    pub steps: usize,
    pub duration: f64,
    pub output_points: usize,
    pub health: HealthSummary,
    /// largest relative σ difference between true estimation error and
    /// the filter covariance, per navigation state
    pub filter_consistency: Vec<f64>,
    pub terminal_position_sigma: [f64; 2],
}

fn run_lincov(sc: &Scenario) -> CliResult<(NominalTrajectory, LinCovSeries)> {
    let nominal = sc.nominal()?;
    let series = lincov::run(
        &nominal,
        &nominal.model.noise_spec(),
        sc.initial_covariance()?,
        sc.simulation.output_stride,
    )?;
    Ok((nominal, series))
}

fn lincov_summary(sc: &Scenario, nominal: &NominalTrajectory, series: &LinCovSeries) -> LinCovSummary {
    let t = &series.terminal.c_a;
    LinCovSummary {
        scenario: sc.name.clone(),
        steps: nominal.samples.len(),
        duration: nominal.duration(),
        output_points: series.samples.len(),
        health: health_summary(series),
        filter_consistency: filter_consistency(series, sc.monte_carlo.abs_floor),
        terminal_position_sigma: [t[(0, 0)].max(0.0).sqrt(), t[(1, 1)].max(0.0).sqrt()],
    }
}

/// Writes `lincov.csv` and `lincov_summary.json`.
pub fn cmd_lincov(sc: &Scenario, out: &Path) -> CliResult<LinCovSummary> {
    create_dir(out)?;
    let (nominal, series) = run_lincov(sc)?;
    write_lincov_csv(&out.join("lincov.csv"), &nominal, &series)?;
    let summary = lincov_summary(sc, &nominal, &series);
    write_json(&out.join("lincov_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub scenario: String,
    pub runs: usize,
    pub seed: u64,
    pub output_points: usize,
    pub terminal_position_sigma: [f64; 2],
}

fn warn_if_few(runs: usize) {
    if runs < FEW_RUNS {
        let err = 100.0 / (2.0 * (runs.max(2) - 1) as f64).sqrt();
        eprintln!("warning: {runs} runs; σ sampling error is about {err:.0}%");
    }
}

fn run_mc(sc: &Scenario, nominal: &NominalTrajectory) -> CliResult<EnsembleStats> {
    warn_if_few(sc.monte_carlo.runs);
    let cfg = sc.run_config(nominal);
    let runs = simulate_ensemble(&cfg)?;
    Ok(ensemble_stats(&runs)?)
}

/// Writes `mc_stats.csv` and `mc_summary.json`.
pub fn cmd_mc(sc: &Scenario, out: &Path) -> CliResult<McSummary> {
    create_dir(out)?;
    let nominal = sc.nominal()?;
    let stats = run_mc(sc, &nominal)?;
    write_mc_csv(&out.join("mc_stats.csv"), &stats)?;
    let last = stats.truth_std.last().copied().unwrap_or([0.0; 7]);
    let summary = McSummary {
        scenario: sc.name.clone(),
        runs: stats.runs,
        seed: sc.seed,
        output_points: stats.times.len(),
        terminal_position_sigma: [last[0], last[1]],
    };
    write_json(&out.join("mc_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub scenario: String,
    pub seed: u64,
    pub exit_times: Vec<f64>,
    pub comparison: ComparisonReport,
    pub lincov: LinCovSummary,
    pub passed: bool,
}

/// Runs LinCov and the Monte Carlo ensemble, compares them and writes
/// `lincov.csv`, `mc_stats.csv`, `comparison.csv` and `validation.json`.
/// `passed` is false when any state misses the tolerance.
pub fn cmd_validate(sc: &Scenario, out: &Path) -> CliResult<ValidationSummary> {
    create_dir(out)?;
    let (nominal, series) = run_lincov(sc)?;
    let stats = run_mc(sc, &nominal)?;
    let exit_times = denial_exit_times(&nominal);
    let comparison = compare(&series, &stats, &exit_times, &sc.compare_options())?;
    write_lincov_csv(&out.join("lincov.csv"), &nominal, &series)?;
    write_mc_csv(&out.join("mc_stats.csv"), &stats)?;
    write_comparison_csv(&out.join("comparison.csv"), &comparison)?;
    let summary = ValidationSummary {
        scenario: sc.name.clone(),
        seed: sc.seed,
        exit_times,
        passed: comparison.passed,
        comparison,
        lincov: lincov_summary(sc, &nominal, &series),
    };
    write_json(&out.join("validation.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexOut {
    pub id: usize,
    pub position: [f64; 2],
    pub goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeOut {
    pub from: usize,
    pub to: usize,
    pub dt: f64,
    pub max_probability: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathOut {
    pub vertices: Vec<usize>,
    pub waypoints: Vec<[f64; 2]>,
    pub total_dt: f64,
    /// per-obstacle maximum from a fresh end-to-end re-run of the path
    pub max_probability: Vec<f64>,
    pub compliant: bool,
    /// C_A symmetric and PSD at every step of the re-run
    pub healthy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub scenario: String,
    pub seed: u64,
    pub threshold: f64,
    pub iterations: usize,
    pub stats: PlanStatsOut,
    pub vertices: Vec<VertexOut>,
    pub edges: Vec<EdgeOut>,
    pub path: Option<PathOut>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanStatsOut {
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub timed_out: usize,
    pub goal_connections: usize,
}

impl From<PlanStats> for PlanStatsOut {
    fn from(s: PlanStats) -> Self {
        Self {
            iterations: s.iterations,
            accepted: s.accepted,
            rejected: s.rejected,
            timed_out: s.timed_out,
            goal_connections: s.goal_connections,
        }
    }
}

impl PlanSummary {
    /// True when a path was found and its re-run respects the threshold.
    pub fn succeeded(&self) -> bool {
        self.path.as_ref().is_some_and(|p| p.compliant)
    }
}

pub fn write_path_csv(path: &Path, eval: &PathEvaluation) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["time".to_string(), "north".to_string(), "east".to_string()];
    header.extend((0..eval.probabilities.len()).map(|i| format!("p_obstacle_{i}")));
    w.write_record(&header)?;
    for k in 0..eval.times.len() {
        let mut row = vec![num(eval.times[k]), num(eval.positions[k][0]), num(eval.positions[k][1])];
        row.extend(eval.probabilities.iter().map(|p| num(p[k])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn plan_summary(sc: &Scenario, result: &PlanResult, eval: Option<&PathEvaluation>) -> PlanSummary {
    let g = &result.graph.graph;
    let vertices = g
        .node_indices()
        .map(|n| VertexOut {
            id: n.index(),
            position: [g[n].position[0], g[n].position[1]],
            goal: n == result.graph.goal,
        })
        .collect();
    let edges = g
        .edge_indices()
        .map(|e| {
            let (a, b) = g.edge_endpoints(e).expect("edge index from this graph");
            EdgeOut {
                from: a.index(),
                to: b.index(),
                dt: g[e].dt,
                max_probability: g[e].max_probability.clone(),
            }
        })
        .collect();
    let path = result.path.as_ref().zip(eval).map(|(p, ev)| PathOut {
        vertices: p.vertices.iter().map(|n| n.index()).collect(),
        waypoints: p.waypoints.iter().map(|w| [w[0], w[1]]).collect(),
        total_dt: p.total_dt,
        max_probability: ev.max_probability.clone(),
        compliant: ev.max_probability.iter().all(|q| *q < sc.planner.threshold),
        healthy: ev.healthy,
    });
    PlanSummary {
        scenario: sc.name.clone(),
        seed: sc.seed,
        threshold: sc.planner.threshold,
        iterations: sc.planner.iterations,
        stats: result.stats.into(),
        vertices,
        edges,
        path,
    }
}

/// Plans from the first to the last waypoint, re-runs the selected path
/// from the start and writes `plan.json` and, when a path exists,
/// `path_probabilities.csv`.
pub fn cmd_plan(sc: &Scenario, out: &Path) -> CliResult<PlanSummary> {
    sc.validate_for_planning()?;
    create_dir(out)?;
    let result = sc.plan()?;
    let eval = match &result.path {
        Some(p) => Some(evaluate_path(&sc.plan_context()?, &sc.plan_start()?, &p.waypoints)?),
        None => None,
    };
    if let Some(ev) = &eval {
        write_path_csv(&out.join("path_probabilities.csv"), ev)?;
    }
    let summary = plan_summary(sc, &result, eval.as_ref());
    write_json(&out.join("plan.json"), &summary)?;
    Ok(summary)
}

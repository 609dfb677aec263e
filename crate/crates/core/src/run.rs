//! Run orchestration: executes a configuration and writes its artifacts.
//!
//! Every run writes `domain.csv` and `report.json` into the output directory;
//! solving modes add `fields_kappa_<κ>.csv` and `trace_kappa_<κ>.csv` per
//! stage, and sweeps put those under `width_<w>/`.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    bound_violations, certificate, diagnose, limit_consistency, segregation_metrics, trivial_min_comparison,
    trivial_tuple, BoundsReport, Certificate, DiagnoseOptions, DiagnosticsReport, LimitReport, Section,
};
use crate::config::{parse_config, ConfigError, Mode, RunConfig};
use crate::discretization::{energy_total_with, grad_i, State};
use crate::fmt::sig9;
use crate::geometry::{build_domain, DomainGrid, GeometryError};
use crate::par::{self, Exec};
use crate::reaction::{check_assumptions, AssumptionReport, ReactionError, ReactionModel};
use crate::solver::{continue_from, energies_monotone, initial_state, minimize, SolveError, SolveOptions, SolveResult};

/// Bound tolerance of the unclamped verification solve.
pub const UNCLAMPED_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("[{code}] {err}", code = .0.code(), err = .0)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Reaction(#[from] ReactionError),
    #[error(transparent)]
    Discretization(#[from] crate::discretization::DiscretizationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("{0}")]
    Analysis(#[from] crate::analysis::AnalysisError),
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// `x,y,label,u_1,…,u_k`, one row per domain cell.
pub fn fields_csv(grid: &DomainGrid, state: &State) -> String {
    let mut out = String::from("x,y,label");
    for i in 1..=state.num_species() {
        out.push_str(&format!(",u_{i}"));
    }
    out.push('\n');
    for c in 0..grid.len() {
        let (x, y) = grid.center(c);
        out.push_str(&format!("{},{},{}", sig9(x), sig9(y), grid.label(c)));
        for u in state.fields() {
            out.push(',');
            out.push_str(&sig9(u[c]));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

const TOOL: ToolInfo = ToolInfo { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") };

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub kappa: f64,
    pub fields_csv: String,
    pub trace_csv: String,
    pub trace_monotone: bool,
    /// Bounds of the same solve run without projection.
    pub unclamped_bounds: Section<BoundsReport>,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationSummary {
    pub kappas: Vec<f64>,
    pub energies: Vec<f64>,
    pub overlaps: Vec<f64>,
    /// `I` at each stage's `κ` on its warm start.
    pub warm_start_energies: Vec<f64>,
    pub monotone: bool,
    pub overlap_strictly_decreasing: bool,
    pub kappa_overlap_max: f64,
    /// `10 (κ_1 · overlap_1 + 1)`.
    pub kappa_overlap_bound: f64,
    pub kappa_overlap_bounded: bool,
    pub all_converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub width: f64,
    pub directory: String,
    pub channel_measure: f64,
    pub tau: f64,
    pub sigma: f64,
    /// `‖U − W‖²_{H¹(Ω_0)}` of the last stage.
    pub d2: f64,
    pub energy: f64,
    pub stages: Vec<StageReport>,
}

/// Strict decrease of each column as the channel narrows.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTrend {
    pub widths: Vec<f64>,
    pub tau_decreasing: bool,
    pub sigma_decreasing: bool,
    pub d2_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Preflight {
    pub cells: usize,
    pub domain_measure: f64,
    pub initial_energy: f64,
    pub trivial_energy: f64,
    pub trivial_lambda: f64,
    pub trivial_quadrature_ok: bool,
    pub gradient_rel_error: f64,
    pub gradient_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: ToolInfo,
    pub mode: Mode,
    pub config: RunConfig,
    pub assumptions: AssumptionReport,
    pub certificate: Section<Certificate>,
    pub stages: Vec<StageReport>,
    pub continuation: Section<ContinuationSummary>,
    pub limit: Section<LimitReport>,
    pub sweep: Section<Vec<SweepEntry>>,
    pub sweep_trend: Section<SweepTrend>,
    pub preflight: Section<Preflight>,
    pub assertions: Vec<Assertion>,
    pub status: String,
}

impl RunReport {
    /// Name of the first failed hard assertion.
    pub fn first_failure(&self) -> Option<&str> {
        self.assertions.iter().find(|a| !a.pass).map(|a| a.name.as_str())
    }

    /// 0 when every hard assertion passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.first_failure().is_some())
    }
}

/// Reads, parses and runs a configuration file. `mode` and `output`
/// override the file's settings.
pub fn run_file(
    path: &Path,
    mode: Option<Mode>,
    output: Option<&Path>,
    workers: Option<usize>,
) -> Result<RunReport, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut config = parse_config(&text)?;
    if let Some(m) = mode {
        config.mode = m;
        config.validate()?;
    }
    if let Some(o) = output {
        config.output_dir = o.to_path_buf();
    }
    run(&config, workers)
}

/// Executes `config` and writes its artifacts into `config.output_dir`.
pub fn run(config: &RunConfig, workers: Option<usize>) -> Result<RunReport, RunError> {
    config.validate()?;
    let out = config.output_dir.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let grid = build_domain(&config.domain)?;
    let models = config.models();
    let assumptions = check_assumptions(&models)?;
    write_file(&out.join("domain.csv"), &grid.to_csv())?;

    let mut report = RunReport {
        tool: TOOL,
        mode: config.mode,
        config: config.clone(),
        assumptions,
        certificate: Section::skipped(),
        stages: Vec::new(),
        continuation: Section::skipped(),
        limit: Section::skipped(),
        sweep: Section::skipped(),
        sweep_trend: Section::skipped(),
        preflight: Section::skipped(),
        assertions: Vec::new(),
        status: String::new(),
    };
    let cert = certificate(&grid, &models)?;
    report.certificate = Section(Some(cert.clone()));

    match config.mode {
        Mode::Check => {
            let pre = preflight(&grid, &models, config)?;
            report.assertions.push(Assertion { name: "assumptions".into(), pass: report.assumptions.all_pass() });
            report.assertions.push(Assertion { name: "trivial_quadrature".into(), pass: pre.trivial_quadrature_ok });
            report.assertions.push(Assertion { name: "gradient_check".into(), pass: pre.gradient_ok });
            report.preflight = Section(Some(pre));
        }
        Mode::Solve => {
            let start = initial_state(&grid, &models)?;
            for &kappa in &config.kappa_schedule {
                let result = minimize(&grid, &models, &start, kappa, &config.solver)?;
                let stage = finish_stage(&grid, &models, &cert, config, out, &start, kappa, &result)?;
                push_stage_assertions(&mut report.assertions, &stage, "");
                report.stages.push(stage);
            }
        }
        Mode::Continuation => {
            let (stages, summary, limit) = run_continuation(&grid, &models, &cert, config, out)?;
            for s in &stages {
                push_stage_assertions(&mut report.assertions, s, "");
            }
            report.assertions.push(Assertion { name: "kappa_monotonicity".into(), pass: summary.monotone });
            report.stages = stages;
            report.continuation = Section(Some(summary));
            report.limit = limit.into();
        }
        Mode::Sweep => {
            let widths = config.sweep.clone().unwrap_or_default();
            let entries =
                par::with_workers(workers, || par::map(Exec::Parallel, widths.len(), |t| run_width(config, widths[t])));
            let entries = entries.into_iter().collect::<Result<Vec<_>, _>>()?;
            for e in &entries {
                for s in &e.stages {
                    push_stage_assertions(&mut report.assertions, s, &format!("width={} ", sig9(e.width)));
                }
            }
            report.sweep_trend = Section(Some(sweep_trend(&entries)));
            report.sweep = Section(Some(entries));
        }
    }

    report.status = match report.first_failure() {
        None => "pass".to_string(),
        Some(name) => format!("fail: {name}"),
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out.join("report.json"), &(json + "\n"))?;
    info!("{} run finished: {}", config.mode, report.status);
    Ok(report)
}

fn push_stage_assertions(list: &mut Vec<Assertion>, stage: &StageReport, prefix: &str) {
    let k = sig9(stage.kappa);
    let d = &stage.diagnostics;
    let bounds = d.bounds.get().is_some_and(|b| b.pass) && stage.unclamped_bounds.get().is_none_or(|b| b.pass);
    list.push(Assertion { name: format!("{prefix}bounds[kappa={k}]"), pass: bounds });
    list.push(Assertion { name: format!("{prefix}monotone_energy[kappa={k}]"), pass: stage.trace_monotone });
    list.push(Assertion { name: format!("{prefix}nontriviality[kappa={k}]"), pass: d.nontrivial });
}

#[allow(clippy::too_many_arguments)]
fn finish_stage(
    grid: &DomainGrid,
    models: &[ReactionModel],
    cert: &Certificate,
    config: &RunConfig,
    out: &Path,
    start: &State,
    kappa: f64,
    result: &SolveResult,
) -> Result<StageReport, RunError> {
    let tag = sig9(kappa);
    let fields_name = format!("fields_kappa_{tag}.csv");
    let trace_name = format!("trace_kappa_{tag}.csv");
    write_file(&out.join(&fields_name), &fields_csv(grid, &result.state))?;
    write_file(&out.join(&trace_name), &result.trace_csv())?;
    let unclamped = if config.verify_unclamped {
        let opts = SolveOptions { clamp: false, ..config.solver.clone() };
        let free = minimize(grid, models, start, kappa, &opts)?;
        Some(bound_violations(models, &free.state, UNCLAMPED_BOUND_TOL))
    } else {
        None
    };
    let opts = DiagnoseOptions {
        bounds_tolerance: if config.solver.clamp { 0.0 } else { UNCLAMPED_BOUND_TOL },
        exec: config.solver.exec,
        ..Default::default()
    };
    let diagnostics = diagnose(grid, models, Some(cert), result, kappa, opts);
    if !result.converged {
        warn!("kappa={tag} did not converge ({} iterations)", result.iterations);
    }
    Ok(StageReport {
        kappa,
        fields_csv: fields_name,
        trace_csv: trace_name,
        trace_monotone: result.trace_monotone(),
        unclamped_bounds: unclamped.into(),
        diagnostics,
    })
}

type ContinuationParts = (Vec<StageReport>, ContinuationSummary, Option<LimitReport>);

fn run_continuation(
    grid: &DomainGrid,
    models: &[ReactionModel],
    cert: &Certificate,
    config: &RunConfig,
    out: &Path,
) -> Result<ContinuationParts, RunError> {
    let start = initial_state(grid, models)?;
    let cont = continue_from(grid, models, &start, &config.kappa_schedule, &config.solver)?;
    let mut stages = Vec::with_capacity(cont.stages.len());
    let mut warm = &start;
    for st in &cont.stages {
        stages.push(finish_stage(grid, models, cert, config, out, warm, st.kappa, &st.result)?);
        warm = &st.result.state;
    }
    let kappas = cont.schedule.clone();
    let energies = cont.energies();
    let overlaps: Vec<f64> = cont.stages.iter().map(|s| s.overlap).collect();
    let kappa_overlap_max = kappas.iter().zip(&overlaps).map(|(k, o)| k * o).fold(0.0, f64::max);
    let kappa_overlap_bound = 10.0 * (kappas[0] * overlaps[0] + 1.0);
    let summary = ContinuationSummary {
        monotone: energies_monotone(&energies, config.solver.tol_r),
        overlap_strictly_decreasing: overlaps.windows(2).all(|w| w[1] < w[0]),
        kappa_overlap_max,
        kappa_overlap_bound,
        kappa_overlap_bounded: kappa_overlap_max <= kappa_overlap_bound,
        all_converged: cont.all_converged,
        warm_start_energies: cont.stages.iter().map(|s| s.warm_start_energy).collect(),
        kappas,
        energies,
        overlaps,
    };
    let last = cont.stages.last().expect("non-empty schedule");
    let limit = limit_consistency(grid, models, &summary.energies, &last.result.state, last.kappa).ok();
    Ok((stages, summary, limit))
}

fn run_width(config: &RunConfig, width: f64) -> Result<SweepEntry, RunError> {
    let directory = format!("width_{}", sig9(width));
    let out = config.output_dir.join(&directory);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut sub = config.clone();
    sub.domain = config.domain.with_channel_width(width);
    sub.output_dir = out.clone();
    let grid = build_domain(&sub.domain)?;
    let models = sub.models();
    let cert = certificate(&grid, &models)?;
    write_file(&out.join("domain.csv"), &grid.to_csv())?;
    let (stages, _, _) = run_continuation(&grid, &models, &cert, &sub, &out)?;
    let last = stages.last().expect("non-empty schedule");
    let d = last.diagnostics.h1_core_distance;
    info!("width={width}: tau={:.6} sigma={:.6} d2={:.3e}", cert.tau, cert.sigma, d * d);
    Ok(SweepEntry {
        width,
        directory,
        channel_measure: cert.channel_measure,
        tau: cert.tau,
        sigma: cert.sigma,
        d2: d * d,
        energy: last.diagnostics.energy_i,
        stages,
    })
}

fn sweep_trend(entries: &[SweepEntry]) -> SweepTrend {
    let mut sorted: Vec<&SweepEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| b.width.total_cmp(&a.width));
    let decreasing = |f: fn(&SweepEntry) -> f64| sorted.windows(2).all(|w| f(w[1]) < f(w[0]));
    SweepTrend {
        widths: sorted.iter().map(|e| e.width).collect(),
        tau_decreasing: decreasing(|e| e.tau),
        sigma_decreasing: decreasing(|e| e.sigma),
        d2_decreasing: decreasing(|e| e.d2),
    }
}

/// Relative error between a central difference of the energy and the
/// gradient along `dir`.
pub fn gradient_fd_error(
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
    dir: &State,
    kappa: f64,
    step: f64,
) -> f64 {
    let exec = Exec::default();
    let shifted = |t: f64| {
        let data: Vec<Vec<f64>> =
            state.fields().zip(dir.fields()).map(|(u, d)| u.iter().zip(d).map(|(a, b)| a + t * b).collect()).collect();
        energy_total_with(exec, grid, models, &State::from_fields(data), kappa)
    };
    let fd = (shifted(step) - shifted(-step)) / (2.0 * step);
    let g = grad_i(grid, models, state, kappa);
    let exact = grid.cell_area() * par::dot(exec, g.as_slice(), dir.as_slice());
    (fd - exact).abs() / exact.abs().max(1e-300)
}

fn preflight(grid: &DomainGrid, models: &[ReactionModel], config: &RunConfig) -> Result<Preflight, RunError> {
    let kappa = *config.kappa_schedule.last().expect("validated schedule");
    let phi = initial_state(grid, models)?;
    let initial_energy = energy_total_with(config.solver.exec, grid, models, &phi, kappa);
    let trivial = trivial_min_comparison(grid, models, &trivial_tuple(grid, models))?;
    // Keep the probe away from the truncation breakpoints at 0 and A_i.
    let probe = State::from_fields(
        models
            .iter()
            .enumerate()
            .map(|(i, m)| phi.field(i).iter().map(|v| 0.1 * m.capacity() + 0.8 * v).collect())
            .collect(),
    );
    let dir = State::from_fields(
        (0..models.len()).map(|i| (0..grid.len()).map(|c| ((c * 7 + i * 13) as f64 * 0.61).sin()).collect()).collect(),
    );
    let gradient_rel_error = gradient_fd_error(grid, models, &probe, &dir, kappa, 1e-5);
    let segregated = segregation_metrics(grid, &phi).product_max == 0.0;
    if !segregated {
        warn!("initial tuple is not segregated");
    }
    Ok(Preflight {
        cells: grid.len(),
        domain_measure: grid.domain_measure(),
        initial_energy,
        trivial_energy: trivial.free_energy,
        trivial_lambda: trivial.lambda,
        trivial_quadrature_ok: trivial.margin.abs() <= 1e-6,
        gradient_rel_error,
        gradient_ok: gradient_rel_error <= 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::reaction::make_logistic;

    #[test]
    fn fields_header_and_rows() {
        let g = build_domain(&DomainSpec::unit_square(0.5)).unwrap();
        let ms = [make_logistic(2.0, 2.0).unwrap()];
        let s = initial_state(&g, &ms).unwrap();
        let csv = fields_csv(&g, &s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,y,label,u_1");
        assert_eq!(lines[1], "0.25,0.25,core_1,1");
        assert_eq!(lines.len(), 5);
    }
}

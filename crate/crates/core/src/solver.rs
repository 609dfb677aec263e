//! Projected Barzilai–Borwein descent on the penalized energy and its
//! continuation along an increasing competition schedule.

use std::collections::VecDeque;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::segregation_metrics;
use crate::discretization::{
    build_state_w, check_models, energy_total_with, grad_i_into, h1_core_distance_with, l2_norm, DiscretizationError,
    State,
};
use crate::geometry::{DomainGrid, Label};
use crate::par::{self, Exec};
use crate::reaction::{check_assumptions, ReactionModel};

/// Ramp length of the initial tuple, in cells.
pub const RAMP_CELLS: f64 = 10.0;

/// Largest energy increase tolerated on an accepted step (roundoff).
pub const ENERGY_SLACK: f64 = 1e-13;

const MIN_STEP_FRACTION: f64 = 1e-20;
const MAX_STEP: f64 = 1e4;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative tolerance on the projected-gradient residual.
    #[serde(default = "default_tol")]
    pub tol_r: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// First trial step; `None` means `1e-2 h²`.
    #[serde(default)]
    pub initial_step: Option<f64>,
    #[serde(default = "default_armijo")]
    pub armijo: f64,
    #[serde(default = "default_backtrack")]
    pub backtrack: f64,
    /// Project onto `[0, A_i]` after every step.
    #[serde(default = "default_clamp")]
    pub clamp: bool,
    #[serde(skip)]
    pub exec: Exec,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200_000
}
fn default_armijo() -> f64 {
    1e-4
}
fn default_backtrack() -> f64 {
    0.5
}
fn default_clamp() -> bool {
    true
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_r: default_tol(),
            max_iter: default_max_iter(),
            initial_step: None,
            armijo: default_armijo(),
            backtrack: default_backtrack(),
            clamp: default_clamp(),
            exec: Exec::default(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let ok = self.tol_r > 0.0
            && self.max_iter >= 1
            && self.armijo > 0.0
            && self.armijo < 1.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.initial_step.is_none_or(|s| s > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SolveError::BadOptions(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("non-finite energy at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("invalid solver options: {0}")]
    BadOptions(String),
    #[error("kappa schedule must be non-empty and strictly increasing: {0:?}")]
    BadSchedule(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub residual: f64,
    pub h1_core_distance: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub state: State,
    pub trace: Vec<TraceRow>,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Distance to `W` in `(H¹(Ω_0))^k`.
    pub h1_core_distance: f64,
}

impl SolveResult {
    /// Whether the energy trace never rose by more than [`ENERGY_SLACK`].
    pub fn trace_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].energy <= w[0].energy + ENERGY_SLACK)
    }

    pub fn trace_csv(&self) -> String {
        use crate::fmt::sig9;
        let mut out = String::from("iter,I,residual,h1_core_distance\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{},{}\n", r.iter, sig9(r.energy), sig9(r.residual), sig9(r.h1_core_distance)));
        }
        out
    }
}

/// The competitor tuple `Φ_ε`: `A_i` on core `i`, zero on the other cores,
/// and on channel cells a linear ramp of the species whose core is nearest
/// (through the channel), falling from `A_i` to zero over
/// `min(channel length, 10h)`. Ties go to the lower species index.
pub fn initial_state(grid: &DomainGrid, models: &[ReactionModel]) -> Result<State, DiscretizationError> {
    let mut s = build_state_w(grid, models)?;
    let k = models.len();
    let n = grid.len();
    let dist: Vec<Vec<u32>> = (0..k).map(|i| channel_distance(grid, i)).collect();
    let ramp = grid.channel_length().min(RAMP_CELLS * grid.h());
    for c in (0..n).filter(|&c| grid.label(c) == Label::Channel) {
        let owner = (0..k).min_by_key(|&i| (dist[i][c], i)).expect("k >= 1");
        let d = dist[owner][c];
        if d == u32::MAX {
            continue;
        }
        let a = models[owner].capacity();
        s.field_mut(owner)[c] = a * (1.0 - d as f64 * grid.h() / ramp).max(0.0);
    }
    Ok(s)
}

/// Breadth-first distance (in cells) from core `i` through channel cells.
fn channel_distance(grid: &DomainGrid, i: usize) -> Vec<u32> {
    let mut dist = vec![u32::MAX; grid.len()];
    let mut queue = VecDeque::new();
    for c in 0..grid.len() {
        if grid.label(c) == Label::Core(i) {
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(c) = queue.pop_front() {
        for &nb in grid.neighbors(c) {
            if nb == crate::geometry::NONE {
                continue;
            }
            let nb = nb as usize;
            if grid.label(nb) == Label::Channel && dist[nb] == u32::MAX {
                dist[nb] = dist[c] + 1;
                queue.push_back(nb);
            }
        }
    }
    dist
}

struct Workspace<'a> {
    grid: &'a DomainGrid,
    models: &'a [ReactionModel],
    kappa: f64,
    exec: Exec,
    bounds: Vec<f64>,
    clamp: bool,
}

impl Workspace<'_> {
    fn energy(&self, s: &State) -> f64 {
        energy_total_with(self.exec, self.grid, self.models, s, self.kappa)
    }

    fn gradient(&self, s: &State, out: &mut State) {
        grad_i_into(self.exec, self.grid, self.models, s, self.kappa, out);
    }

    fn project(&self, v: f64, i: usize) -> f64 {
        if self.clamp {
            v.clamp(0.0, self.bounds[i])
        } else {
            v
        }
    }

    /// `‖P(u − g) − u‖` in the discrete `L²` norm.
    fn residual(&self, u: &State, g: &State) -> f64 {
        let n = u.num_cells();
        let (us, gs) = (u.as_slice(), g.as_slice());
        let sq = par::sum(self.exec, us.len(), |idx| {
            let r = self.project(us[idx] - gs[idx], idx / n) - us[idx];
            r * r
        });
        (self.grid.cell_area() * sq).sqrt()
    }
}

/// Minimizes `I_{ε,κ}` from `state0` by projected gradient steps with
/// Barzilai–Borwein step lengths and an Armijo backtracking safeguard.
///
/// Hitting the iteration cap is not an error: the result comes back with
/// `converged = false`.
pub fn minimize(
    grid: &DomainGrid,
    models: &[ReactionModel],
    state0: &State,
    kappa: f64,
    opts: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    opts.validate()?;
    check_models(grid, models)?;
    state0.check_shape(grid)?;
    let ws = Workspace {
        grid,
        models,
        kappa,
        exec: opts.exec,
        bounds: models.iter().map(ReactionModel::capacity).collect(),
        clamp: opts.clamp,
    };
    let w = build_state_w(grid, models)?;
    let h2 = grid.cell_area();
    let n = grid.len();

    let mut u = state0.clone();
    if opts.clamp {
        u.clamp(&ws.bounds);
    }
    let mut energy = ws.energy(&u);
    if !energy.is_finite() {
        return Err(SolveError::NonFinite { iteration: 0 });
    }
    let mut g = State::zeros(u.num_species(), n);
    ws.gradient(&u, &mut g);
    let mut g_new = g.clone();
    let mut trial = u.clone();
    let mut dir = vec![0.0; u.as_slice().len()];
    let mut step = opts.initial_step.unwrap_or(1e-2 * h2);
    let step_min = 1e-12 * h2;

    let mut residual = ws.residual(&u, &g);
    let mut trace =
        vec![TraceRow { iter: 0, energy, residual, h1_core_distance: h1_core_distance_with(opts.exec, grid, &u, &w) }];
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let scale = l2_norm(grid, u.as_slice()).max(1.0);
        if residual <= opts.tol_r * scale {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let us = u.as_slice();
        let gs = g.as_slice();
        par::fill(opts.exec, &mut dir, |idx| ws.project(us[idx] - step * gs[idx], idx / n) - us[idx]);
        let slope = h2 * par::dot(opts.exec, gs, &dir);
        if slope >= 0.0 {
            debug!("non-descent direction at iteration {iterations}, stopping");
            break;
        }
        let mut lam = 1.0;
        let accepted = loop {
            {
                let ts = trial.as_mut_slice();
                par::fill(opts.exec, ts, |idx| us[idx] + lam * dir[idx]);
            }
            let e = ws.energy(&trial);
            if !e.is_finite() {
                return Err(SolveError::NonFinite { iteration: iterations });
            }
            if e <= energy + opts.armijo * lam * slope || (e <= energy + ENERGY_SLACK && lam * slope > -ENERGY_SLACK) {
                break Some(e);
            }
            lam *= opts.backtrack;
            if lam < MIN_STEP_FRACTION {
                break None;
            }
        };
        let Some(e_new) = accepted else {
            debug!("line search stalled at iteration {iterations}");
            break;
        };

        ws.gradient(&trial, &mut g_new);
        let ts = trial.as_slice();
        let (ss, sy) = {
            let gn = g_new.as_slice();
            let ss = par::sum(opts.exec, ts.len(), |i| {
                let s = ts[i] - us[i];
                s * s
            });
            let sy = par::sum(opts.exec, ts.len(), |i| (ts[i] - us[i]) * (gn[i] - gs[i]));
            (ss, sy)
        };
        step = if sy > 0.0 { (ss / sy).clamp(step_min, MAX_STEP) } else { MAX_STEP };

        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        energy = e_new;
        residual = ws.residual(&u, &g);
        trace.push(TraceRow {
            iter: iterations,
            energy,
            residual,
            h1_core_distance: h1_core_distance_with(opts.exec, grid, &u, &w),
        });
    }
    let h1 = trace.last().map_or(0.0, |r| r.h1_core_distance);
    info!(
        "kappa={kappa}: I={energy:.10} residual={residual:.3e} after {iterations} iterations (converged={converged})"
    );
    Ok(SolveResult { state: u, trace, energy, residual, iterations, converged, h1_core_distance: h1 })
}

/// One stage of a continuation.
#[derive(Debug, Clone)]
pub struct Stage {
    pub kappa: f64,
    pub result: SolveResult,
    /// `Σ_{i≠j} ∫u_i² u_j²`.
    pub overlap: f64,
    /// `I` at this stage's `κ` evaluated on the warm start.
    pub warm_start_energy: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub schedule: Vec<f64>,
    pub stages: Vec<Stage>,
    /// `c_{j+1} ≥ c_j − 10·tol_r·|c_j|` along the schedule.
    pub monotone: bool,
    pub all_converged: bool,
}

impl ContinuationResult {
    /// The segregated-limit candidate: the last stage's state.
    pub fn final_state(&self) -> &State {
        &self.stages.last().expect("at least one stage").result.state
    }

    pub fn energies(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.result.energy).collect()
    }
}

/// Whether `energies` is non-decreasing up to `10·tol·|c_j|`.
pub fn energies_monotone(energies: &[f64], tol: f64) -> bool {
    energies.windows(2).all(|w| w[1] >= w[0] - 10.0 * tol * w[0].abs())
}

/// Minimizes along `schedule`, warm-starting every stage from the previous
/// one; the first stage starts from [`initial_state`].
pub fn kappa_continuation(
    grid: &DomainGrid,
    models: &[ReactionModel],
    schedule: &[f64],
    opts: &SolveOptions,
) -> Result<ContinuationResult, SolveError> {
    let start = initial_state(grid, models)?;
    continue_from(grid, models, &start, schedule, opts)
}

/// [`kappa_continuation`] from an explicit starting state.
pub fn continue_from(
    grid: &DomainGrid,
    models: &[ReactionModel],
    start: &State,
    schedule: &[f64],
    opts: &SolveOptions,
) -> Result<ContinuationResult, SolveError> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) || schedule.iter().any(|k| k.is_nan() || *k < 0.0) {
        return Err(SolveError::BadSchedule(schedule.to_vec()));
    }
    if let Ok(report) = check_assumptions(models) {
        for &kappa in schedule.iter().filter(|&&k| k <= report.kappa_threshold) {
            warn!("kappa={kappa} is not above the threshold {}", report.kappa_threshold);
        }
    }
    let mut stages: Vec<Stage> = Vec::with_capacity(schedule.len());
    let mut current = start.clone();
    for &kappa in schedule {
        let warm_start_energy = energy_total_with(opts.exec, grid, models, &current, kappa);
        let result = minimize(grid, models, &current, kappa, opts)?;
        if !result.converged {
            warn!("stage kappa={kappa} hit the iteration cap");
        }
        let overlap = segregation_metrics(grid, &result.state).total_overlap();
        current = result.state.clone();
        stages.push(Stage { kappa, result, overlap, warm_start_energy });
    }
    let energies: Vec<f64> = stages.iter().map(|s| s.result.energy).collect();
    let monotone = energies_monotone(&energies, opts.tol_r);
    let all_converged = stages.iter().all(|s| s.result.converged);
    Ok(ContinuationResult { schedule: schedule.to_vec(), stages, monotone, all_converged })
}

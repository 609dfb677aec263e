//! Diagnostics evaluated on computed states: segregation, bounds, the
//! energy sandwich around `W`, comparison with the trivial global minimizer,
//! the extremality inequalities and the second-order Taylor remainder.

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::discretization::{
    build_state_w, check_models, energy_i_with, energy_j_with, free_energy_split, h1_core_distance_with, masses,
    neumann_laplacian_with, DiscretizationError, State,
};
use crate::geometry::{DomainGrid, Label, NONE};
use crate::par::{self, Exec};
use crate::reaction::{check_assumptions, ReactionError, ReactionModel};

/// Support threshold relative to the capacity: `u_i > 1e-6 A_i`.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Largest pointwise product, relative to `max A_i²`, for a state to count
/// as segregated.
pub const SEGREGATION_THRESHOLD: f64 = 0.05;

/// Nontriviality floor: `∫u_i ≥ 1e-3 A_i |Ω^i|`.
pub const NONTRIVIAL_FRACTION: f64 = 1e-3;

/// Relative tolerance of the interior equality check.
pub const INTERIOR_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Reaction(#[from] ReactionError),
}

/// A report section that may not have been computed. Serializes as the
/// string `"skipped"` when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct Section<T>(pub Option<T>);

impl<T> Section<T> {
    pub fn skipped() -> Self {
        Section(None)
    }

    pub fn get(&self) -> Option<&T> {
        self.0.as_ref()
    }
}

impl<T> From<Option<T>> for Section<T> {
    fn from(v: Option<T>) -> Self {
        Section(v)
    }
}

impl<T: Serialize> Serialize for Section<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match &self.0 {
            Some(v) => v.serialize(s),
            None => s.serialize_str("skipped"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegregationMetrics {
    /// `∫u_i²u_j²` for every ordered pair; the diagonal is zero.
    pub pairs: Vec<Vec<f64>>,
    /// `|ω_i|` with `ω_i = {u_i > 1e-6 A_i}`.
    pub support: Vec<f64>,
    /// `max_cell max_{i≠j} u_i u_j`.
    pub product_max: f64,
    pub support_threshold: f64,
}

impl SegregationMetrics {
    /// `Σ_{i≠j} ∫u_i²u_j²`.
    pub fn total_overlap(&self) -> f64 {
        self.pairs.iter().flatten().sum()
    }
}

/// Overlaps, support measures and the largest pointwise product. Supports
/// are measured against the per-species capacities when `models` is given,
/// against 1 otherwise.
pub fn segregation_metrics(grid: &DomainGrid, state: &State) -> SegregationMetrics {
    segregation_metrics_scaled(grid, state, None)
}

pub fn segregation_metrics_scaled(
    grid: &DomainGrid,
    state: &State,
    models: Option<&[ReactionModel]>,
) -> SegregationMetrics {
    let k = state.num_species();
    let h2 = grid.cell_area();
    let mut pairs = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (u, v) = (state.field(i), state.field(j));
            let o = h2 * u.iter().zip(v).map(|(a, b)| a * a * b * b).sum::<f64>();
            pairs[i][j] = o;
            pairs[j][i] = o;
        }
    }
    let support = (0..k)
        .map(|i| {
            let a = models.map_or(1.0, |m| m[i].capacity());
            let n = state.field(i).iter().filter(|&&v| v > SUPPORT_THRESHOLD * a).count();
            n as f64 * h2
        })
        .collect();
    let mut product_max: f64 = 0.0;
    for c in 0..state.num_cells() {
        for i in 0..k {
            for j in i + 1..k {
                product_max = product_max.max(state.get(i, c) * state.get(j, c));
            }
        }
    }
    SegregationMetrics { pairs, support, product_max, support_threshold: SUPPORT_THRESHOLD }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub tolerance: f64,
    /// Cell values outside `[−tol, A_i + tol]`.
    pub count: usize,
    /// Largest excursion outside `[0, A_i]`, zero if none.
    pub worst: f64,
    pub pass: bool,
}

/// Counts values outside `[0, A_i]` by more than `tolerance`.
pub fn bound_violations(models: &[ReactionModel], state: &State, tolerance: f64) -> BoundsReport {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for (i, m) in models.iter().enumerate() {
        let a = m.capacity();
        for &v in state.field(i) {
            let excess = (-v).max(v - a).max(0.0);
            worst = worst.max(excess);
            if excess > tolerance {
                count += 1;
            }
        }
    }
    BoundsReport { tolerance, count, worst, pass: count == 0 }
}

/// Whether every species keeps `∫u_i ≥ 1e-3 A_i |Ω^i|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nontriviality {
    pub masses: Vec<f64>,
    pub floors: Vec<f64>,
    pub pass: bool,
}

pub fn nontriviality(grid: &DomainGrid, models: &[ReactionModel], state: &State) -> Nontriviality {
    let masses = masses(grid, state);
    let floors: Vec<f64> =
        models.iter().enumerate().map(|(i, m)| NONTRIVIAL_FRACTION * m.capacity() * grid.core_measure(i)).collect();
    let pass = masses.iter().zip(&floors).all(|(m, f)| m >= f);
    Nontriviality { masses, floors, pass }
}

/// Constants bracketing the minimum around `W`, computed once per grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// `−Σ μ_i |Ω^i|` with grid measures.
    pub mu: f64,
    /// Channel part of `J(Φ_ε)`.
    pub tau: f64,
    /// `(τ_ε + |R_ε| Σμ_i) / η`.
    pub sigma: f64,
    pub eta: f64,
    pub channel_measure: f64,
    pub sum_mu: f64,
    pub kappa_threshold: f64,
}

pub fn certificate(grid: &DomainGrid, models: &[ReactionModel]) -> Result<Certificate, AnalysisError> {
    check_models(grid, models)?;
    let report = check_assumptions(models)?;
    let phi = crate::solver::initial_state(grid, models)?;
    let (_, tau) = free_energy_split(grid, models, &phi);
    let mu = -models.iter().enumerate().map(|(i, m)| m.mu() * grid.core_measure(i)).sum::<f64>();
    let sum_mu: f64 = models.iter().map(ReactionModel::mu).sum();
    let channel_measure = grid.channel_measure();
    let sigma = (tau + channel_measure * sum_mu) / report.eta;
    Ok(Certificate {
        mu,
        tau,
        sigma,
        eta: report.eta,
        channel_measure,
        sum_mu,
        kappa_threshold: report.kappa_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub kappa: f64,
    pub energy: f64,
    pub mu: f64,
    pub tau: f64,
    pub sigma: f64,
    pub eta: f64,
    pub d: f64,
    pub d2: f64,
    pub slack: f64,
    /// `μ + τ_ε + slack − I`.
    pub upper_margin: f64,
    /// `I − (μ + η d² − |R_ε|Σμ_i − slack)`.
    pub lower_margin: f64,
    /// `σ_ε + slack − d²`.
    pub distance_margin: f64,
    pub upper_ok: bool,
    /// Only asserted above the competition threshold.
    pub lower_asserted: bool,
    pub lower_ok: bool,
    pub distance_ok: bool,
}

impl SandwichReport {
    pub fn pass(&self) -> bool {
        self.upper_ok && (!self.lower_asserted || (self.lower_ok && self.distance_ok))
    }
}

/// Places a computed minimum `energy` at distance `d` from `W` inside
/// `μ + η d² − |R_ε|Σμ_i ≤ I ≤ μ + τ_ε` and checks `d² ≤ σ_ε`.
pub fn energy_sandwich(cert: &Certificate, energy: f64, d: f64, kappa: f64) -> SandwichReport {
    let slack = 1e-6 * (1.0 + cert.mu.abs());
    let d2 = d * d;
    let upper_margin = cert.mu + cert.tau + slack - energy;
    let lower_margin = energy - (cert.mu + cert.eta * d2 - cert.channel_measure * cert.sum_mu - slack);
    let distance_margin = cert.sigma + slack - d2;
    SandwichReport {
        kappa,
        energy,
        mu: cert.mu,
        tau: cert.tau,
        sigma: cert.sigma,
        eta: cert.eta,
        d,
        d2,
        slack,
        upper_margin,
        lower_margin,
        distance_margin,
        upper_ok: upper_margin >= 0.0,
        lower_asserted: kappa > cert.kappa_threshold,
        lower_ok: lower_margin >= 0.0,
        distance_ok: distance_margin >= 0.0,
    }
}

/// Index of the largest `μ_i`, lowest index on ties.
pub fn dominant_species(mus: &[f64]) -> usize {
    let mut best = 0;
    for (i, &m) in mus.iter().enumerate() {
        if m > mus[best] {
            best = i;
        }
    }
    best
}

/// `A_{i0}` everywhere for the dominant species, zero for the rest.
pub fn trivial_tuple(grid: &DomainGrid, models: &[ReactionModel]) -> State {
    let mus: Vec<f64> = models.iter().map(ReactionModel::mu).collect();
    let i0 = dominant_species(&mus);
    let mut s = State::zeros(models.len(), grid.len());
    s.field_mut(i0).fill(models[i0].capacity());
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrivialMinReport {
    /// Dominant species, 1-based.
    pub i0: usize,
    /// `−μ_{i0} |Ω_ε|`.
    pub lambda: f64,
    pub free_energy: f64,
    /// `J − λ`.
    pub margin: f64,
    /// Species with `∫u_i ≥ 1e-3 A_i |Ω^i|`.
    pub nontrivial_species: usize,
    /// `J > λ`, asserted only with at least two nontrivial species.
    pub strict_asserted: bool,
    pub strict_ok: bool,
}

/// Compares `J(state)` with the value of the trivial global minimizer.
pub fn trivial_min_comparison(
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
) -> Result<TrivialMinReport, AnalysisError> {
    trivial_min_comparison_with(Exec::default(), grid, models, state)
}

pub fn trivial_min_comparison_with(
    exec: Exec,
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
) -> Result<TrivialMinReport, AnalysisError> {
    check_models(grid, models)?;
    let mus: Vec<f64> = models.iter().map(ReactionModel::mu).collect();
    let i0 = dominant_species(&mus);
    let lambda = -mus[i0] * grid.domain_measure();
    let free_energy = energy_j_with(exec, grid, models, state)?;
    let nt = nontriviality(grid, models, state);
    let nontrivial_species = nt.masses.iter().zip(&nt.floors).filter(|(m, f)| m >= f).count();
    let margin = free_energy - lambda;
    Ok(TrivialMinReport {
        i0: i0 + 1,
        lambda,
        free_energy,
        margin,
        nontrivial_species,
        strict_asserted: nontrivial_species >= 2,
        strict_ok: margin > 0.0,
    })
}

/// Worst normalized violation of one family of inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    /// Largest `r(φ)/‖φ‖_{H¹}` in the violating direction; negative when
    /// every test satisfies the inequality strictly.
    pub value: f64,
    pub x: f64,
    pub y: f64,
    /// Tent half-width.
    pub scale: f64,
}

impl Violation {
    fn none() -> Self {
        Violation { value: f64::NEG_INFINITY, x: f64::NAN, y: f64::NAN, scale: f64::NAN }
    }

    fn update(&mut self, value: f64, x: f64, y: f64, scale: f64) {
        if value > self.value {
            *self = Violation { value, x, y, scale };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeciesExtremality {
    /// `a(u_i, φ) − ⟨f_i(u_i), φ⟩ ≤ 0`.
    pub lower: Violation,
    /// `a(û_i, φ) − ⟨f̂_i, φ⟩ ≥ 0`, reported as the worst negative part.
    pub upper: Violation,
    /// `max (−Δu_i − f_i(u_i))` over all cells.
    pub pointwise_max: f64,
    /// `max |−Δu_i + u_i − f_i(u_i)|` over interior cells of `ω_i`.
    pub interior_residual: f64,
    pub interior_cells: usize,
    pub interior_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalityReport {
    pub tol: f64,
    /// Whether the input is segregated enough for the checks to apply.
    pub applicable: bool,
    pub product_max: f64,
    pub species: Vec<SpeciesExtremality>,
    /// Largest violation over both families and all species.
    pub worst: f64,
    pub within_tol: bool,
    pub interior_ok: bool,
}

/// Strong-form residual `−Δu + u − f(u)` per species.
fn strong_residuals(exec: Exec, grid: &DomainGrid, models: &[ReactionModel], state: &State) -> Vec<Vec<f64>> {
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let u = state.field(i);
            let lap = neumann_laplacian_with(exec, grid, u);
            u.iter().zip(&lap).map(|(&v, &l)| -l + v - m.rate(v)).collect()
        })
        .collect()
}

/// Checks the extremality inequalities against bilinear tents
/// `max(0, 1 − |dx|/H) max(0, 1 − |dy|/H)` with `H = 2^m h`, from single
/// cells up to half the smaller grid extent. Tents are centered on every
/// cell at the finest scale and on a lattice of spacing `H/2` above it.
///
/// By summation by parts `a(u, φ) − ⟨f, φ⟩ = h² Σ φ_c (−Δu + u − f)_c`, so
/// one strong residual per species serves every tent; the `û_i` residual is
/// `R_i − Σ_{h≠i} R_h` by linearity.
pub fn check_2kvar(grid: &DomainGrid, models: &[ReactionModel], state: &State, tol: f64) -> ExtremalityReport {
    check_2kvar_with(Exec::default(), grid, models, state, tol)
}

pub fn check_2kvar_with(
    exec: Exec,
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
    tol: f64,
) -> ExtremalityReport {
    let k = models.len();
    let h = grid.h();
    let h2 = grid.cell_area();
    let lower_res = strong_residuals(exec, grid, models, state);
    let total: Vec<f64> = (0..grid.len()).map(|c| lower_res.iter().map(|r| r[c]).sum()).collect();
    // R̂_i = R_i − Σ_{h≠i} R_h = 2 R_i − Σ_h R_h
    let upper_res: Vec<Vec<f64>> =
        lower_res.iter().map(|r| r.iter().zip(&total).map(|(a, t)| 2.0 * a - t).collect()).collect();

    let mut lower = vec![Violation::none(); k];
    let mut upper = vec![Violation::none(); k];
    let (nx, ny) = (grid.nx(), grid.ny());
    let max_cells = (nx.min(ny) / 2).max(1);
    let mut s = 1usize;
    while s <= max_cells {
        let stride = (s / 2).max(1);
        let centers: Vec<usize> = (0..grid.len())
            .filter(|&a| {
                let (i, j) = grid.raster_coords(a);
                i % stride == 0 && j % stride == 0
            })
            .collect();
        let tested = par::map(exec, centers.len(), |t| {
            let (ci, cj) = grid.raster_coords(centers[t]);
            tent_responses(grid, ci, cj, s, &lower_res, &upper_res)
        });
        for (t, (norm, lo, up)) in tested.into_iter().enumerate() {
            let (x, y) = grid.center(centers[t]);
            for i in 0..k {
                lower[i].update(h2 * lo[i] / norm, x, y, s as f64 * h);
                upper[i].update(-h2 * up[i] / norm, x, y, s as f64 * h);
            }
        }
        s *= 2;
    }

    let seg = segregation_metrics_scaled(grid, state, Some(models));
    let a_max = models.iter().map(ReactionModel::capacity).fold(0.0, f64::max);
    let species: Vec<SpeciesExtremality> = (0..k)
        .map(|i| {
            let a = models[i].capacity();
            let u = state.field(i);
            let floor = SUPPORT_THRESHOLD * a;
            let mut pointwise_max = f64::NEG_INFINITY;
            let mut interior_residual: f64 = 0.0;
            let mut interior_cells = 0;
            for c in 0..grid.len() {
                // −Δu − f = R − u
                pointwise_max = pointwise_max.max(lower_res[i][c] - u[c]);
                let inside = u[c] > floor
                    && grid.neighbors(c).iter().all(|&n| n == NONE || u[n as usize] > floor)
                    && (0..k).all(|j| j == i || state.get(j, c) <= SUPPORT_THRESHOLD * models[j].capacity());
                if inside {
                    interior_cells += 1;
                    interior_residual = interior_residual.max(lower_res[i][c].abs());
                }
            }
            SpeciesExtremality {
                lower: lower[i],
                upper: upper[i],
                pointwise_max,
                interior_residual,
                interior_cells,
                interior_ok: interior_residual <= INTERIOR_TOLERANCE * a,
            }
        })
        .collect();
    let worst = species.iter().map(|s| s.lower.value.max(s.upper.value)).fold(f64::NEG_INFINITY, f64::max);
    ExtremalityReport {
        tol,
        applicable: seg.product_max <= SEGREGATION_THRESHOLD * a_max * a_max,
        product_max: seg.product_max,
        worst,
        within_tol: worst <= tol,
        interior_ok: species.iter().all(|s| s.interior_ok),
        species,
    }
}

/// `(‖φ‖_{H¹}, Σφ R⁻_i, Σφ R⁺_i)` for the tent of half-width `s` cells at
/// raster cell `(ci, cj)`.
fn tent_responses(
    grid: &DomainGrid,
    ci: usize,
    cj: usize,
    s: usize,
    lower: &[Vec<f64>],
    upper: &[Vec<f64>],
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = lower.len();
    let sf = s as f64;
    let weight = |a: usize| {
        let (i, j) = grid.raster_coords(a);
        let dx = (i as f64 - ci as f64).abs();
        let dy = (j as f64 - cj as f64).abs();
        (1.0 - dx / sf).max(0.0) * (1.0 - dy / sf).max(0.0)
    };
    let (nx, ny) = (grid.nx() as isize, grid.ny() as isize);
    let si = s as isize;
    let mut lo = vec![0.0; k];
    let mut up = vec![0.0; k];
    let mut mass = 0.0;
    let mut faces = 0.0;
    for dj in -si..=si {
        let j = cj as isize + dj;
        if j < 0 || j >= ny {
            continue;
        }
        for di in -si..=si {
            let i = ci as isize + di;
            if i < 0 || i >= nx {
                continue;
            }
            let Some(a) = grid.active_index(i as usize, j as usize) else {
                continue;
            };
            let w = weight(a);
            if w > 0.0 {
                mass += w * w;
                for sp in 0..k {
                    lo[sp] += w * lower[sp][a];
                    up[sp] += w * upper[sp][a];
                }
            }
            let nb = grid.neighbors(a);
            for &n in [nb[0], nb[2]].iter().filter(|&&n| n != NONE) {
                let d = weight(n as usize) - w;
                faces += d * d;
            }
        }
    }
    let norm = (faces + grid.cell_area() * mass).sqrt();
    (norm, lo, up)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaylorReport {
    /// `Σ_i ∫_{Ω_0} [F_i(u_i) − F_i(w_i) − f_i(w_i)(u_i − w_i) − ½ f'_i(w_i)(u_i − w_i)²]`.
    pub remainder: f64,
    /// `η d²`.
    pub bound: f64,
    /// `bound − remainder`.
    pub margin: f64,
    pub d: f64,
    pub eta: f64,
    /// Whether `d` lies inside the radius where the margin is asserted.
    pub within_radius: bool,
    /// `|u_i| ≤ A_i` on every core cell.
    pub precondition_ok: bool,
}

/// Second-order Taylor remainder of the core potential energy around `W`
/// compared with `η ‖U − W‖²_{H¹(Ω_0)}`.
pub fn taylor_remainder_check(
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
    radius: f64,
) -> Result<TaylorReport, AnalysisError> {
    let w = build_state_w(grid, models)?;
    state.check_shape(grid)?;
    let eta = check_assumptions(models)?.eta;
    let h2 = grid.cell_area();
    let mut remainder = 0.0;
    let mut precondition_ok = true;
    for (i, m) in models.iter().enumerate() {
        let (u, wi) = (state.field(i), w.field(i));
        for c in (0..grid.len()).filter(|&c| grid.is_core(c)) {
            let (v, r) = (u[c], wi[c]);
            if v.abs() > m.capacity() * (1.0 + 1e-12) {
                precondition_ok = false;
            }
            let d = v - r;
            remainder += h2 * (m.potential(v) - m.potential(r) - m.rate(r) * d - 0.5 * m.rate_derivative(r) * d * d);
        }
    }
    let d = h1_core_distance_with(Exec::default(), grid, state, &w);
    let bound = eta * d * d;
    Ok(TaylorReport {
        remainder,
        bound,
        margin: bound - remainder,
        d,
        eta,
        within_radius: d <= radius,
        precondition_ok,
    })
}

/// Consistency of a continuation's end point with the segregated problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    /// `J` of the final state with every cell given to its largest species.
    pub segregated_energy: f64,
    pub final_energy: f64,
    /// Coupling term of the final stage.
    pub coupling: f64,
    /// `J(final) − c_final`, equal to minus the coupling inside the bounds.
    pub free_energy_gap: f64,
    /// `J(segregated) ≥ c_j − slack` for every stage.
    pub dominates_stages: bool,
    /// `|J(final) − c_final| ≤ coupling + slack`.
    pub consistent: bool,
}

/// Keeps, in every cell, only the species with the largest density
/// (lowest index on ties).
pub fn segregate(state: &State) -> State {
    let k = state.num_species();
    let n = state.num_cells();
    let mut out = State::zeros(k, n);
    for c in 0..n {
        let mut best = 0;
        for i in 1..k {
            if state.get(i, c) > state.get(best, c) {
                best = i;
            }
        }
        out.field_mut(best)[c] = state.get(best, c);
    }
    out
}

pub fn limit_consistency(
    grid: &DomainGrid,
    models: &[ReactionModel],
    stage_energies: &[f64],
    final_state: &State,
    final_kappa: f64,
) -> Result<LimitReport, AnalysisError> {
    let exec = Exec::default();
    let segregated_energy = energy_j_with(exec, grid, models, &segregate(final_state))?;
    let breakdown = energy_i_with(exec, grid, models, final_state, final_kappa);
    let final_energy = *stage_energies.last().unwrap_or(&breakdown.total);
    let free = energy_j_with(exec, grid, models, final_state)?;
    let slack = |c: f64| 1e-6 * (1.0 + c.abs());
    let gap = free - final_energy;
    Ok(LimitReport {
        segregated_energy,
        final_energy,
        coupling: breakdown.coupling,
        free_energy_gap: gap,
        dominates_stages: stage_energies.iter().all(|&c| segregated_energy >= c - slack(c)),
        consistent: gap.abs() <= breakdown.coupling + slack(final_energy),
    })
}

/// Every diagnostic for one computed stage.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub kappa: f64,
    pub energy_i: f64,
    pub energy_j: Option<f64>,
    pub coupling: f64,
    pub masses: Vec<f64>,
    pub nontrivial: bool,
    pub h1_core_distance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub overlap: Section<SegregationMetrics>,
    pub bounds: Section<BoundsReport>,
    pub sandwich: Section<SandwichReport>,
    pub extremality: Section<ExtremalityReport>,
    pub taylor: Section<TaylorReport>,
    pub trivial_min: Section<TrivialMinReport>,
}

/// Settings for [`diagnose`].
#[derive(Debug, Clone, Copy)]
pub struct DiagnoseOptions {
    /// Tolerance for the bounds check; zero for clamped runs.
    pub bounds_tolerance: f64,
    /// Radius inside which the Taylor margin is asserted.
    pub taylor_radius: f64,
    pub exec: Exec,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions { bounds_tolerance: 0.0, taylor_radius: 0.05, exec: Exec::default() }
    }
}

/// Runs every check on a solver result. Sections whose preconditions fail
/// are marked skipped.
pub fn diagnose(
    grid: &DomainGrid,
    models: &[ReactionModel],
    cert: Option<&Certificate>,
    result: &crate::solver::SolveResult,
    kappa: f64,
    opts: DiagnoseOptions,
) -> DiagnosticsReport {
    let state = &result.state;
    let breakdown = energy_i_with(opts.exec, grid, models, state, kappa);
    let nt = nontriviality(grid, models, state);
    let bounds = bound_violations(models, state, opts.bounds_tolerance);
    let sandwich =
        cert.filter(|_| result.converged).map(|c| energy_sandwich(c, result.energy, result.h1_core_distance, kappa));
    let in_box = bound_violations(models, state, crate::discretization::RANGE_SLACK).pass;
    let extremality = in_box.then(|| check_2kvar_with(opts.exec, grid, models, state, 1.0 / kappa.max(1.0)));
    let taylor = taylor_remainder_check(grid, models, state, opts.taylor_radius).ok();
    let trivial_min = trivial_min_comparison_with(opts.exec, grid, models, state).ok();
    DiagnosticsReport {
        kappa,
        energy_i: breakdown.total,
        energy_j: breakdown.free_energy,
        coupling: breakdown.coupling,
        masses: nt.masses,
        nontrivial: nt.pass,
        h1_core_distance: result.h1_core_distance,
        converged: result.converged,
        iterations: result.iterations,
        residual: result.residual,
        overlap: Section(Some(segregation_metrics_scaled(grid, state, Some(models)))),
        bounds: Section(Some(bounds)),
        sandwich: sandwich.into(),
        extremality: extremality.into(),
        taylor: taylor.into(),
        trivial_min: trivial_min.into(),
    }
}

/// Core cells of species `i` adjacent to a non-core cell.
pub fn core_boundary_cells(grid: &DomainGrid, i: usize) -> Vec<usize> {
    (0..grid.len())
        .filter(|&c| grid.label(c) == Label::Core(i))
        .filter(|&c| grid.neighbors(c).iter().any(|&n| n != NONE && !grid.is_core(n as usize)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::energy_i;
    use crate::geometry::{build_domain, DomainSpec};
    use crate::reaction::make_logistic;
    use approx::assert_abs_diff_eq;

    fn dumbbell() -> (DomainGrid, Vec<ReactionModel>) {
        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.05)).unwrap();
        let ms = vec![make_logistic(2.0, 2.0).unwrap(), make_logistic(2.0, 2.0).unwrap()];
        (g, ms)
    }

    #[test]
    fn w_is_segregated() {
        let (g, ms) = dumbbell();
        let w = build_state_w(&g, &ms).unwrap();
        let m = segregation_metrics_scaled(&g, &w, Some(&ms));
        assert_eq!(m.total_overlap(), 0.0);
        assert_eq!(m.product_max, 0.0);
        for i in 0..2 {
            assert_abs_diff_eq!(m.support[i], g.core_measure(i), epsilon = 1e-12);
        }
    }

    #[test]
    fn overlap_of_uniform_pair() {
        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.05)).unwrap();
        let s = State::from_fields(vec![vec![0.5; g.len()], vec![0.2; g.len()]]);
        let m = segregation_metrics(&g, &s);
        let want = 0.25 * 0.04 * g.domain_measure();
        assert_abs_diff_eq!(m.pairs[0][1], want, epsilon = 1e-12);
        assert_abs_diff_eq!(m.total_overlap(), 2.0 * want, epsilon = 1e-12);
        assert_abs_diff_eq!(m.product_max, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn square_sandwich_is_tight() {
        let g = build_domain(&DomainSpec::unit_square(0.1)).unwrap();
        let ms = vec![make_logistic(2.0, 2.0).unwrap()];
        let cert = certificate(&g, &ms).unwrap();
        assert_abs_diff_eq!(cert.mu, -1.0 / 6.0, epsilon = 1e-12);
        assert_eq!(cert.tau, 0.0);
        let rep = energy_sandwich(&cert, -1.0 / 6.0, 0.0, 10.0);
        assert!(rep.pass());
        assert!(rep.upper_margin <= rep.slack + 1e-15 && rep.lower_margin <= rep.slack + 1e-15);
    }

    #[test]
    fn phi_energy_is_mu_plus_tau() {
        let (g, ms) = dumbbell();
        let cert = certificate(&g, &ms).unwrap();
        let phi = crate::solver::initial_state(&g, &ms).unwrap();
        assert_abs_diff_eq!(energy_i(&g, &ms, &phi, 1e3).total, cert.mu + cert.tau, epsilon = 1e-12);
        assert!(cert.tau > 0.0);
    }

    #[test]
    fn trivial_tuple_hits_lambda() {
        let (g, ms) = dumbbell();
        let rep = trivial_min_comparison(&g, &ms, &trivial_tuple(&g, &ms)).unwrap();
        assert_abs_diff_eq!(rep.margin, 0.0, epsilon = 1e-12);
        assert_eq!(rep.i0, 1);
        let zero = State::zeros(2, g.len());
        let rep = trivial_min_comparison(&g, &ms, &zero).unwrap();
        assert_eq!(rep.free_energy, 0.0);
        assert!(rep.strict_ok && !rep.strict_asserted);
    }

    #[test]
    fn dominant_species_ties_and_scaling() {
        assert_eq!(dominant_species(&[0.1, 0.3, 0.3]), 1);
        let mus = [0.2, 0.5, 0.1];
        let scaled: Vec<f64> = mus.iter().map(|m| m * 7.5).collect();
        assert_eq!(dominant_species(&mus), dominant_species(&scaled));
    }

    #[test]
    fn constant_capacity_is_extremal() {
        let g = build_domain(&DomainSpec::unit_square(0.1)).unwrap();
        let ms = vec![make_logistic(2.0, 2.0).unwrap()];
        let w = build_state_w(&g, &ms).unwrap();
        let rep = check_2kvar(&g, &ms, &w, 1e-8);
        assert!(rep.applicable);
        assert!(rep.worst.abs() <= 1e-8, "{}", rep.worst);
        assert!(rep.interior_ok);
        assert_eq!(rep.species[0].interior_cells, g.len());
    }

    #[test]
    fn w_on_dumbbell_violates_near_core_edge() {
        let (g, ms) = dumbbell();
        let w = build_state_w(&g, &ms).unwrap();
        let rep = check_2kvar(&g, &ms, &w, 1e-3);
        let v = rep.species[0].lower;
        assert!(v.value > 1e-3);
        // located where core 1 meets the channel
        assert!((v.x - 1.0).abs() <= v.scale + g.h(), "{v:?}");
        assert!(!rep.within_tol);
    }

    #[test]
    fn taylor_at_w_is_zero() {
        let (g, ms) = dumbbell();
        let w = build_state_w(&g, &ms).unwrap();
        let rep = taylor_remainder_check(&g, &ms, &w, 0.05).unwrap();
        assert_eq!(rep.remainder, 0.0);
        assert_eq!(rep.margin, 0.0);
    }

    #[test]
    fn taylor_small_uniform_perturbation() {
        let (g, ms) = dumbbell();
        let mut s = build_state_w(&g, &ms).unwrap();
        for c in (0..g.len()).filter(|&c| g.label(c) == Label::Core(0)) {
            s.field_mut(0)[c] -= 1e-3;
        }
        let rep = taylor_remainder_check(&g, &ms, &s, 0.05).unwrap();
        // F''' = −2 for logistic(2,2): remainder = −(−1e-3)³/3 · |Ω^1|
        assert_abs_diff_eq!(rep.remainder, 1e-9 / 3.0 * g.core_measure(0), epsilon = 1e-15);
        assert_abs_diff_eq!(rep.bound, 0.125 * 1e-6 * g.core_measure(0), epsilon = 1e-15);
        assert!(rep.margin > 0.0 && rep.within_radius);
    }

    #[test]
    fn segregate_keeps_largest() {
        let s = State::from_fields(vec![vec![0.5, 0.1, 0.3], vec![0.2, 0.4, 0.3]]);
        let v = segregate(&s);
        assert_eq!(v.field(0), &[0.5, 0.0, 0.3]);
        assert_eq!(v.field(1), &[0.0, 0.4, 0.0]);
    }

    #[test]
    fn skipped_sections_serialize_as_marker() {
        let s: Section<f64> = Section::skipped();
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"skipped\"");
        assert_eq!(serde_json::to_string(&Section(Some(1.5))).unwrap(), "1.5");
    }
}

//! Fields on a [`DomainGrid`], the Neumann Laplacian and the discrete
//! energies.
//!
//! The gradient part of every energy is `½ Σ_faces (u_a − u_b)²`, each
//! interior face counted once. Its exact derivative with respect to the
//! value in cell `c`, divided by the cell area, is the 5-point Neumann
//! operator `−Δu`. Missing neighbors simply contribute no face, which is the
//! homogeneous Neumann condition.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{DomainGrid, Label, NONE};
use crate::par::{self, Exec};
use crate::reaction::ReactionModel;

/// Per-cell scalar values on the mask-true cells of a grid.
pub type Field = Vec<f64>;

/// Slack for the `0 ≤ u_i ≤ A_i` precondition of the untruncated energy.
pub const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DiscretizationError {
    #[error("{models} species models for {cores} cores")]
    ModelCountMismatch { models: usize, cores: usize },
    #[error("state has {k} components of {n} cells, grid expects {expect_k} x {expect_n}")]
    ShapeMismatch { k: usize, n: usize, expect_k: usize, expect_n: usize },
    #[error("species {} out of [0, {bound}] at cell {cell} (value {value})", species + 1)]
    OutOfRange { species: usize, cell: usize, value: f64, bound: f64 },
}

/// `k` fields on a common grid, stored component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    k: usize,
    n: usize,
    data: Vec<f64>,
}

impl State {
    pub fn zeros(k: usize, n: usize) -> Self {
        State { k, n, data: vec![0.0; k * n] }
    }

    /// Panics if the fields have different lengths.
    pub fn from_fields(fields: Vec<Field>) -> Self {
        let k = fields.len();
        let n = fields.first().map_or(0, Vec::len);
        assert!(fields.iter().all(|f| f.len() == n), "fields must share one grid");
        State { k, n, data: fields.concat() }
    }

    pub fn num_species(&self) -> usize {
        self.k
    }

    pub fn num_cells(&self) -> usize {
        self.n
    }

    pub fn field(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.n + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fields(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n.max(1)).take(self.k)
    }

    /// Clamps component `i` into `[0, bounds[i]]` cellwise.
    pub fn clamp(&mut self, bounds: &[f64]) {
        for (i, &b) in bounds.iter().enumerate() {
            for v in self.field_mut(i) {
                *v = v.clamp(0.0, b);
            }
        }
    }

    pub(crate) fn check_shape(&self, grid: &DomainGrid) -> Result<(), DiscretizationError> {
        if self.k != grid.num_cores() || self.n != grid.len() {
            return Err(DiscretizationError::ShapeMismatch {
                k: self.k,
                n: self.n,
                expect_k: grid.num_cores(),
                expect_n: grid.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_models(grid: &DomainGrid, models: &[ReactionModel]) -> Result<(), DiscretizationError> {
    if models.len() != grid.num_cores() {
        return Err(DiscretizationError::ModelCountMismatch { models: models.len(), cores: grid.num_cores() });
    }
    Ok(())
}

/// Energy split into per-species internal energies and the coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    /// `½‖u_i‖²_{H¹} − ∫F̃_i(u_i)` per species.
    pub internal: Vec<f64>,
    /// `κ Σ_{i≠j} ∫G_i(u_i)G_j(u_j)` over ordered pairs.
    pub coupling: f64,
    /// `Σ internal + coupling`.
    pub total: f64,
    /// Untruncated free energy; `None` unless `0 ≤ u_i ≤ A_i` everywhere.
    pub free_energy: Option<f64>,
}

/// `w_i = A_i χ_{Ω^i}`.
pub fn build_state_w(grid: &DomainGrid, models: &[ReactionModel]) -> Result<State, DiscretizationError> {
    check_models(grid, models)?;
    let mut s = State::zeros(models.len(), grid.len());
    for (i, m) in models.iter().enumerate() {
        let a = m.capacity();
        for (c, v) in s.field_mut(i).iter_mut().enumerate() {
            if grid.label(c) == Label::Core(i) {
                *v = a;
            }
        }
    }
    Ok(s)
}

#[inline]
fn face_sum(grid: &DomainGrid, u: &[f64], c: usize) -> f64 {
    let uc = u[c];
    grid.neighbors(c).iter().filter(|&&n| n != NONE).map(|&n| u[n as usize] - uc).sum()
}

/// 5-point Neumann Laplacian.
pub fn neumann_laplacian(grid: &DomainGrid, field: &[f64]) -> Field {
    neumann_laplacian_with(Exec::default(), grid, field)
}

pub fn neumann_laplacian_with(exec: Exec, grid: &DomainGrid, field: &[f64]) -> Field {
    let inv_h2 = 1.0 / grid.cell_area();
    let mut out = vec![0.0; field.len()];
    par::fill(exec, &mut out, |c| face_sum(grid, field, c) * inv_h2);
    out
}

/// Half the squared jumps across the east and north faces of `c`.
#[inline]
fn forward_faces(grid: &DomainGrid, u: &[f64], c: usize) -> f64 {
    let nb = grid.neighbors(c);
    let mut e = 0.0;
    for &n in [nb[0], nb[2]].iter().filter(|&&n| n != NONE) {
        let d = u[n as usize] - u[c];
        e += d * d;
    }
    0.5 * e
}

#[inline]
fn pair_coupling(models: &[ReactionModel], state: &State, c: usize) -> f64 {
    let k = models.len();
    let mut acc = 0.0;
    for i in 0..k {
        let gi = models[i].penalty(state.get(i, c));
        if gi == 0.0 {
            continue;
        }
        for j in i + 1..k {
            acc += gi * models[j].penalty(state.get(j, c));
        }
    }
    2.0 * acc
}

/// Total penalized energy `I_{ε,κ}`, without the breakdown.
pub fn energy_total_with(exec: Exec, grid: &DomainGrid, models: &[ReactionModel], state: &State, kappa: f64) -> f64 {
    let h2 = grid.cell_area();
    par::sum(exec, grid.len(), |c| {
        let mut e = 0.0;
        for (i, m) in models.iter().enumerate() {
            let u = state.field(i);
            let v = u[c];
            e += forward_faces(grid, u, c) + h2 * (0.5 * v * v - m.truncated_potential(v));
        }
        if kappa != 0.0 {
            e += h2 * kappa * pair_coupling(models, state, c);
        }
        e
    })
}

/// `I_{ε,κ}` by midpoint quadrature, with its breakdown.
pub fn energy_i(grid: &DomainGrid, models: &[ReactionModel], state: &State, kappa: f64) -> EnergyBreakdown {
    energy_i_with(Exec::default(), grid, models, state, kappa)
}

pub fn energy_i_with(
    exec: Exec,
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
    kappa: f64,
) -> EnergyBreakdown {
    let h2 = grid.cell_area();
    let internal: Vec<f64> = models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let u = state.field(i);
            par::sum(exec, grid.len(), |c| {
                forward_faces(grid, u, c) + h2 * (0.5 * u[c] * u[c] - m.truncated_potential(u[c]))
            })
        })
        .collect();
    let coupling = kappa * h2 * par::sum(exec, grid.len(), |c| pair_coupling(models, state, c));
    let total = internal.iter().sum::<f64>() + coupling;
    let free_energy = energy_j_with(exec, grid, models, state).ok();
    EnergyBreakdown { internal, coupling, total, free_energy }
}

fn check_range(models: &[ReactionModel], state: &State) -> Result<(), DiscretizationError> {
    let mut worst: Option<(f64, DiscretizationError)> = None;
    for (species, m) in models.iter().enumerate() {
        let bound = m.capacity();
        for (cell, &value) in state.field(species).iter().enumerate() {
            let excess = (-value).max(value - bound);
            if excess > RANGE_SLACK && worst.as_ref().is_none_or(|(w, _)| excess > *w) {
                worst = Some((excess, DiscretizationError::OutOfRange { species, cell, value, bound }));
            }
        }
    }
    worst.map_or(Ok(()), |(_, e)| Err(e))
}

/// Untruncated free energy `J`; requires `0 ≤ u_i ≤ A_i` (to within
/// [`RANGE_SLACK`]) and reports the worst offending cell otherwise.
pub fn energy_j(grid: &DomainGrid, models: &[ReactionModel], state: &State) -> Result<f64, DiscretizationError> {
    energy_j_with(Exec::default(), grid, models, state)
}

pub fn energy_j_with(
    exec: Exec,
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
) -> Result<f64, DiscretizationError> {
    check_range(models, state)?;
    let h2 = grid.cell_area();
    Ok(models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let u = state.field(i);
            par::sum(exec, grid.len(), |c| forward_faces(grid, u, c) + h2 * (0.5 * u[c] * u[c] - m.potential(u[c])))
        })
        .sum())
}

/// Untruncated free energy split into the part living on the cores and the
/// part attributed to the channels. A face belongs to the channel part when
/// either of its cells is a channel cell.
pub fn free_energy_split(grid: &DomainGrid, models: &[ReactionModel], state: &State) -> (f64, f64) {
    let h2 = grid.cell_area();
    let mut core = 0.0;
    let mut channel = 0.0;
    for (i, m) in models.iter().enumerate() {
        let u = state.field(i);
        for c in 0..grid.len() {
            let cell = h2 * (0.5 * u[c] * u[c] - m.potential(u[c]));
            if grid.is_core(c) {
                core += cell;
            } else {
                channel += cell;
            }
            let nb = grid.neighbors(c);
            for &n in [nb[0], nb[2]].iter().filter(|&&n| n != NONE) {
                let d = u[n as usize] - u[c];
                if grid.is_core(c) && grid.is_core(n as usize) {
                    core += 0.5 * d * d;
                } else {
                    channel += 0.5 * d * d;
                }
            }
        }
    }
    (core, channel)
}

/// Gradient of `I_{ε,κ}` with respect to cell values, divided by the cell
/// area:
/// `−Δu_i + u_i − f̃_i(u_i) + 2κ g_i(u_i) Σ_{j≠i} G_j(u_j)`.
///
/// The factor 2 comes from counting ordered pairs in the coupling term.
pub fn grad_i(grid: &DomainGrid, models: &[ReactionModel], state: &State, kappa: f64) -> State {
    let mut out = State::zeros(state.k, state.n);
    grad_i_into(Exec::default(), grid, models, state, kappa, &mut out);
    out
}

pub fn grad_i_into(
    exec: Exec,
    grid: &DomainGrid,
    models: &[ReactionModel],
    state: &State,
    kappa: f64,
    out: &mut State,
) {
    let n = state.n;
    let inv_h2 = 1.0 / grid.cell_area();
    par::fill(exec, &mut out.data, |idx| {
        let (i, c) = (idx / n, idx % n);
        let m = &models[i];
        let u = state.field(i);
        let v = u[c];
        let mut r = -face_sum(grid, u, c) * inv_h2 + v - m.truncated_rate(v);
        if kappa != 0.0 {
            let others: f64 =
                models.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, mj)| mj.penalty(state.get(j, c))).sum();
            r += 2.0 * kappa * m.penalty_slope(v) * others;
        }
        r
    });
}

/// `‖U − R‖_{(H¹(Ω_0))^k}`: cells and faces outside the cores are ignored,
/// including faces between a core and a channel cell.
pub fn h1_core_distance(grid: &DomainGrid, state: &State, reference: &State) -> f64 {
    h1_core_distance_with(Exec::default(), grid, state, reference)
}

pub fn h1_core_distance_with(exec: Exec, grid: &DomainGrid, state: &State, reference: &State) -> f64 {
    assert_eq!((state.k, state.n), (reference.k, reference.n), "states must share one grid");
    let h2 = grid.cell_area();
    let sq: f64 = (0..state.k)
        .map(|i| {
            let (u, r) = (state.field(i), reference.field(i));
            par::sum(exec, grid.len(), |c| {
                if !grid.is_core(c) {
                    return 0.0;
                }
                let dc = u[c] - r[c];
                let nb = grid.neighbors(c);
                let mut e = h2 * dc * dc;
                for &n in [nb[0], nb[2]].iter().filter(|&&n| n != NONE && grid.is_core(n as usize)) {
                    let n = n as usize;
                    let d = (u[n] - r[n]) - dc;
                    e += d * d;
                }
                e
            })
        })
        .sum();
    sq.sqrt()
}

/// Discrete `L²(Ω_ε)` norm of a flat state vector.
pub fn l2_norm(grid: &DomainGrid, values: &[f64]) -> f64 {
    (grid.cell_area() * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `∫ u_i` per species.
pub fn masses(grid: &DomainGrid, state: &State) -> Vec<f64> {
    state.fields().map(|u| grid.cell_area() * u.iter().sum::<f64>()).collect()
}

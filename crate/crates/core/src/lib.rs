//! Strongly competing species on dumbbell-like domains.
//!
//! The crate builds masked grids for domains made of separated cores joined
//! by thin channels ([`geometry`]), minimizes the penalized energy of `k`
//! competing densities under Neumann conditions ([`discretization`],
//! [`solver`]), follows the minimizer as the competition rate grows, and
//! audits the computed states against the a-priori bounds, energy estimates
//! and extremality conditions they must satisfy ([`analysis`]). The [`run`]
//! module ties everything to a TOML configuration and CSV/JSON artifacts.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod discretization;
pub mod fmt;
pub mod geometry;
pub mod par;
pub mod reaction;
pub mod run;
pub mod solver;

pub use discretization::{EnergyBreakdown, Field, State};
pub use geometry::{build_domain, validate_spec, DomainGrid, DomainSpec, Label, Rect, Region};
pub use par::Exec;
pub use reaction::{check_assumptions, make_logistic, AssumptionReport, ReactionModel};
pub use solver::{kappa_continuation, minimize, ContinuationResult, SolveOptions, SolveResult};

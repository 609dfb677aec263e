//! Species growth laws, their derived constants and the truncated
//! potentials entering the penalized energy.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

/// Growth law `f = F'` of one species.
///
/// Implementations must satisfy `F(0) = f(0) = 0`, admit a positive root of
/// `f(t) = t` below [`GrowthLaw::root_upper_bound`], and be C².
pub trait GrowthLaw: Send + Sync + fmt::Debug {
    /// Potential `F(t)`.
    fn potential(&self, t: f64) -> f64;
    /// Growth rate `f(t)`.
    fn rate(&self, t: f64) -> f64;
    /// `f'(t)`.
    fn rate_derivative(&self, t: f64) -> f64;
    /// Upper end of the bisection bracket for the carrying capacity.
    fn root_upper_bound(&self) -> f64;
    /// Short family tag plus parameters, for reports.
    fn describe(&self) -> String;
}

/// `f(u) = λu − |u|^{p−1}u` with `λ > 1`, `p > 1`.
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    lambda: f64,
    p: f64,
    /// `p` when it is a small integer, so powers use `powi`.
    p_int: Option<i32>,
}

impl Logistic {
    fn pow(&self, a: f64, e: f64, offset: i32) -> f64 {
        match self.p_int {
            Some(p) => a.powi(p + offset),
            None => a.powf(e),
        }
    }
}

impl GrowthLaw for Logistic {
    fn potential(&self, t: f64) -> f64 {
        let a = t.abs();
        self.lambda * t * t / 2.0 - self.pow(a, self.p + 1.0, 1) / (self.p + 1.0)
    }

    fn rate(&self, t: f64) -> f64 {
        self.lambda * t - self.pow(t.abs(), self.p - 1.0, -1) * t
    }

    fn rate_derivative(&self, t: f64) -> f64 {
        self.lambda - self.p * self.pow(t.abs(), self.p - 1.0, -1)
    }

    fn root_upper_bound(&self) -> f64 {
        10.0 * self.lambda.powf(1.0 / (self.p - 1.0))
    }

    fn describe(&self) -> String {
        format!("logistic(lambda={}, p={})", self.lambda, self.p)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReactionError {
    #[error("logistic parameter out of range: lambda={lambda} (needs > 1), p={p} (needs > 1)")]
    OutOfRange { lambda: f64, p: f64 },
    #[error("no sign change of f(t) - t on [{lo}, {hi}]")]
    NoCapacity { lo: f64, hi: f64 },
    #[error("no species given")]
    Empty,
}

/// Lower end of the capacity bracket.
const ROOT_LO: f64 = 1e-9;
const ROOT_TOL: f64 = 1e-12;

/// A growth law together with its carrying capacity `A` and energy
/// density `μ = F(A) − A²/2`.
#[derive(Debug, Clone)]
pub struct ReactionModel {
    law: Arc<dyn GrowthLaw>,
    capacity: f64,
    mu: f64,
}

/// Values of the four truncated functions at one density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncated {
    /// `F̃(t)`
    pub potential: f64,
    /// `f̃(t) = F̃'(t)`
    pub rate: f64,
    /// `G(t)`
    pub penalty: f64,
    /// `g(t) = G'(t)`
    pub penalty_slope: f64,
}

/// Logistic species model; fails unless `λ > 1` and `p > 1`.
pub fn make_logistic(lambda: f64, p: f64) -> Result<ReactionModel, ReactionError> {
    if !(lambda > 1.0 && p > 1.0 && lambda.is_finite() && p.is_finite()) {
        return Err(ReactionError::OutOfRange { lambda, p });
    }
    let p_int = (p.fract() == 0.0 && p <= 64.0).then_some(p as i32);
    ReactionModel::new(Arc::new(Logistic { lambda, p, p_int }))
}

impl ReactionModel {
    /// Derives `A` by bisection of `f(t) − t` on `(1e-9, upper)`.
    pub fn new(law: Arc<dyn GrowthLaw>) -> Result<Self, ReactionError> {
        let (mut lo, mut hi) = (ROOT_LO, law.root_upper_bound());
        let phi = |t: f64| law.rate(t) - t;
        let (flo, fhi) = (phi(lo), phi(hi));
        if !(flo > 0.0 && fhi < 0.0) {
            return Err(ReactionError::NoCapacity { lo, hi });
        }
        // Bisect down to adjacent floats; the bracket ends far below
        // ROOT_TOL and exact roots such as A = 1 come out exactly.
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        debug_assert!(hi - lo <= ROOT_TOL * hi.max(1.0));
        let capacity = if phi(hi).abs() <= phi(lo).abs() { hi } else { lo };
        let mu = law.potential(capacity) - capacity * capacity / 2.0;
        Ok(ReactionModel { law, capacity, mu })
    }

    pub fn law(&self) -> &dyn GrowthLaw {
        self.law.as_ref()
    }

    /// Carrying capacity `A`.
    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// `μ = F(A) − A²/2`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    #[inline]
    pub fn potential(&self, t: f64) -> f64 {
        self.law.potential(t)
    }

    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        self.law.rate(t)
    }

    #[inline]
    pub fn rate_derivative(&self, t: f64) -> f64 {
        self.law.rate_derivative(t)
    }

    /// `F̃`: zero for `t ≤ 0`, `F` on `[0, A]`, linear continuation above.
    #[inline]
    pub fn truncated_potential(&self, t: f64) -> f64 {
        let a = self.capacity;
        if t <= 0.0 {
            0.0
        } else if t <= a {
            self.law.potential(t)
        } else {
            a * t + self.law.potential(a) - a * a
        }
    }

    /// `f̃ = F̃'`.
    #[inline]
    pub fn truncated_rate(&self, t: f64) -> f64 {
        let a = self.capacity;
        if t <= 0.0 {
            0.0
        } else if t <= a {
            self.law.rate(t)
        } else {
            a
        }
    }

    /// `G`: `t²` on `|t| ≤ A`, `2A|t| − A²` beyond.
    #[inline]
    pub fn penalty(&self, t: f64) -> f64 {
        let a = self.capacity;
        if t.abs() <= a {
            t * t
        } else {
            2.0 * a * t.abs() - a * a
        }
    }

    /// `g = G'`.
    #[inline]
    pub fn penalty_slope(&self, t: f64) -> f64 {
        let a = self.capacity;
        if t.abs() <= a {
            2.0 * t
        } else {
            2.0 * a * t.signum()
        }
    }

    pub fn eval_truncated(&self, t: f64) -> Truncated {
        Truncated {
            potential: self.truncated_potential(t),
            rate: self.truncated_rate(t),
            penalty: self.penalty(t),
            penalty_slope: self.penalty_slope(t),
        }
    }
}

/// Per-species outcome of the growth-law checks.
#[derive(Debug, Clone, Serialize)]
pub struct SpeciesAssumptions {
    pub law: String,
    pub capacity: f64,
    pub mu: f64,
    pub rate_at_zero: f64,
    pub rate_at_capacity: f64,
    /// `F(0) = f(0) = 0`.
    pub f1: bool,
    /// `f(A) = A`, `μ > 0` and `F(t) − t²/2` peaks at `A`.
    pub f2: bool,
    /// `f'(A) < 1`.
    pub f3: bool,
}

/// Assumption flags and the constants derived from them.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub species: Vec<SpeciesAssumptions>,
    /// `ν = min_i min{1, 1 − f'_i(A_i)}`
    pub nu: f64,
    /// `η = min{ν/4, 1/8}`
    pub eta: f64,
    /// `max_{i≠j} 2 f'_i(0) / A_j²` (the `i = j` term when `k = 1`).
    pub kappa_threshold: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.species.iter().all(|s| s.f1 && s.f2 && s.f3)
    }
}

const F2_SAMPLES: usize = 10_000;

/// Evaluates the growth-law conditions directly and derives `ν`, `η` and the competition
/// threshold.
pub fn check_assumptions(models: &[ReactionModel]) -> Result<AssumptionReport, ReactionError> {
    if models.is_empty() {
        return Err(ReactionError::Empty);
    }
    let species: Vec<SpeciesAssumptions> = models
        .iter()
        .map(|m| {
            let a = m.capacity();
            let scale = a.max(1.0);
            let f1 = m.potential(0.0).abs() <= 1e-12 && m.rate(0.0).abs() <= 1e-12;
            let sampled_max = (0..=F2_SAMPLES)
                .map(|s| {
                    let t = 3.0 * a * s as f64 / F2_SAMPLES as f64;
                    m.potential(t) - t * t / 2.0
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let f2 = (m.rate(a) - a).abs() <= 1e-9 * scale
                && sampled_max <= m.mu() + 1e-9 * m.mu().abs().max(1.0)
                && m.mu() > 0.0;
            let rate_at_capacity = m.rate_derivative(a);
            SpeciesAssumptions {
                law: m.law().describe(),
                capacity: a,
                mu: m.mu(),
                rate_at_zero: m.rate_derivative(0.0),
                rate_at_capacity,
                f1,
                f2,
                f3: rate_at_capacity < 1.0,
            }
        })
        .collect();
    let nu = species.iter().map(|s| (1.0f64).min(1.0 - s.rate_at_capacity)).fold(f64::INFINITY, f64::min);
    let eta = (nu / 4.0).min(1.0 / 8.0);
    let k = species.len();
    let mut kappa_threshold = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            if i != j || k == 1 {
                let a = species[j].capacity;
                kappa_threshold = kappa_threshold.max(2.0 * species[i].rate_at_zero / (a * a));
            }
        }
    }
    Ok(AssumptionReport { species, nu, eta, kappa_threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent capacity oracle: plain bisection on `λt − t^p − t`.
    fn capacity_oracle(lambda: f64, p: f64) -> f64 {
        let g = |t: f64| lambda * t - t.powf(p) - t;
        let (mut lo, mut hi) = (1e-9, 10.0 * lambda.powf(1.0 / (p - 1.0)));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        lo
    }

    #[test]
    fn logistic_constants() {
        // (λ, p, A, μ); A from the bisection oracle, μ = F(A) − A²/2.
        let cases = [(2.0, 2.0, 1.0, 1.0 / 6.0), (3.0, 3.0, 2.0f64.sqrt(), 1.0), (1.5, 2.0, 0.5, 0.0208333333333)];
        for (lambda, p, a, mu) in cases {
            let m = make_logistic(lambda, p).unwrap();
            assert_abs_diff_eq!(capacity_oracle(lambda, p), a, epsilon = 1e-10);
            assert_abs_diff_eq!(m.capacity(), a, epsilon = 1e-10);
            assert_abs_diff_eq!(m.mu(), mu, epsilon = 1e-10);
        }
    }

    #[test]
    fn out_of_range_parameters() {
        assert!(matches!(make_logistic(1.0, 2.0), Err(ReactionError::OutOfRange { .. })));
        assert!(matches!(make_logistic(2.0, 1.0), Err(ReactionError::OutOfRange { .. })));
        assert!(matches!(make_logistic(f64::NAN, 2.0), Err(ReactionError::OutOfRange { .. })));
    }

    #[test]
    fn non_integer_exponent() {
        let m = make_logistic(2.5, 2.5).unwrap();
        assert_abs_diff_eq!(m.capacity(), 1.5f64.powf(1.0 / 1.5), epsilon = 1e-10);
        assert_abs_diff_eq!(m.rate(m.capacity()), m.capacity(), epsilon = 1e-10);
    }

    #[test]
    fn assumptions_single() {
        let r = check_assumptions(&[make_logistic(2.0, 2.0).unwrap()]).unwrap();
        assert!(r.all_pass());
        assert_abs_diff_eq!(r.species[0].rate_at_capacity, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.nu, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.eta, 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(r.kappa_threshold, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn assumptions_pair() {
        let ms = [make_logistic(2.0, 2.0).unwrap(), make_logistic(3.0, 3.0).unwrap()];
        let r = check_assumptions(&ms).unwrap();
        assert!(r.all_pass());
        assert_abs_diff_eq!(r.nu, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.kappa_threshold, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn assumptions_weak_growth() {
        let r = check_assumptions(&[make_logistic(1.5, 2.0).unwrap()]).unwrap();
        assert!(r.species[0].f3);
        assert_abs_diff_eq!(r.species[0].rate_at_capacity, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.nu, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.eta, 0.125, epsilon = 1e-12);
    }

    #[test]
    fn empty_model_list() {
        assert_eq!(check_assumptions(&[]).unwrap_err(), ReactionError::Empty);
    }

    #[test]
    fn truncations_at_printed_points() {
        let m = make_logistic(2.0, 2.0).unwrap();
        let t = m.eval_truncated(-0.5);
        assert_eq!((t.potential, t.rate), (0.0, 0.0));
        assert_abs_diff_eq!(t.penalty, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(t.penalty_slope, -1.0, epsilon = 1e-12);

        let t = m.eval_truncated(2.0);
        assert_abs_diff_eq!(t.potential, 5.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.rate, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.penalty, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(t.penalty_slope, 2.0, epsilon = 1e-9);

        let t = m.eval_truncated(0.5);
        assert_abs_diff_eq!(t.potential, 0.2083333333, epsilon = 1e-9);
        assert_abs_diff_eq!(t.rate, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(t.penalty, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(t.penalty_slope, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn continuity_at_breakpoints() {
        for (l, p) in [(2.0, 2.0), (3.0, 3.0), (1.5, 2.0), (4.0, 1.5)] {
            let m = make_logistic(l, p).unwrap();
            let a = m.capacity();
            let d = 1e-8;
            let tol = 1e-6 * a;
            for s in [a - d, a + d] {
                assert!((m.truncated_potential(s) - m.truncated_potential(a)).abs() <= tol);
                assert!((m.truncated_rate(s) - m.truncated_rate(a)).abs() <= tol);
            }
            for b in [a, -a] {
                for s in [b - d, b + d] {
                    assert!((m.penalty(s) - m.penalty(b)).abs() <= tol);
                    assert!((m.penalty_slope(s) - m.penalty_slope(b)).abs() <= tol);
                }
            }
            assert!(m.truncated_rate(d).abs() <= tol && m.truncated_rate(-d) == 0.0);
        }
    }
}

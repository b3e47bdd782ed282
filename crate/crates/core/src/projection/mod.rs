//! The per-state regularized greedy step.
//!
//! For a row of action values `Q` and weight `λ > 0`, [`project`] returns the
//! unique maximizer of `Σ_a π(a) [Q(a) + λ φ(π(a))]` over the simplex. The
//! optimum has the form `π(a) = max{g_φ((μ − Q(a)) / λ), 0}` where the scalar
//! multiplier `μ` is the root of `h(μ) = Σ_a π(a) = 1`; `h` is strictly
//! decreasing on the bracket used below, so the root is found by a bracketed
//! Newton iteration.

mod oracle;

use thiserror::Error;

use crate::regularizer::Regularizer;
use crate::root::{self, Stop};

pub use oracle::{brute_force_project, OracleError};

/// Probabilities at or below this are treated as exact zeros, for
/// regularizers that can produce zeros at all.
pub const SUPPORT_EPS: f64 = 1e-9;

/// Relative tolerance for the agreement of the two value expressions.
pub const VALUE_FORM_TOL: f64 = 1e-9;

const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("Q row is empty")]
    Empty,
    #[error("Q row contains a non-finite entry at action {0}")]
    NonFinite(usize),
    #[error("lambda must be finite and > 0, got {0}")]
    BadLambda(f64),
    #[error("could not bracket the normalization multiplier")]
    Bracket,
    #[error("value forms disagree: {direct} (direct) vs {multiplier} (via multiplier)")]
    Inconsistent { direct: f64, multiplier: f64 },
}

pub type Result<T> = std::result::Result<T, ProjectionError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub pi: Vec<f64>,
    pub mu: f64,
    /// `Σ_a π(a)[Q(a) + λφ(π(a))]` at the optimum.
    pub value: f64,
    pub support_size: usize,
}

/// Maximizer of the regularized objective over the simplex.
pub fn project(reg: &Regularizer, q: &[f64], lambda: f64) -> Result<ProjectionResult> {
    project_from(reg, q, lambda, None)
}

/// [`project`] with an optional starting guess for `μ`, typically the
/// multiplier of the same state from a previous sweep. The result does not
/// depend on the hint beyond rounding.
pub fn project_from(reg: &Regularizer, q: &[f64], lambda: f64, mu_hint: Option<f64>) -> Result<ProjectionResult> {
    let mut pi = vec![0.0; q.len()];
    let mu = project_into(reg, q, lambda, mu_hint, &mut pi)?;
    let value = direct_value(reg, q, lambda, &pi);
    let support_size = pi.iter().filter(|&&p| p > 0.0).count();
    Ok(ProjectionResult {
        pi,
        mu,
        value,
        support_size,
    })
}

/// Allocation-free core of [`project`]: writes the policy row into `pi` and
/// returns `μ`.
pub fn project_into(reg: &Regularizer, q: &[f64], lambda: f64, mu_hint: Option<f64>, pi: &mut [f64]) -> Result<f64> {
    pi.iter_mut().for_each(|p| *p = f64::NAN);
    project_core(reg, q, lambda, mu_hint, pi)
}

/// [`project_into`] that reads the previous contents of `pi` (typically the
/// same state's row from the last sweep) as starting points for the inner
/// inversions. Entries outside `(0, 1)` are ignored.
pub fn project_warm(reg: &Regularizer, q: &[f64], lambda: f64, mu_hint: Option<f64>, pi: &mut [f64]) -> Result<f64> {
    project_core(reg, q, lambda, mu_hint, pi)
}

fn project_core(reg: &Regularizer, q: &[f64], lambda: f64, mu_hint: Option<f64>, pi: &mut [f64]) -> Result<f64> {
    check_inputs(q, lambda)?;
    assert_eq!(q.len(), pi.len(), "output row has the wrong length");
    if q.len() == 1 {
        pi[0] = 1.0;
        return Ok(q[0] + lambda * reg.f_prime_boundary().at_one);
    }
    let (lo, hi) = bracket(reg, q, lambda)?;

    // `pi` doubles as the per-action starting points of the inner inversions
    let h = |mu: f64| {
        let mut sum = 0.0;
        let mut slope = 0.0;
        for (&qa, guess) in q.iter().zip(pi.iter_mut()) {
            let (p, dp) = reg.g_and_slope((mu - qa) / lambda, *guess);
            if p > 0.0 && p < 1.0 {
                *guess = p;
            }
            sum += p;
            slope += dp;
        }
        (sum, slope / lambda)
    };
    let stop = Stop {
        abs_width: 1e-15 * lambda,
        rel_width: 2e-16,
        residual: 1e-16 * q.len() as f64,
    };
    let start = mu_hint.unwrap_or(0.5 * (lo + hi));
    let mu = root::newton_decreasing_from(h, lo, hi, start, 1.0, stop);

    for (p, &qa) in pi.iter_mut().zip(q) {
        *p = reg.g_from((mu - qa) / lambda, *p);
    }
    if reg.induces_sparsity() {
        for p in pi.iter_mut() {
            if *p <= SUPPORT_EPS {
                *p = 0.0;
            }
        }
    }
    let total: f64 = pi.iter().sum();
    if total > 0.0 {
        pi.iter_mut().for_each(|p| *p /= total);
    } else {
        // the support collapsed entirely; fall back to the argmax set
        let qmax = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = q.iter().filter(|&&v| v == qmax).count() as f64;
        for (p, &qa) in pi.iter_mut().zip(q) {
            *p = if qa == qmax { 1.0 / n } else { 0.0 };
        }
    }
    Ok(mu)
}

/// `h(μ) − 1` with `h(μ) = Σ_a max{g_φ((μ − Q(a))/λ), 0}`.
pub fn normalization_residual(reg: &Regularizer, q: &[f64], lambda: f64, mu: f64) -> Result<f64> {
    check_inputs(q, lambda)?;
    Ok(q.iter().map(|&qa| reg.g((mu - qa) / lambda)).sum::<f64>() - 1.0)
}

/// The initial bracket `[lo, hi]` for `μ`, with `h(lo) ≥ 1 ≥ h(hi)`.
pub fn bracket(reg: &Regularizer, q: &[f64], lambda: f64) -> Result<(f64, f64)> {
    check_inputs(q, lambda)?;
    let qmax = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b = reg.f_prime_boundary();
    // nudged down so that rounding in (μ − Q)/λ cannot push h(lo) below 1
    let lo = qmax + lambda * b.at_one - 1e-12 * (qmax.abs() + lambda);
    // every action below 1/n at μ = max Q + λ f'(1/n), so h ≤ 1 there
    let n = q.len();
    let mut hi = if n > 1 {
        qmax + lambda * reg.fp_raw(1.0 / n as f64)
    } else {
        qmax + lambda * b.at_zero
    };
    if b.at_zero.is_finite() {
        hi = hi.min(qmax + lambda * b.at_zero);
    }
    hi += 1e-12 * (qmax.abs() + lambda);
    if hi.is_finite() && hi > lo {
        return Ok((lo, hi));
    }
    let mut width = lambda * (b.at_one.abs() + 1.0);
    for _ in 0..MAX_DOUBLINGS {
        let hi = lo + width;
        let sum: f64 = q.iter().map(|&qa| reg.g((hi - qa) / lambda)).sum();
        if sum < 1.0 {
            return Ok((lo, hi));
        }
        width *= 2.0;
    }
    Err(ProjectionError::Bracket)
}

/// The optimal value computed both ways: directly as
/// `Σ π(Q + λφ(π))`, and through the multiplier as `μ − λ Σ π² φ'(π)`.
///
/// At a kink of a `min` regularizer `φ'` is replaced by the one-sided
/// derivative implied by stationarity, clamped to the subdifferential.
pub fn value_forms(reg: &Regularizer, q: &[f64], lambda: f64, result: &ProjectionResult) -> (f64, f64) {
    (
        direct_value(reg, q, lambda, &result.pi),
        multiplier_value(reg, q, lambda, &result.pi, result.mu),
    )
}

/// The optimal value, after checking that both value expressions agree to
/// [`VALUE_FORM_TOL`] relative to the magnitude of the value.
pub fn regularized_value(reg: &Regularizer, q: &[f64], lambda: f64, result: &ProjectionResult) -> Result<f64> {
    let (direct, multiplier) = value_forms(reg, q, lambda, result);
    if (direct - multiplier).abs() > VALUE_FORM_TOL * (1.0 + direct.abs()) {
        return Err(ProjectionError::Inconsistent { direct, multiplier });
    }
    Ok(direct)
}

/// Largest violation of the optimality conditions.
pub fn kkt_residual(reg: &Regularizer, q: &[f64], lambda: f64, result: &ProjectionResult) -> f64 {
    let at_zero = reg.f_prime_boundary().at_zero;
    q.iter()
        .zip(&result.pi)
        .map(|(&qa, &p)| {
            if p > 0.0 {
                let (lo, hi) = reg.f_prime_interval(p.min(1.0));
                let target = (result.mu - qa) / lambda;
                lambda * (lo - target).max(target - hi).max(0.0)
            } else if at_zero.is_finite() {
                (qa - (result.mu - lambda * at_zero)).max(0.0)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn direct_value(reg: &Regularizer, q: &[f64], lambda: f64, pi: &[f64]) -> f64 {
    q.iter()
        .zip(pi)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&qa, &p)| p * (qa + lambda * reg.phi_raw(p.min(1.0))))
        .sum()
}

pub(crate) fn multiplier_value(reg: &Regularizer, q: &[f64], lambda: f64, pi: &[f64], mu: f64) -> f64 {
    let mut acc = 0.0;
    for (&qa, &p) in q.iter().zip(pi) {
        if p <= 0.0 {
            continue;
        }
        let x = p.min(1.0);
        let (lo, hi) = reg.phi_prime_interval(x);
        let d = if lo == hi {
            lo
        } else {
            // φ' = (f' − φ)/x with f' fixed by stationarity
            let implied = ((mu - qa) / lambda - reg.phi_raw(x)) / x;
            implied.clamp(lo, hi)
        };
        acc += p * p * d;
    }
    mu - lambda * acc
}

fn check_inputs(q: &[f64], lambda: f64) -> Result<()> {
    if q.is_empty() {
        return Err(ProjectionError::Empty);
    }
    if let Some(i) = q.iter().position(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite(i));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ProjectionError::BadLambda(lambda));
    }
    Ok(())
}

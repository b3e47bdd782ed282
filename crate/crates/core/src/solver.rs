//! The regularized Bellman operator and the fixed-point solvers built on it.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{evaluate_policy_exact, q_from_v_into, MdpError, Policy, QFn, TabularMdp, ValueFn};
use crate::projection::{self, direct_value, multiplier_value, ProjectionError};
use crate::regularizer::Regularizer;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_VI_MAX_ITER: usize = 100_000;
pub const DEFAULT_RPI_MAX_ITER: usize = 500;

/// Relative size of a Q decrease between policy-iteration steps that is
/// treated as a bug rather than rounding.
pub const MONOTONICITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    MaxIter { iterations: usize, residual: f64 },
    #[error("Q decreased by {decrease:e} at policy-iteration step {iteration}")]
    Monotonicity { iteration: usize, decrease: f64 },
    #[error("lambda must be finite and {0}, got {1}")]
    BadLambda(&'static str, f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub v_star: ValueFn,
    pub q_star: QFn,
    pub policy: Policy,
    pub mu: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm of the last update.
    pub final_residual: f64,
    /// Sup-norm of every update, in order.
    pub residual_history: Vec<f64>,
    /// Smallest entry of `Q_{i+1} − Q_i` over all policy-iteration steps.
    pub min_q_improvement: Option<f64>,
    /// Largest disagreement between the direct and the multiplier form of the
    /// state value over every projection the solver performed.
    pub value_form_gap: f64,
}

/// Result of one application of the regularized Bellman operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Greedy {
    pub values: ValueFn,
    pub q: QFn,
    pub policy: Policy,
    pub mu: Vec<f64>,
    pub value_form_gap: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(SolverError::BadLambda(">= 0", lambda))
    }
}

/// Multipliers and policy of a previous greedy step, used to start the
/// per-state root searches of the next one.
#[derive(Debug, Clone, Copy)]
pub struct WarmStart<'a> {
    pub mu: &'a [f64],
    pub policy: &'a Policy,
}

/// Per-state maximization on a fixed Q table.
///
/// For `λ > 0` each row is projected; for `λ = 0` the row maximum is taken and
/// ties go to the lowest action index. `warm` only affects the starting
/// points of the root searches.
pub fn greedy_from_q(reg: &Regularizer, lambda: f64, q: &QFn, warm: Option<WarmStart<'_>>) -> Result<Greedy> {
    check_lambda(lambda)?;
    let (n_s, n_a) = (q.n_states(), q.n_actions());
    let mut values = vec![0.0; n_s];
    let mut probs = match warm {
        Some(w) if lambda > 0.0 => w.policy.as_slice().to_vec(),
        _ => vec![0.0; n_s * n_a],
    };
    let mut mu = vec![0.0; n_s];
    let mut gap: f64 = 0.0;
    for s in 0..n_s {
        let row = q.row(s);
        let pi = &mut probs[s * n_a..(s + 1) * n_a];
        if lambda == 0.0 {
            let (best, qmax) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (a, v)| if v > acc.1 { (a, v) } else { acc });
            pi[best] = 1.0;
            values[s] = qmax;
            mu[s] = qmax;
        } else {
            mu[s] = match warm {
                Some(w) => projection::project_warm(reg, row, lambda, Some(w.mu[s]), pi)?,
                None => projection::project_into(reg, row, lambda, None, pi)?,
            };
            values[s] = direct_value(reg, row, lambda, pi);
            let other = multiplier_value(reg, row, lambda, pi, mu[s]);
            gap = gap.max((values[s] - other).abs());
        }
    }
    Ok(Greedy {
        values,
        q: q.clone(),
        policy: Policy::new(n_s, n_a, probs)?,
        mu,
        value_form_gap: gap,
    })
}

/// `T_λ V` together with its maximizing policy.
pub fn bellman_greedy(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, v: &[f64], warm: Option<WarmStart<'_>>) -> Result<Greedy> {
    if v.len() != mdp.n_states() {
        return Err(SolverError::Shape {
            expected: mdp.n_states(),
            got: v.len(),
        });
    }
    let mut q = vec![0.0; mdp.n_states() * mdp.n_actions()];
    q_from_v_into(mdp, mdp.gamma(), v, &mut q);
    let q = QFn::new(mdp.n_states(), mdp.n_actions(), q)?;
    greedy_from_q(reg, lambda, &q, warm)
}

/// `T_λ V(s) = max_π Σ_a π(a)[Q(s,a) + λφ(π(a))]` with `Q = r + γPV`.
pub fn bellman_operator(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, v: &[f64]) -> Result<ValueFn> {
    bellman_greedy(mdp, reg, lambda, v, None).map(|g| g.values)
}

/// Value iteration from `V₀ = 0` until the sup-norm update is below `tol`.
pub fn value_iterate(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, tol: f64, max_iter: usize) -> Result<Solution> {
    value_iterate_from(mdp, reg, lambda, &vec![0.0; mdp.n_states()], tol, max_iter)
}

/// Value iteration from a given starting function.
pub fn value_iterate_from(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    v0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Solution> {
    vi_core(mdp, reg, lambda, v0, tol, max_iter, 0)
}

/// Value iteration that keeps iterating until at least `min_iter` updates
/// have been made, even when `tol` is reached earlier.
pub fn value_iterate_at_least(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    min_iter: usize,
) -> Result<Solution> {
    vi_core(mdp, reg, lambda, &vec![0.0; mdp.n_states()], tol, max_iter, min_iter)
}

fn vi_core(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    v0: &[f64],
    tol: f64,
    max_iter: usize,
    min_iter: usize,
) -> Result<Solution> {
    check_lambda(lambda)?;
    if !(tol > 0.0) {
        return Err(SolverError::Tolerance(tol));
    }
    let mut v = v0.to_vec();
    let mut history = Vec::new();
    let mut gap: f64 = 0.0;
    let mut last = bellman_greedy(mdp, reg, lambda, &v, None)?;
    loop {
        let residual = sup_diff(&last.values, &v);
        history.push(residual);
        gap = gap.max(last.value_form_gap);
        v = std::mem::take(&mut last.values);
        let n = history.len();
        if residual < tol && n >= min_iter {
            break;
        }
        if n >= max_iter {
            return Err(SolverError::MaxIter {
                iterations: n,
                residual,
            });
        }
        let warm = WarmStart {
            mu: &last.mu,
            policy: &last.policy,
        };
        last = bellman_greedy(mdp, reg, lambda, &v, Some(warm))?;
    }
    // v = T^n V₀; report Q(v) and the projection of it
    let warm = WarmStart {
        mu: &last.mu,
        policy: &last.policy,
    };
    let fin = bellman_greedy(mdp, reg, lambda, &v, Some(warm))?;
    Ok(Solution {
        v_star: fin.values,
        q_star: fin.q,
        policy: fin.policy,
        mu: fin.mu,
        iterations: history.len(),
        final_residual: *history.last().unwrap_or(&0.0),
        residual_history: history,
        min_q_improvement: None,
        value_form_gap: gap.max(fin.value_form_gap),
    })
}

/// Standard value iteration with a greedy, lowest-index tie-breaking policy.
pub fn solve_unregularized(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<Solution> {
    value_iterate(mdp, &Regularizer::shannon(), 0.0, tol, max_iter)
}

/// Regularized policy iteration from the uniform policy.
///
/// Each step evaluates the current policy exactly and projects the resulting
/// Q rows. Stops once the policy moves less than `tol` or Q improves by less
/// than `tol` in sup-norm.
pub fn rpi(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, tol: f64, max_iter: usize) -> Result<Solution> {
    rpi_from(mdp, reg, lambda, Policy::uniform(mdp.n_states(), mdp.n_actions()), tol, max_iter)
}

/// Regularized policy iteration from a given policy.
pub fn rpi_from(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, start: Policy, tol: f64, max_iter: usize) -> Result<Solution> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(SolverError::BadLambda("> 0", lambda));
    }
    if !(tol > 0.0) {
        return Err(SolverError::Tolerance(tol));
    }
    let mut policy = start;
    let (_, mut q) = evaluate_policy_exact(mdp, reg, lambda, &policy)?;
    let mut prev: Option<(Vec<f64>, Policy)> = None;
    let mut history = Vec::new();
    let mut gap: f64 = 0.0;
    let mut min_improvement = f64::INFINITY;
    let mut converged = false;
    for it in 1..=max_iter {
        let warm = prev.as_ref().map(|(mu, policy)| WarmStart { mu, policy });
        let g = greedy_from_q(reg, lambda, &q, warm)?;
        gap = gap.max(g.value_form_gap);
        let (_, q_new) = evaluate_policy_exact(mdp, reg, lambda, &g.policy)?;
        let improvement = q_new
            .as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        let scale = q.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if improvement < -MONOTONICITY_TOL * (1.0 + scale) {
            return Err(SolverError::Monotonicity {
                iteration: it,
                decrease: -improvement,
            });
        }
        min_improvement = min_improvement.min(improvement);
        let policy_change = g.policy.max_abs_diff(&policy);
        let q_change = sup_diff(q_new.as_slice(), q.as_slice());
        history.push(q_change);
        prev = Some((g.mu, g.policy.clone()));
        policy = g.policy;
        q = q_new;
        if policy_change < tol || q_change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolverError::MaxIter {
            iterations: history.len(),
            residual: history.last().copied().unwrap_or(f64::INFINITY),
        });
    }
    let warm = prev.as_ref().map(|(mu, policy)| WarmStart { mu, policy });
    let fin = greedy_from_q(reg, lambda, &q, warm)?;
    Ok(Solution {
        v_star: fin.values,
        q_star: fin.q,
        policy: fin.policy,
        mu: fin.mu,
        iterations: history.len(),
        final_residual: *history.last().unwrap_or(&0.0),
        residual_history: history,
        min_q_improvement: Some(min_improvement),
        value_form_gap: gap.max(fin.value_form_gap),
    })
}

/// Starting values drawn uniformly from `[0, 10)`, reproducible from `seed`.
pub fn random_initial_values(n_states: usize, seed: u64) -> ValueFn {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..n_states).map(|_| 10.0 * rng.random::<f64>()).collect()
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

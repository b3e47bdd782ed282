//! Experiment metrics, the operator checks and the λ sweep.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{evaluate_policy_exact, Policy, TabularMdp, ValueFn};
use crate::projection::SUPPORT_EPS;
use crate::regularizer::Regularizer;
use crate::solver::{self, bellman_operator, Solution, SolverError};

/// Slack allowed on entrywise operator inequalities.
pub const OPERATOR_SLACK: f64 = 1e-10;
/// Extra slack on top of `γ‖ΔV‖` in the contraction check.
pub const CONTRACTION_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("sparsity threshold must lie in [0, 1/|A|), got {0}")]
    Epsilon(f64),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("lambda grid must be positive and increasing")]
    Grid,
    #[error("probe state {state} out of range for {n_states} states")]
    Probe { state: usize, n_states: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Fraction of `(s, a)` pairs with `π(a|s) > ε`.
pub fn sparsity(policy: &Policy, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0 && epsilon < 1.0 / policy.n_actions() as f64) {
        return Err(AnalysisError::Epsilon(epsilon));
    }
    let kept = policy.as_slice().iter().filter(|&&p| p > epsilon).count();
    Ok(kept as f64 / policy.as_slice().len() as f64)
}

/// `max_{s,a} |π(a|s) − 1/|A||`.
pub fn uniformity_gap(policy: &Policy) -> f64 {
    let u = 1.0 / policy.n_actions() as f64;
    policy.as_slice().iter().map(|p| (p - u).abs()).fold(0.0, f64::max)
}

/// Number of states whose policy row has exactly `k` entries above `ε`, for
/// `k = 0..=|A|`.
pub fn support_histogram(policy: &Policy, epsilon: f64) -> Vec<usize> {
    let mut out = vec![0; policy.n_actions() + 1];
    for row in policy.rows() {
        out[row.iter().filter(|&&p| p > epsilon).count()] += 1;
    }
    out
}

/// The largest bonus any policy can collect in one step, `λφ(1/|A|)`.
pub fn max_bonus(reg: &Regularizer, lambda: f64, n_actions: usize) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * reg.phi_raw(1.0 / n_actions as f64)
}

/// `λφ(1/|A|)/(1−γ)`.
pub fn performance_bound(reg: &Regularizer, lambda: f64, n_actions: usize, gamma: f64) -> f64 {
    max_bonus(reg, lambda, n_actions) / (1.0 - gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Largest amount by which either side is violated; zero when both hold.
    pub max_violation: f64,
    /// Largest `T_λV − TV` over states.
    pub max_gap: f64,
}

/// Checks `TV ≤ T_λV ≤ TV + λφ(1/|A|)` entrywise with [`OPERATOR_SLACK`].
pub fn check_sandwich(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, v: &[f64]) -> Result<Sandwich> {
    let plain = bellman_operator(mdp, reg, 0.0, v)?;
    let reg_v = bellman_operator(mdp, reg, lambda, v)?;
    let bonus = max_bonus(reg, lambda, mdp.n_actions());
    let mut out = Sandwich {
        lower_ok: true,
        upper_ok: true,
        max_violation: 0.0,
        max_gap: f64::NEG_INFINITY,
    };
    for (t, tl) in plain.iter().zip(&reg_v) {
        let below = t - tl;
        let above = tl - (t + bonus);
        out.lower_ok &= below <= OPERATOR_SLACK;
        out.upper_ok &= above <= OPERATOR_SLACK;
        out.max_violation = out.max_violation.max(below).max(above);
        out.max_gap = out.max_gap.max(tl - t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceCheck {
    /// `‖V_λ* − V*‖_∞`.
    pub err: f64,
    pub bound: f64,
    /// `min_s (V_λ*(s) − V*(s))`; must not be negative.
    pub min_diff: f64,
    pub pass: bool,
}

/// Compares the regularized and the plain optimum.
///
/// Both are computed by value iteration from zero with the same number of
/// sweeps, so `V_λ − V ≥ 0` holds sweep by sweep and is not blurred by the
/// two solvers stopping at different points.
pub fn check_performance_error(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, tol: f64) -> Result<PerformanceCheck> {
    let max_iter = solver::DEFAULT_VI_MAX_ITER;
    let plain = solver::solve_unregularized(mdp, tol, max_iter)?;
    let regd = solver::value_iterate_at_least(mdp, reg, lambda, tol, max_iter, plain.iterations)?;
    let plain = if regd.iterations > plain.iterations {
        solver::value_iterate_at_least(mdp, reg, 0.0, tol, max_iter, regd.iterations)?
    } else {
        plain
    };
    Ok(performance_from(mdp, reg, lambda, &regd.v_star, &plain.v_star, tol))
}

fn performance_from(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, v_reg: &[f64], v_plain: &[f64], tol: f64) -> PerformanceCheck {
    let bound = performance_bound(reg, lambda, mdp.n_actions(), mdp.gamma());
    let (mut err, mut min_diff) = (0.0f64, f64::INFINITY);
    for (a, b) in v_reg.iter().zip(v_plain) {
        err = err.max((a - b).abs());
        min_diff = min_diff.min(a - b);
    }
    PerformanceCheck {
        err,
        bound,
        min_diff,
        pass: min_diff >= 0.0 && err <= bound + 10.0 * tol,
    }
}

/// `‖V* − V^π‖_∞` where `V^π` is the plain (λ = 0) value of `solution.policy`
/// and `V*` comes from plain value iteration.
pub fn policy_suboptimality(mdp: &TabularMdp, solution: &Solution) -> Result<f64> {
    let reference = solver::solve_unregularized(mdp, 1e-10, solver::DEFAULT_VI_MAX_ITER)?;
    policy_suboptimality_against(mdp, &reference.v_star, &solution.policy)
}

/// [`policy_suboptimality`] against a precomputed `V*`.
pub fn policy_suboptimality_against(mdp: &TabularMdp, v_star: &[f64], policy: &Policy) -> Result<f64> {
    let (v_pi, _) = evaluate_policy_exact(mdp, &Regularizer::shannon(), 0.0, policy).map_err(SolverError::from)?;
    Ok(solver::sup_diff(v_star, &v_pi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Vi,
    Rpi,
}

impl SolverChoice {
    pub fn name(self) -> &'static str {
        match self {
            SolverChoice::Vi => "vi",
            SolverChoice::Rpi => "rpi",
        }
    }

    pub fn default_max_iter(self) -> usize {
        match self {
            SolverChoice::Vi => solver::DEFAULT_VI_MAX_ITER,
            SolverChoice::Rpi => solver::DEFAULT_RPI_MAX_ITER,
        }
    }

    /// Runs the solver. Policy iteration needs `λ > 0`, so `λ = 0` always
    /// goes to plain value iteration.
    pub fn solve(
        self,
        mdp: &TabularMdp,
        reg: &Regularizer,
        lambda: f64,
        tol: f64,
        max_iter: usize,
    ) -> std::result::Result<Solution, SolverError> {
        match self {
            SolverChoice::Vi => solver::value_iterate(mdp, reg, lambda, tol, max_iter),
            SolverChoice::Rpi if lambda == 0.0 => solver::solve_unregularized(mdp, tol, solver::DEFAULT_VI_MAX_ITER),
            SolverChoice::Rpi => solver::rpi(mdp, reg, lambda, tol, max_iter),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub solver: SolverChoice,
    pub tol: f64,
    pub max_iter: usize,
    /// States whose full action distribution is recorded.
    pub probe_states: Vec<usize>,
    pub epsilon: f64,
}

impl SweepOptions {
    pub fn new(solver: SolverChoice, tol: f64, probe_states: Vec<usize>) -> Self {
        SweepOptions {
            solver,
            tol,
            max_iter: solver.default_max_iter(),
            probe_states,
            epsilon: SUPPORT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "lowercase")]
pub enum SweepStatus {
    Ok,
    Failed(String),
}

/// One row of a λ sweep. Metric fields are NaN when the solve failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub delta: f64,
    pub uniformity_gap: f64,
    pub perf_err: f64,
    pub perf_bound: f64,
    pub policy_subopt: f64,
    pub iterations: usize,
    /// `support_histogram[k]` states have exactly `k` actions in support.
    pub support_histogram: Vec<usize>,
    /// Action distributions of the probe states, in the order requested.
    pub probes: Vec<Vec<f64>>,
    pub status: SweepStatus,
}

impl SweepRecord {
    fn failed(lambda: f64, bound: f64, n_probes: usize, message: String) -> Self {
        SweepRecord {
            lambda,
            delta: f64::NAN,
            uniformity_gap: f64::NAN,
            perf_err: f64::NAN,
            perf_bound: bound,
            policy_subopt: f64::NAN,
            iterations: 0,
            support_histogram: Vec::new(),
            probes: vec![Vec::new(); n_probes],
            status: SweepStatus::Failed(message),
        }
    }
}

/// Default probe states: state 0 for generic MDPs, and the cells
/// `(0,0)`, `(0,⌈N/2⌉)`, `(⌈N/2⌉,⌈N/2⌉)` for a gridworld of size `N`.
pub fn default_probes(gridworld_n: Option<usize>) -> Vec<usize> {
    match gridworld_n {
        None => vec![0],
        Some(n) => {
            let h = n.div_ceil(2) as i64;
            [(0, 0), (0, h), (h, h)]
                .iter()
                .map(|&(x, y)| crate::mdp::gridworld_index(n, x, y))
                .collect()
        }
    }
}

/// Plain optimum used as the reference by every sweep point.
pub fn sweep_reference(mdp: &TabularMdp, tol: f64) -> Result<ValueFn> {
    Ok(solver::solve_unregularized(mdp, tol, solver::DEFAULT_VI_MAX_ITER)?.v_star)
}

/// One sweep row. Solver failures end up in the status, never in `Err`.
pub fn sweep_point(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, v_star: &[f64], opts: &SweepOptions) -> SweepRecord {
    let bound = performance_bound(reg, lambda, mdp.n_actions(), mdp.gamma());
    let sol = match opts.solver.solve(mdp, reg, lambda, opts.tol, opts.max_iter) {
        Ok(s) => s,
        Err(e) => return SweepRecord::failed(lambda, bound, opts.probe_states.len(), e.to_string()),
    };
    let subopt = match policy_suboptimality_against(mdp, v_star, &sol.policy) {
        Ok(x) => x,
        Err(e) => return SweepRecord::failed(lambda, bound, opts.probe_states.len(), e.to_string()),
    };
    let delta = match sparsity(&sol.policy, opts.epsilon) {
        Ok(d) => d,
        Err(e) => return SweepRecord::failed(lambda, bound, opts.probe_states.len(), e.to_string()),
    };
    SweepRecord {
        lambda,
        delta,
        uniformity_gap: uniformity_gap(&sol.policy),
        perf_err: solver::sup_diff(&sol.v_star, v_star),
        perf_bound: bound,
        policy_subopt: subopt,
        iterations: sol.iterations,
        support_histogram: support_histogram(&sol.policy, opts.epsilon),
        probes: opts.probe_states.iter().map(|&s| sol.policy.row(s).to_vec()).collect(),
        status: SweepStatus::Ok,
    }
}

/// Checks a λ grid: non-empty, finite, positive and strictly increasing.
pub fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::Grid);
    }
    Ok(())
}

/// Solves at every λ of the grid, in order.
pub fn lambda_sweep(mdp: &TabularMdp, reg: &Regularizer, lambdas: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    check_grid(lambdas)?;
    if let Some(&state) = opts.probe_states.iter().find(|&&s| s >= mdp.n_states()) {
        return Err(AnalysisError::Probe {
            state,
            n_states: mdp.n_states(),
        });
    }
    let v_star = sweep_reference(mdp, opts.tol)?;
    Ok(lambdas.iter().map(|&l| sweep_point(mdp, reg, l, &v_star, opts)).collect())
}

/// `n` points spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

/// Outcome of one randomized operator check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    /// Largest violation seen over all trials; negative values are margins.
    pub worst_slack: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl PropertyReport {
    fn new(property: &str, trials: usize, worst_slack: f64, tolerance: f64) -> Self {
        PropertyReport {
            property: property.to_string(),
            trials,
            worst_slack,
            tolerance,
            pass: worst_slack <= tolerance,
        }
    }
}

fn random_values(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// `‖T_λV₁ − T_λV₂‖_∞ ≤ modulus·‖V₁ − V₂‖_∞` on random pairs.
///
/// `V₁` has entries in `[−10, 10]` and `V₂ = V₁ + c + w` with a common shift
/// `c ∈ [−10, 10]` and noise `w` of random width up to 10, so that some
/// pairs come close to the worst case. `modulus` is passed separately so
/// that an operator built with a corrupted discount is still held to the
/// nominal one.
pub fn contraction_battery(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    modulus: f64,
    trials: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = mdp.n_states();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v1 = random_values(&mut rng, n, -10.0, 10.0);
        let c = -10.0 + 20.0 * rng.random::<f64>();
        let width = 10.0 * rng.random::<f64>();
        let w = random_values(&mut rng, n, -width, width);
        let v2: Vec<f64> = v1.iter().zip(&w).map(|(a, b)| a + c + b).collect();
        let lhs = solver::sup_diff(&bellman_operator(mdp, reg, lambda, &v1)?, &bellman_operator(mdp, reg, lambda, &v2)?);
        worst = worst.max(lhs - modulus * solver::sup_diff(&v1, &v2));
    }
    Ok(PropertyReport::new("contraction", trials, worst, CONTRACTION_SLACK))
}

/// `V₁ ≤ V₂ ⇒ T_λV₁ ≤ T_λV₂` on random ordered pairs.
pub fn monotonicity_battery(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, trials: usize, seed: u64) -> Result<PropertyReport> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = mdp.n_states();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v1 = random_values(&mut rng, n, -10.0, 10.0);
        let bump = random_values(&mut rng, n, 0.0, 5.0);
        let v2: Vec<f64> = v1.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let t1 = bellman_operator(mdp, reg, lambda, &v1)?;
        let t2 = bellman_operator(mdp, reg, lambda, &v2)?;
        let excess = t1.iter().zip(&t2).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(excess);
    }
    Ok(PropertyReport::new("monotonicity", trials, worst, OPERATOR_SLACK))
}

/// `T_λ(V + c) = T_λV + modulus·c` on random `V` and shifts `c ∈ [−10, 10]`.
pub fn translation_battery(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    modulus: f64,
    trials: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let n = mdp.n_states();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v = random_values(&mut rng, n, -10.0, 10.0);
        let c = -10.0 + 20.0 * rng.random::<f64>();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let base = bellman_operator(mdp, reg, lambda, &v)?;
        let moved = bellman_operator(mdp, reg, lambda, &shifted)?;
        let dev = base
            .iter()
            .zip(&moved)
            .map(|(b, m)| (m - b - modulus * c).abs())
            .fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    Ok(PropertyReport::new("translation", trials, worst, OPERATOR_SLACK))
}

/// Sandwich check on random `V` with entries in `[−10, 10]`. The reported
/// slack is the worst violation of either side, zero when both always hold.
pub fn sandwich_battery(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, trials: usize, seed: u64) -> Result<PropertyReport> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = random_values(&mut rng, mdp.n_states(), -10.0, 10.0);
        let s = check_sandwich(mdp, reg, lambda, &v)?;
        worst = worst.max(s.max_violation);
    }
    Ok(PropertyReport::new("sandwich", trials, worst, OPERATOR_SLACK))
}

/// [`check_performance_error`] as a one-trial report. The slack is the
/// larger of `−min(V_λ* − V*)` and `‖V_λ* − V*‖ − bound`.
pub fn performance_report(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, tol: f64) -> Result<(PropertyReport, PerformanceCheck)> {
    let p = check_performance_error(mdp, reg, lambda, tol)?;
    let mut report = PropertyReport::new("performance_error", 1, (-p.min_diff).max(p.err - p.bound), 10.0 * tol);
    report.pass = p.pass;
    Ok((report, p))
}

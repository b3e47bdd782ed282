use nalgebra::{DMatrix, DVector};

use super::{q_from_v, regularized_reward, MdpError, Policy, QFn, Result, TabularMdp, ValueFn};
use crate::regularizer::Regularizer;

fn check_policy(mdp: &TabularMdp, policy: &Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::Shape {
            expected: format!("{}x{} policy", mdp.n_states(), mdp.n_actions()),
            got: format!("{}x{}", policy.n_states(), policy.n_actions()),
        });
    }
    Ok(())
}

/// State-to-state kernel `P^π` (row-major `S × S`) and the regularized
/// reward `r_λ^π(s) = Σ_a π(a|s)[r(s,a) + λφ(π(a|s))]`.
pub fn policy_matrices(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, policy: &Policy) -> Result<(Vec<f64>, Vec<f64>)> {
    check_policy(mdp, policy)?;
    let n = mdp.n_states();
    let mut p = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        let probs = policy.row(s);
        let out = &mut p[s * n..(s + 1) * n];
        for (a, &pa) in probs.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(mdp.transition_row(s, a)) {
                *o += pa * t;
            }
        }
        r[s] = regularized_reward(reg, lambda, mdp.reward_row(s), probs);
    }
    Ok((p, r))
}

/// Solves `(I − γP^π) V = r_λ^π` by LU decomposition and recovers `Q` from `V`.
pub fn evaluate_policy_exact(mdp: &TabularMdp, reg: &Regularizer, lambda: f64, policy: &Policy) -> Result<(ValueFn, QFn)> {
    let (p, r) = policy_matrices(mdp, reg, lambda, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let a = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - gamma * p[i * n + j]);
    let b = DVector::from_vec(r);
    let lu = a.clone().lu();
    let mut v = lu.solve(&b).ok_or(MdpError::Singular)?;
    // two rounds of iterative refinement keep successive evaluations
    // comparable at the level of rounding in V itself
    for _ in 0..2 {
        let residual = &b - &a * &v;
        if let Some(d) = lu.solve(&residual) {
            v += d;
        }
    }
    let v: Vec<f64> = v.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MdpError::Singular);
    }
    let q = q_from_v(mdp, &v)?;
    Ok((v, q))
}

/// Repeated application of `T_λ^π` from the zero function until the sup-norm
/// change drops below `tol`.
pub fn evaluate_policy_iterative(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    policy: &Policy,
    tol: f64,
    max_iter: usize,
) -> Result<ValueFn> {
    evaluate_policy_iterative_trace(mdp, reg, lambda, policy, tol, max_iter).map(|(v, _)| v)
}

/// [`evaluate_policy_iterative`] that also returns the sup-norm change of
/// every sweep.
pub fn evaluate_policy_iterative_trace(
    mdp: &TabularMdp,
    reg: &Regularizer,
    lambda: f64,
    policy: &Policy,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFn, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(MdpError::Tolerance(tol));
    }
    let (p, r) = policy_matrices(mdp, reg, lambda, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut deltas = Vec::new();
    for _ in 0..max_iter {
        for s in 0..n {
            let ev: f64 = p[s * n..(s + 1) * n].iter().zip(&v).map(|(a, b)| a * b).sum();
            next[s] = r[s] + gamma * ev;
        }
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        deltas.push(delta);
        if delta < tol {
            return Ok((v, deltas));
        }
    }
    Err(MdpError::MaxIter {
        iterations: max_iter,
        residual: deltas.last().copied().unwrap_or(f64::INFINITY),
    })
}

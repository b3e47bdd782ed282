//! Tabular MDPs, the two experiment environments, and policy evaluation.

mod env;
mod eval;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regularizer::Regularizer;

pub use env::{gridworld, gridworld_coords, gridworld_index, random_mdp, GridAction};
pub use eval::{evaluate_policy_exact, evaluate_policy_iterative, evaluate_policy_iterative_trace, policy_matrices};

/// Tolerance on transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on policy-row sums.
pub const POLICY_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid MDP: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("singular evaluation system")]
    Singular,
    #[error("no convergence after {iterations} iterations (last change {residual:e})")]
    MaxIter { iterations: usize, residual: f64 },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, MdpError>;

/// One failed structural check on an MDP.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    Discount(f64),
    TransitionRow { state: usize, action: usize, sum: f64 },
    NegativeProbability { state: usize, action: usize, next: usize, value: f64 },
    Reward { state: usize, action: usize, value: f64 },
    Initial(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(m) => write!(f, "shape: {m}"),
            Violation::Discount(g) => write!(f, "discount out of range: {g}"),
            Violation::TransitionRow { state, action, sum } => {
                write!(f, "transition row (s={state}, a={action}) sums to {sum}")
            }
            Violation::NegativeProbability {
                state,
                action,
                next,
                value,
            } => write!(f, "transition (s={state}, a={action}, s'={next}) is {value}"),
            Violation::Reward { state, action, value } => {
                write!(f, "reward (s={state}, a={action}) = {value} is not finite and non-negative")
            }
            Violation::Initial(m) => write!(f, "initial distribution: {m}"),
        }
    }
}

/// Raw MDP data as stored on disk. Arrays are row-major: `reward[s*A + a]`,
/// `transition[(s*A + a)*S + s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub reward: Vec<f64>,
    pub transition: Vec<f64>,
    pub initial: Vec<f64>,
}

impl MdpParts {
    /// Every violated invariant; empty when the data forms a valid MDP.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            out.push(Violation::Shape(format!("need at least one state and action, got {s}x{a}")));
            return out;
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(Violation::Discount(self.gamma));
        }
        if self.reward.len() != s * a {
            out.push(Violation::Shape(format!("reward has {} entries, expected {}", self.reward.len(), s * a)));
        } else {
            for (i, &r) in self.reward.iter().enumerate() {
                if !(r.is_finite() && r >= 0.0) {
                    out.push(Violation::Reward {
                        state: i / a,
                        action: i % a,
                        value: r,
                    });
                }
            }
        }
        if self.transition.len() != s * a * s {
            out.push(Violation::Shape(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                s * a * s
            )));
        } else {
            for (row, probs) in self.transition.chunks(s).enumerate() {
                let (state, action) = (row / a, row % a);
                for (next, &p) in probs.iter().enumerate() {
                    if !(p.is_finite() && p >= 0.0) {
                        out.push(Violation::NegativeProbability {
                            state,
                            action,
                            next,
                            value: p,
                        });
                    }
                }
                let sum: f64 = probs.iter().sum();
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(Violation::TransitionRow { state, action, sum });
                }
            }
        }
        if self.initial.len() != s {
            out.push(Violation::Initial(format!("{} entries, expected {s}", self.initial.len())));
        } else {
            let sum: f64 = self.initial.iter().sum();
            if self.initial.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                out.push(Violation::Initial(format!("not a distribution (sum {sum})")));
            }
        }
        out
    }
}

/// A validated finite MDP `(S, A, P, r, P₀, γ)`. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    parts: MdpParts,
    r_max: f64,
}

impl TryFrom<MdpParts> for TabularMdp {
    type Error = MdpError;

    fn try_from(parts: MdpParts) -> Result<Self> {
        let violations = parts.validate();
        if !violations.is_empty() {
            return Err(MdpError::Invalid(violations));
        }
        let r_max = parts.reward.iter().copied().fold(0.0, f64::max);
        Ok(TabularMdp { parts, r_max })
    }
}

impl TabularMdp {
    pub fn n_states(&self) -> usize {
        self.parts.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.parts.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.parts.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.parts.reward[s * self.parts.n_actions + a]
    }

    /// Rewards of state `s`, one per action.
    pub fn reward_row(&self, s: usize) -> &[f64] {
        let a = self.parts.n_actions;
        &self.parts.reward[s * a..(s + 1) * a]
    }

    /// `P(· | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let n = self.parts.n_states;
        let row = s * self.parts.n_actions + a;
        &self.parts.transition[row * n..(row + 1) * n]
    }

    pub fn initial(&self) -> &[f64] {
        &self.parts.initial
    }

    pub fn parts(&self) -> &MdpParts {
        &self.parts
    }

    pub fn into_parts(self) -> MdpParts {
        self.parts
    }

    /// Copy with the discount replaced and *not* validated. Only meant for
    /// fault-injection runs that check the audits catch a broken operator.
    pub fn with_unchecked_discount(&self, gamma: f64) -> TabularMdp {
        let mut out = self.clone();
        out.parts.gamma = gamma;
        out
    }

    fn check_values(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_states() {
            return Err(MdpError::Shape {
                expected: format!("{} values", self.n_states()),
                got: format!("{}", v.len()),
            });
        }
        Ok(())
    }
}

/// Stationary stochastic policy, one simplex row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(MdpError::Shape {
                expected: format!("{n_states}x{n_actions} probabilities"),
                got: format!("{}", probs.len()),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(MdpError::Policy(format!("state {s} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > POLICY_SUM_TOL {
                return Err(MdpError::Policy(format!("state {s} sums to {sum}")));
            }
        }
        Ok(Policy {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// The deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Policy {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// State values, one per state.
pub type ValueFn = Vec<f64>;

/// Action values, row-major `S × A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFn {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QFn {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(MdpError::Shape {
                expected: format!("{n_states}x{n_actions} values"),
                got: format!("{}", values.len()),
            });
        }
        Ok(QFn {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_actions)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`.
pub fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Result<QFn> {
    mdp.check_values(v)?;
    let mut out = vec![0.0; mdp.n_states() * mdp.n_actions()];
    q_from_v_into(mdp, mdp.gamma(), v, &mut out);
    Ok(QFn {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        values: out,
    })
}

pub(crate) fn q_from_v_into(mdp: &TabularMdp, gamma: f64, v: &[f64], out: &mut [f64]) {
    let n_a = mdp.n_actions();
    for s in 0..mdp.n_states() {
        for a in 0..n_a {
            let ev: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
            out[s * n_a + a] = mdp.reward(s, a) + gamma * ev;
        }
    }
}

/// `V(s) = Σ_a π(a|s) [Q(s,a) + λ φ(π(a|s))]`, with `0·φ(0) = 0`.
pub fn v_from_q_policy(reg: &Regularizer, lambda: f64, q: &QFn, policy: &Policy) -> Result<ValueFn> {
    if q.n_states != policy.n_states || q.n_actions != policy.n_actions {
        return Err(MdpError::Shape {
            expected: format!("{}x{}", q.n_states, q.n_actions),
            got: format!("{}x{}", policy.n_states, policy.n_actions),
        });
    }
    Ok(q.rows()
        .zip(policy.rows())
        .map(|(qr, pr)| crate::projection::direct_value(reg, qr, lambda, pr))
        .collect())
}

/// `Σ_a π(a) [r(a) + λ φ(π(a))]` for one state.
pub(crate) fn regularized_reward(reg: &Regularizer, lambda: f64, rewards: &[f64], probs: &[f64]) -> f64 {
    crate::projection::direct_value(reg, rewards, lambda, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn two_state() -> MdpParts {
        MdpParts {
            n_states: 2,
            n_actions: 2,
            gamma: 0.9,
            reward: vec![1.0, 0.0, 0.5, 0.2],
            transition: vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.3, 0.7],
            initial: vec![1.0, 0.0],
        }
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert!(two_state().validate().is_empty());
        let mdp = TabularMdp::try_from(two_state()).unwrap();
        assert_eq!(mdp.r_max(), 1.0);
        assert_eq!(mdp.transition_row(1, 1), &[0.3, 0.7]);
    }

    #[test]
    fn validate_names_bad_row() {
        let mut p = two_state();
        p.transition[2] = 0.0;
        p.transition[3] = 0.9;
        let v = p.validate();
        assert_eq!(
            v,
            vec![Violation::TransitionRow {
                state: 0,
                action: 1,
                sum: 0.9
            }]
        );
    }

    #[test]
    fn validate_rejects_discount_one() {
        let mut p = two_state();
        p.gamma = 1.0;
        let v = p.validate();
        assert_eq!(v, vec![Violation::Discount(1.0)]);
        assert!(v[0].to_string().contains("discount out of range"));
        assert!(TabularMdp::try_from(p).is_err());
    }

    #[test]
    fn validate_rejects_bad_shapes_and_rewards() {
        let mut p = two_state();
        p.reward.pop();
        assert!(matches!(p.validate()[0], Violation::Shape(_)));
        let mut p = two_state();
        p.reward[1] = -0.5;
        assert!(matches!(p.validate()[0], Violation::Reward { state: 0, action: 1, .. }));
        let mut p = two_state();
        p.initial = vec![0.5, 0.4];
        assert!(matches!(p.validate()[0], Violation::Initial(_)));
    }

    fn self_loop(reward: Vec<f64>, gamma: f64) -> TabularMdp {
        let n_a = reward.len();
        TabularMdp::try_from(MdpParts {
            n_states: 1,
            n_actions: n_a,
            gamma,
            reward,
            transition: vec![1.0; n_a],
            initial: vec![1.0],
        })
        .unwrap()
    }

    #[test]
    fn q_from_v_examples() {
        let mdp = TabularMdp::try_from(two_state()).unwrap();
        assert_eq!(q_from_v(&mdp, &[0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.5, 0.2]);
        let loop1 = self_loop(vec![1.0], 0.5);
        assert_eq!(q_from_v(&loop1, &[2.0]).unwrap().as_slice(), &[2.0]);
        let loop0 = self_loop(vec![1.0, 0.3], 0.0);
        assert_eq!(q_from_v(&loop0, &[7.0]).unwrap().as_slice(), &[1.0, 0.3]);
        assert!(q_from_v(&mdp, &[0.0]).is_err());
    }

    #[test]
    fn v_from_q_policy_examples() {
        let s = Regularizer::shannon();
        let q = QFn::new(2, 2, vec![1.0, 3.0, 2.0, 0.5]).unwrap();
        let det = Policy::deterministic(2, &[1, 0]);
        assert_eq!(v_from_q_policy(&s, 1.0, &q, &det).unwrap(), vec![3.0, 2.0]);
        let eq = QFn::new(1, 4, vec![0.7; 4]).unwrap();
        let v = v_from_q_policy(&s, 0.5, &eq, &Policy::uniform(1, 4)).unwrap();
        assert_abs_diff_eq!(v[0], 0.7 + 0.5 * 4f64.ln(), epsilon = 1e-14);
        let v = v_from_q_policy(&s, 0.0, &q, &Policy::uniform(2, 2)).unwrap();
        assert_eq!(v, vec![2.0, 1.25]);
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(Policy::new(1, 2, vec![1.5, -0.5]).is_err());
        assert!(Policy::new(1, 2, vec![0.5]).is_err());
        assert!(Policy::new(1, 2, vec![0.25, 0.75]).is_ok());
    }
}

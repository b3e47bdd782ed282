//! Tabular solvers for regularized Markov decision processes.
//!
//! The crate is organised bottom-up:
//!
//! * [`regularizer`]: the functions `φ` and their derived quantities,
//! * [`projection`]: the per-state regularized greedy step,
//! * [`mdp`]: tabular MDPs, generators and policy evaluation,
//! * [`solver`]: regularized value iteration and policy iteration,
//! * [`analysis`]: the experiment metrics and operator checks,
//! * [`io`]: serialization of MDPs and solutions.

pub mod analysis;
pub mod io;
pub mod mdp;
pub mod projection;
pub mod regularizer;
mod root;
pub mod solver;

pub use regularizer::{Regularizer, RegularizerError, RegularizerKind};

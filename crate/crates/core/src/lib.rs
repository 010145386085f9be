//! Transmission policies that minimize the time-averaged Version Age of
//! Information (VAoI) of an energy-harvesting sensor updating a monitor over
//! an unreliable channel.
//!
//! Three regimes are covered:
//! - known model: [`solver::rvia_solve`] (relative value iteration), with
//!   [`chain::exact_policy_evaluation`] as an exact evaluator;
//! - known structure, unknown `p_g`/`p_s`: [`estimation::run_estimation_based_mdp`];
//! - unknown model: [`qlearning::run_q_learning`].
//!
//! [`sim`] provides the ground-truth environment, Monte Carlo evaluation and
//! parameter sweeps; [`config`] and [`commands`] back the `vaoi` binary.

pub mod chain;
pub mod commands;
pub mod config;
pub mod error;
pub mod estimation;
pub mod model;
pub mod policy;
pub mod qlearning;
pub mod sim;
pub mod solver;

pub use chain::{evaluate_chain, exact_policy_evaluation, ChainEvaluation};
pub use error::{Error, Result};
pub use model::{Action, GridShape, State, SystemParams};
pub use policy::{greedy_policy, threshold_profile, Policy};
pub use solver::{rvia_solve, Kernel, RviaSettings, SolveResult};

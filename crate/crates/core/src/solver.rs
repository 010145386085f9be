//! Average-cost dynamic programming for the fully known model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{transition_dist, Action, GridShape, State, SystemParams};
use crate::policy::Policy;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Relative tolerance under which two Q-values count as tied. Ties go to idle.
const TIE_EPS: f64 = 1e-12;

/// The transition kernel and expected costs, materialized for every
/// (state, action) pair.
///
/// Transition rows are stored dense (`n x n` per action) and the Bellman
/// backup sums over every successor, so one backup costs `O(|S|^2 |A|)`.
/// A sparse view is kept for chain analysis.
#[derive(Debug, Clone)]
pub struct Kernel {
    params: SystemParams,
    shape: GridShape,
    cost: [Vec<f64>; 2],
    dense: [Vec<f64>; 2],
    sparse: [Vec<Vec<(usize, f64)>>; 2],
}

impl Kernel {
    pub fn new(params: &SystemParams) -> Result<Self> {
        params.validate()?;
        let shape = params.shape();
        let n = shape.num_states();
        let mut cost = [vec![0.0; n], vec![f64::INFINITY; n]];
        let mut dense = [vec![0.0; n * n], vec![0.0; n * n]];
        let mut sparse = [vec![Vec::new(); n], vec![Vec::new(); n]];
        for (i, s) in shape.states().enumerate() {
            for &a in crate::model::feasible_actions(s) {
                let dist = transition_dist(params, s, a)?;
                let ai = a.as_index();
                cost[ai][i] = dist.expected_delta();
                for &(next, p) in dist.entries() {
                    let j = shape.index(next);
                    dense[ai][i * n + j] += p;
                    sparse[ai][i].push((j, p));
                }
            }
        }
        Ok(Self {
            params: *params,
            shape,
            cost,
            dense,
            sparse,
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_states(&self) -> usize {
        self.shape.num_states()
    }

    /// Expected one-step cost; `+inf` for transmit on an empty battery.
    pub fn cost(&self, index: usize, action: Action) -> f64 {
        self.cost[action.as_index()][index]
    }

    pub fn row(&self, index: usize, action: Action) -> &[f64] {
        let n = self.num_states();
        &self.dense[action.as_index()][index * n..(index + 1) * n]
    }

    pub fn successors(&self, index: usize, action: Action) -> &[(usize, f64)] {
        &self.sparse[action.as_index()][index]
    }

    /// `Q(s, a) = C(s, a) + sum_s' P(s'|s,a) v(s')` for both actions; the
    /// infeasible entry is `+inf`.
    pub fn q_values(&self, values: &[f64]) -> Vec<[f64; 2]> {
        let n = self.num_states();
        assert_eq!(values.len(), n, "value vector length");
        (0..n)
            .map(|i| {
                let mut q = [f64::INFINITY; 2];
                for a in Action::ALL {
                    let c = self.cost(i, a);
                    if c.is_finite() {
                        let future: f64 = self.row(i, a).iter().zip(values).map(|(p, v)| p * v).sum();
                        q[a.as_index()] = c + future;
                    }
                }
                q
            })
            .collect()
    }
}

/// Argmin over a Q pair with ties (within a relative epsilon) resolved to idle.
pub fn greedy_action(q: [f64; 2]) -> Action {
    let (idle, tx) = (q[0], q[1]);
    if tx.is_finite() && tx < idle - TIE_EPS * (1.0 + idle.abs()) {
        Action::Transmit
    } else {
        Action::Idle
    }
}

/// Relative values, one per canonical state index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn span(&self) -> f64 {
        span(&self.0)
    }
}

fn span(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// One application of the Bellman operator with its greedy policy.
pub fn bellman_backup(kernel: &Kernel, v: &ValueFunction) -> (ValueFunction, Policy) {
    let q = kernel.q_values(&v.0);
    let shape = kernel.shape();
    let mut values = Vec::with_capacity(q.len());
    let mut actions = Vec::with_capacity(q.len());
    for pair in &q {
        let a = greedy_action(*pair);
        values.push(pair[a.as_index()]);
        actions.push(a);
    }
    let policy = Policy::new(shape, actions).expect("backup never selects an infeasible action");
    (ValueFunction(values), policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RviaSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub ref_state: State,
}

impl Default for RviaSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            ref_state: State::new(0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub policy: Policy,
    /// Optimal long-run average VAoI.
    pub avg_cost: f64,
    pub value: ValueFunction,
    pub iterations: usize,
    pub span_residual: f64,
}

/// Relative value iteration: `h <- T(h) - T(h)(ref)` until the span of
/// successive differences drops below `tol`. The average cost is the
/// offset subtracted at the reference state on the last iteration.
pub fn rvia_solve_kernel(kernel: &Kernel, settings: &RviaSettings) -> Result<SolveResult> {
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidParameter {
            field: "tol",
            reason: format!("tolerance must be positive, got {}", settings.tol),
        });
    }
    let ref_index = kernel.shape().checked_index(settings.ref_state)?;
    let n = kernel.num_states();
    let mut h = ValueFunction::zeros(n);
    let mut residual = f64::INFINITY;
    for iteration in 1..=settings.max_iter {
        let (mut next, policy) = bellman_backup(kernel, &h);
        let offset = next.0[ref_index];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (x, old) in next.0.iter_mut().zip(&h.0) {
            *x -= offset;
            let d = *x - old;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        residual = hi - lo;
        h = next;
        if residual < settings.tol {
            return Ok(SolveResult {
                policy,
                avg_cost: offset,
                value: h,
                iterations: iteration,
                span_residual: residual,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: settings.max_iter,
        span_residual: residual,
    })
}

pub fn rvia_solve(params: &SystemParams, tol: f64, max_iter: usize, ref_state: State) -> Result<SolveResult> {
    let kernel = Kernel::new(params)?;
    rvia_solve_kernel(
        &kernel,
        &RviaSettings {
            tol,
            max_iter,
            ref_state,
        },
    )
}

/// Solves with the default tolerance, iteration cap and reference state.
pub fn solve_optimal(params: &SystemParams) -> Result<SolveResult> {
    rvia_solve_kernel(&Kernel::new(params)?, &RviaSettings::default())
}

/// Optimal action values `Q*(s, a)` implied by a converged solution.
pub fn optimal_q_values(kernel: &Kernel, solved: &SolveResult) -> Vec<[f64; 2]> {
    kernel.q_values(&solved.value.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::greedy_policy;

    fn baseline() -> SystemParams {
        SystemParams::new(0.3, 0.8, 0.1, 10, 10).unwrap()
    }

    #[test]
    fn backup_from_zero() {
        let k = Kernel::new(&baseline()).unwrap();
        let q = k.q_values(&vec![0.0; k.num_states()]);
        let i = k.shape().index(State::new(2, 3));
        assert!((q[i][0] - 2.3).abs() < 1e-12);
        assert!((q[i][1] - 0.70).abs() < 1e-12);
        let (_, pol) = bellman_backup(&k, &ValueFunction::zeros(k.num_states()));
        assert_eq!(pol.action(State::new(2, 3)), Action::Transmit);
        for d in 0..=10 {
            assert_eq!(pol.action(State::new(d, 0)), Action::Idle);
        }
    }

    #[test]
    fn backup_argmin_ignores_constant_shift() {
        let k = Kernel::new(&baseline()).unwrap();
        let n = k.num_states();
        let (_, base) = bellman_backup(&k, &ValueFunction::zeros(n));
        for c in [-7.5, 0.25, 1e3] {
            let (_, shifted) = bellman_backup(&k, &ValueFunction(vec![c; n]));
            assert_eq!(base, shifted, "shift {c}");
        }
    }

    #[test]
    fn rvia_deterministic_world_achieves_generation_rate() {
        for p_g in [0.0, 0.3, 0.75, 1.0] {
            let params = SystemParams::new(p_g, 1.0, 1.0, 3, 5).unwrap();
            let solved = solve_optimal(&params).unwrap();
            assert!((solved.avg_cost - p_g).abs() < 1e-8, "p_g={p_g}: {}", solved.avg_cost);
        }
    }

    #[test]
    fn rvia_rejects_bad_settings() {
        assert!(rvia_solve(&baseline(), 0.0, 10, State::new(0, 0)).is_err());
        assert!(rvia_solve(&baseline(), 1e-9, 10, State::new(11, 0)).is_err());
        match rvia_solve(&baseline(), 1e-9, 3, State::new(0, 0)) {
            Err(Error::NotConverged { iterations, span_residual }) => {
                assert_eq!(iterations, 3);
                assert!(span_residual > 1e-9);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn solution_is_feasible_and_bounded() {
        let solved = solve_optimal(&baseline()).unwrap();
        assert!(solved.policy.is_feasible());
        assert!(solved.avg_cost >= 0.0 && solved.avg_cost <= 10.0);
        assert!(solved.span_residual < DEFAULT_TOLERANCE);
        assert_ne!(solved.policy, greedy_policy(baseline().shape()));
    }
}
